#include "cpcssl/experiment.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

#include "cpcssl/idx.hpp"

namespace cpcssl {

namespace {

Dataset load_text_dataset(const std::string& path, const ExperimentConfig& config, const Vocabulary* vocab,
                          std::optional<Vocabulary>& built, std::int64_t first_id) {
  const auto docs = read_text_documents(path, true);
  if (!vocab) {
    std::vector<std::vector<std::string>> tokens;
    for (const auto& d : docs) {
      std::vector<std::string> all;
      for (const auto& s : d.sentences) {
        auto t = tokenize(s);
        all.insert(all.end(), t.begin(), t.end());
      }
      tokens.push_back(std::move(all));
    }
    built = Vocabulary::build(tokens, config.model.text.vocab_size);
    vocab = &*built;
  }
  Dataset ds;
  ds.num_classes = config.model.num_classes;
  const Index min_sentences = config.model.cpc.context_steps + config.model.cpc.prediction_steps;
  std::int64_t id = first_id;
  for (const auto& d : docs) {
    if (*d.label < 0 || *d.label >= ds.num_classes) {
      throw Error(ErrorCode::format, path + ": label " + std::to_string(*d.label) + " outside [0, " +
                                         std::to_string(ds.num_classes) + ")");
    }
    Example ex;
    ex.id = id;
    ex.label = d.label;
    ex.sequences.push_back(
        build_text_sequences(d.sentences, d.label, *vocab, config.model.text.sentence_length, min_sentences, id));
    ds.examples.push_back(std::move(ex));
    ++id;
  }
  return ds;
}

void truncate_metrics(const std::filesystem::path& path, Index epochs) {
  std::ifstream in(path);
  if (!in) return;
  std::string kept;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.at("epoch").get<Index>() <= epochs) kept += line + "\n";
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kept;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << text;
}

}  // namespace

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  const auto& d = config.data;
  const RngState rng = RngState{config.train.seed, 0}.fork("data");
  ExperimentData out;
  switch (d.format) {
    case DataFormat::synthetic: {
      RngState train_rng = rng.fork("train");
      RngState test_rng = rng.fork("test");
      out.train = make_synthetic_dataset(d.synthetic, d.train_count, train_rng);
      if (d.test_count > 0) out.test = make_synthetic_dataset(d.synthetic, d.test_count, test_rng);
      break;
    }
    case DataFormat::idx_sequences:
      out.train = load_idx_sequence_dataset(d.train_data, d.train_labels, d.synthetic.patch_height,
                                            d.synthetic.patch_width, config.model.num_classes);
      if (!d.test_data.empty()) {
        out.test = load_idx_sequence_dataset(d.test_data, d.test_labels, d.synthetic.patch_height,
                                             d.synthetic.patch_width, config.model.num_classes);
      }
      break;
    case DataFormat::idx_images:
      out.train = load_idx_image_dataset(d.train_data, d.train_labels, d.grid, config.model.num_classes);
      if (!d.test_data.empty()) {
        out.test = load_idx_image_dataset(d.test_data, d.test_labels, d.grid, config.model.num_classes);
      }
      break;
    case DataFormat::text:
      out.train = load_text_dataset(d.train_data, config, nullptr, out.vocab, 0);
      if (!d.test_data.empty()) {
        std::optional<Vocabulary> unused;
        out.test = load_text_dataset(d.test_data, config, &*out.vocab, unused,
                                     static_cast<std::int64_t>(out.train.size()));
      }
      break;
  }
  if (out.train.empty()) throw Error(ErrorCode::invalid_argument, "training set is empty");
  if (config.train.mode != Mode::supervised_only) {
    for (const auto& ex : out.train.examples) {
      for (const auto& s : ex.sequences) config.model.cpc.check_sequence_length(s.length());
    }
  }

  if (!d.split_manifest.empty()) {
    out.split = split_from_ids(out.train, read_split_manifest(d.split_manifest));
  } else if (d.labeled_fraction >= 1.0) {
    out.split = split_from_ids(out.train, labeled_ids(Split{out.train, {}, {}}));
  } else {
    RngState split_rng = rng.fork("split");
    out.split = split_labeled(out.train, d.labeled_fraction, split_rng);
  }
  return out;
}

nlohmann::json split_manifest(const Split& split, double fraction, std::uint64_t seed) {
  return {{"labeled_fraction", fraction},
          {"seed", seed},
          {"labeled", split.labeled.size()},
          {"unlabeled", split.unlabeled.size()},
          {"labeled_ids", labeled_ids(split)}};
}

std::vector<std::int64_t> read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read split manifest " + path.string());
  try {
    return nlohmann::json::parse(in).at("labeled_ids").get<std::vector<std::int64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::format, "split manifest " + path.string() + ": " + e.what());
  }
}

ExperimentConfig resolved(const ExperimentConfig& config, const Split& split) {
  ExperimentConfig out = config;
  if (!out.train.alpha) out.train.alpha = default_alpha(split);
  return out;
}

SslModel build_experiment_model(const ExperimentConfig& config, Mode mode) {
  RngState rng = RngState{config.train.seed, 0}.fork("model");
  return build_model(config.model, mode, rng);
}

void run_training(const ExperimentConfig& config, const ExperimentData& data, const RunPaths& paths,
                  const std::optional<std::filesystem::path>& resume, std::ostream& log) {
  const ExperimentConfig eff = resolved(config, data.split);
  std::filesystem::create_directories(paths.dir);
  write_text(paths.config(), effective_config(eff));
  write_text(paths.split(), split_manifest(data.split, config.data.labeled_fraction, config.train.seed).dump(2) + "\n");
  log << "# labelled " << data.split.labeled.size() << ", unlabelled " << data.split.unlabeled.size()
      << ", rho " << (data.split.labeled.empty() ? 0.0 : data.split.rho()) << ", alpha " << *eff.train.alpha << "\n";

  Trainer trainer(build_experiment_model(eff, eff.train.mode), data.split, data.test.empty() ? nullptr : &data.test,
                  eff.train);
  if (resume) {
    const Checkpoint ckpt = load_checkpoint(*resume);
    restore_trainer(trainer, ckpt);
    truncate_metrics(paths.metrics(), ckpt.epoch);
    log << "# resumed at epoch " << ckpt.epoch << "\n";
  } else {
    std::ofstream(paths.metrics(), std::ios::trunc);
  }
  std::ofstream metrics(paths.metrics(), std::ios::app);
  if (!metrics) throw Error(ErrorCode::io, "cannot write " + paths.metrics().string());
  bool saved = false;
  while (trainer.epoch() < eff.train.epochs) {
    const EpochMetrics m = trainer.run_epoch();
    const std::string line = to_json(m).dump();
    metrics << line << "\n";
    metrics.flush();
    log << line << "\n";
    const bool last = trainer.epoch() == eff.train.epochs;
    if (last || (config.checkpoint_every > 0 && trainer.epoch() % config.checkpoint_every == 0)) {
      save_checkpoint(paths.checkpoint(), make_checkpoint(trainer));
      saved = last;
    }
  }
  if (!saved) save_checkpoint(paths.checkpoint(), make_checkpoint(trainer));
}

}  // namespace cpcssl
