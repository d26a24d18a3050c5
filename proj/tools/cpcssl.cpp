#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cpcssl/experiment.hpp"
#include "cpcssl/idx.hpp"
#include "cpcssl/suites.hpp"

namespace fs = std::filesystem;
using namespace cpcssl;

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "experiment config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "override section.key=value; repeatable")
      ->expected(1)
      ->allow_extra_args(false)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  cmd->add_option("--seed", o.seed, "root seed (train.seed)");
  cmd->add_option("--mode", o.mode, "cpc | ccpc | supervised-only");
}

ExperimentConfig load_config(const CommonOptions& o) {
  std::vector<std::string> overrides = o.sets;
  if (o.seed) overrides.push_back("train.seed=" + std::to_string(*o.seed));
  if (o.mode) overrides.push_back("train.mode=" + *o.mode);
  return parse_config(o.config, overrides);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

int cmd_train(const CommonOptions& o, const std::string& out, const std::optional<std::string>& resume) {
  const ExperimentConfig config = load_config(o);
  const ExperimentData data = load_experiment_data(config);
  std::cout << effective_config(resolved(config, data.split)) << "\n";
  std::optional<fs::path> from;
  if (resume) from = fs::path(*resume);
  run_training(config, data, RunPaths{out}, from, std::cout);
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::optional<std::string>& checkpoint, const std::string& out) {
  ExperimentConfig config = load_config(o);
  std::optional<Checkpoint> ckpt;
  if (checkpoint) {
    ckpt = load_checkpoint(*checkpoint);
    if (o.mode && config.train.mode != ckpt->mode) {
      throw Error(ErrorCode::incompatible, "checkpoint holds a " + std::string(to_string(ckpt->mode)) +
                                               " model, --mode asks for " + std::string(to_string(config.train.mode)));
    }
    config.train.mode = ckpt->mode;
  }
  const ExperimentData data = load_experiment_data(config);
  SslModel model = build_experiment_model(config, config.train.mode);
  if (ckpt) {
    if (ckpt->params.size() != model.params.size()) {
      throw Error(ErrorCode::incompatible, "checkpoint parameters do not match the configured model");
    }
    for (ParamId id : model.params.ids()) {
      if (ckpt->params.name(id) != model.params.name(id) || ckpt->params[id].shape() != model.params[id].shape()) {
        throw Error(ErrorCode::incompatible, "checkpoint parameter " + ckpt->params.name(id) + " " +
                                                 to_string(ckpt->params[id].shape()) + " does not fit model parameter " +
                                                 model.params.name(id) + " " + to_string(model.params[id].shape()));
      }
    }
    model.params = ckpt->params;
  }
  const bool held_out = !data.test.empty();
  const auto& ks = config.train.topk;
  const auto acc = held_out ? evaluate_topk(model, data.test, ks)
                            : evaluate_topk(model, data.split.unlabeled, ks, &data.split.hidden_labels);
  const std::size_t n = held_out ? data.test.size() : data.split.unlabeled.size();

  std::cout << "k   top-k acc\n";
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < ks.size(); ++i) {
    std::cout << std::left << std::setw(4) << ks[i] << std::fixed << std::setprecision(4) << acc[i] << "\n";
    rows.push_back({{"k", ks[i]}, {"accuracy", acc[i]}});
  }
  write_json(out, {{"checkpoint", checkpoint ? *checkpoint : ""},
                   {"mode", to_string(config.train.mode)},
                   {"epoch", ckpt ? ckpt->epoch : 0},
                   {"eval_set", held_out ? "test" : "unlabeled"},
                   {"examples", n},
                   {"topk", rows}});
  return 0;
}

int cmd_verify(const std::string& suite) {
  std::size_t failed = 0, total = 0;
  for (const auto& r : run_suites(suite)) {
    for (const auto& c : r.checks) {
      std::cout << (c.passed ? "PASS " : "FAIL ") << r.suite << ": " << c.name << ": " << c.detail << "\n";
      ++total;
      if (!c.passed) ++failed;
    }
  }
  if (failed > 0) {
    throw Error(ErrorCode::verification, std::to_string(failed) + " of " + std::to_string(total) + " checks failed");
  }
  return 0;
}

const std::vector<double> kSigmaGrid{0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0};

int cmd_synth(const std::string& spec_path, const std::string& out, Index count, Index test_count,
              std::uint64_t seed) {
  SyntheticSpec spec;
  {
    std::ifstream in(spec_path);
    if (!in) throw Error(ErrorCode::io, "cannot read " + spec_path);
    try {
      spec = nlohmann::json::parse(in).get<SyntheticSpec>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config, spec_path + ": " + e.what());
    }
  }
  spec.validate();
  if (count < 1 || test_count < 0) throw Error(ErrorCode::invalid_argument, "--count must be >= 1, --test-count >= 0");
  const fs::path dir(out);
  fs::create_directories(dir);
  const RngState root = RngState{seed, 0}.fork("synth");
  RngState train_rng = root.fork("train");
  const Dataset train = make_synthetic_dataset(spec, count, train_rng);
  save_idx_sequence_dataset(train, dir / "train_sequences.idx", dir / "train_labels.idx");
  if (test_count > 0) {
    RngState test_rng = root.fork("test");
    const Dataset test = make_synthetic_dataset(spec, test_count, test_rng);
    save_idx_sequence_dataset(test, dir / "test_sequences.idx", dir / "test_labels.idx");
  }

  std::vector<int> histogram(static_cast<std::size_t>(spec.num_classes), 0);
  for (const auto& ex : train.examples) ++histogram[static_cast<std::size_t>(*ex.label)];
  auto mi_entry = [](const SyntheticSpec& s) {
    return nlohmann::json{{"noise_sigma", s.noise_sigma},
                          {"mi_1_1", synthetic_mutual_information(s, 1, 1)},
                          {"mi_2_1", synthetic_mutual_information(s, 2, 1)}};
  };
  nlohmann::json grid = nlohmann::json::array();
  for (double sigma : kSigmaGrid) {
    SyntheticSpec s = spec;
    s.noise_sigma = sigma;
    grid.push_back(mi_entry(s));
  }
  write_json(dir / "spec.json", spec);
  write_json(dir / "truth.json", {{"spec", spec},
                                  {"seed", seed},
                                  {"count", count},
                                  {"test_count", test_count},
                                  {"class_histogram", histogram},
                                  {"mutual_information", mi_entry(spec)},
                                  {"mutual_information_grid", grid},
                                  {"note", "mi_a_b = I(a patches; b disjoint patches | y) in nats"}});
  std::cout << "wrote " << count << " train and " << test_count << " test sequences to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised contrastive predictive coding"};
  app.require_subcommand(1);

  CommonOptions train_opts, eval_opts;
  std::string train_out = "run";
  std::optional<std::string> resume;
  auto* train = app.add_subcommand("train", "train a model and write metrics and checkpoints");
  add_common(train, train_opts);
  train->add_option("--out", train_out, "output directory");
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  std::optional<std::string> checkpoint;
  std::string eval_out = "eval.json";
  auto* eval = app.add_subcommand("eval", "top-k accuracy of a checkpoint");
  add_common(eval, eval_opts);
  eval->add_option("checkpoint", checkpoint, "checkpoint file; omitted evaluates a fresh model")
      ->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "JSON summary path");

  std::string suite = "all";
  auto* verify = app.add_subcommand("verify", "run a property suite");
  verify->add_option("suite", suite, "gradients | chance | bounds | gumbel | enumeration | entropy | complexity | all");

  std::string spec_path, synth_out = "synthetic";
  Index count = 1000, test_count = 0;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "write a synthetic sequence dataset and its MI truth");
  synth->add_option("spec", spec_path, "SyntheticSpec JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--count", count, "training sequences");
  synth->add_option("--test-count", test_count, "held-out sequences");
  synth->add_option("--seed", synth_seed, "root seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*train) return cmd_train(train_opts, train_out, resume);
    if (*eval) return cmd_eval(eval_opts, checkpoint, eval_out);
    if (*verify) return cmd_verify(suite);
    if (*synth) return cmd_synth(spec_path, synth_out, count, test_count, synth_seed);
  } catch (const Error& e) {
    std::cerr << "error[" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
