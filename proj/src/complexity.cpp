#include "cpcssl/complexity.hpp"

#include <cmath>

#include "cpcssl/mac_counter.hpp"
#include "cpcssl/ops.hpp"

namespace cpcssl {

using namespace ad;

namespace {

using u64 = std::uint64_t;

u64 to_u64(Index v) { return static_cast<u64>(v); }

Tensor random_patch(const SslModel& m, RngState& rng) {
  if (m.encoder.kind == EncoderKind::image) return rng.normal_tensor(m.encoder.patch_shape);
  const Index vocab = m.params[m.encoder.embedding].dim(0);
  Tensor t(m.encoder.patch_shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<double>(rng.uniform_index(vocab));
  return t;
}

SequenceSample random_sequence(const SslModel& m, Index length, RngState& rng) {
  SequenceSample s;
  for (Index i = 0; i < length; ++i) s.patches.push_back(random_patch(m, rng));
  return s;
}

// One sequence with every candidate encoded on its own.
void per_candidate_forward(const SslModel& m, RngState& rng) {
  Tape tape;
  Graph g(tape, m.params);
  const CpcConfig& cpc = m.cpc;
  std::vector<Var> ctx_rows;
  for (Index i = 0; i < cpc.context_steps; ++i) ctx_rows.push_back(encode_patch(g, m.encoder, random_patch(m, rng)));
  const Var z_ctx = stack_rows(ctx_rows);
  const ContextDistribution dist = aggregate_context(g, m.aggregator, z_ctx, cpc.context_steps);
  const Var c = sample_context(dist, rng);
  for (Index k = 0; k < cpc.prediction_steps; ++k) {
    std::vector<Var> cands;
    for (Index n = 0; n < cpc.contrastive_size; ++n) cands.push_back(encode_patch(g, m.encoder, random_patch(m, rng)));
    info_nce_step_loss(c, stack_rows(cands), 0, g(m.predictors.weights[static_cast<std::size_t>(k)]));
  }
  classify(g, m.classifier, pool_features(z_ctx));
}

void test_forward(const SslModel& m, const std::vector<SequenceSample>& sequences, bool with_context) {
  Tape tape;
  Graph g(tape, m.params);
  std::vector<Var> pooled;
  for (const auto& s : sequences) {
    const Var z = encode_sequence(g, m.encoder, s);
    if (with_context) {
      std::vector<Var> rows;
      for (Index i = 0; i < m.cpc.context_steps; ++i) rows.push_back(row(z, i));
      aggregate_context(g, m.aggregator, stack_rows(rows), m.cpc.context_steps);
    }
    pooled.push_back(pool_features(z));
  }
  Var mean = pooled[0];
  for (std::size_t i = 1; i < pooled.size(); ++i) mean = mean + pooled[i];
  classify(g, m.classifier, mean * (1.0 / static_cast<double>(pooled.size())));
}

}  // namespace

double ComplexityReport::relative_error(u64 measured, u64 predicted) {
  if (predicted == 0) return measured == 0 ? 0.0 : INFINITY;
  return std::abs(static_cast<double>(measured) - static_cast<double>(predicted)) / static_cast<double>(predicted);
}

u64 encoder_macs(const ModelConfig& config) {
  u64 total = 0;
  if (config.encoder == EncoderKind::image) {
    const auto& spec = config.image;
    const auto sides = spec.sides();
    Index channels = spec.channels;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const auto& layer = spec.layers[i];
      total += to_u64(layer.filters * channels * layer.kernel * layer.kernel * sides[i] * sides[i]);
      channels = layer.filters;
    }
    return total + to_u64(config.cpc.latent_dim * spec.flat_size());
  }
  const auto& spec = config.text;
  for (Index w : spec.widths) total += to_u64(spec.filters * spec.embed_dim * w * (spec.sentence_length - w + 1));
  return total;
}

u64 context_macs(const CpcConfig& cpc, Index latent_dim, Index condition_dim) {
  const Index D = cpc.context_dim;
  return to_u64(cpc.context_steps * 3 * D * (latent_dim + D) + 2 * D * (D + condition_dim));
}

u64 aggregator_macs(const CpcConfig& cpc, Index latent_dim, Index condition_dim) {
  return context_macs(cpc, latent_dim, condition_dim) +
         to_u64(cpc.prediction_steps * (latent_dim * cpc.context_dim + cpc.contrastive_size * latent_dim));
}

u64 classifier_macs(Index latent_dim, Index num_classes) { return to_u64(latent_dim * num_classes); }

u64 train_cost(Index batch_size, Index contrastive_size, Index prediction_steps, Index context_steps, u64 c_enc,
               u64 c_ag, u64 c_cls) {
  const u64 M = to_u64(batch_size);
  return M * to_u64(contrastive_size * prediction_steps + context_steps) * c_enc + M * c_ag + M * c_cls;
}

ComplexityReport complexity_report(const ModelConfig& config, const PatchGridSpec& grid, Index batch_size,
                                   RngState rng) {
  if (batch_size < 1) throw Error(ErrorCode::invalid_argument, "batch size must be positive");
  RngState init_ssl = rng.fork("cpc");
  RngState init_sup = rng.fork("supervised");
  const SslModel ssl = build_model(config, Mode::cpc, init_ssl);
  const SslModel sup = build_model(config, Mode::supervised_only, init_sup);
  const CpcConfig& cpc = config.cpc;
  const Index Dz = ssl.encoder.latent_dim;

  ComplexityReport r;
  r.batch_size = batch_size;
  r.context_steps = cpc.context_steps;
  r.prediction_steps = cpc.prediction_steps;
  r.contrastive_size = cpc.contrastive_size;
  r.c_enc = encoder_macs(config);
  r.c_ctx = context_macs(cpc, Dz);
  r.c_ag = aggregator_macs(cpc, Dz);
  r.c_cls = classifier_macs(Dz, config.num_classes);
  const u64 M = to_u64(batch_size);
  r.predicted_train = train_cost(batch_size, cpc.contrastive_size, cpc.prediction_steps, cpc.context_steps, r.c_enc,
                                 r.c_ag, r.c_cls);

  RngState data = rng.fork("inputs");
  {
    MacTally tally;
    MacRecording rec(tally);
    for (Index i = 0; i < batch_size; ++i) per_candidate_forward(ssl, data);
    r.measured_train = tally.total();
    const u64 encodings = M * to_u64(cpc.contrastive_size * cpc.prediction_steps + cpc.context_steps);
    r.measured_c_enc = tally["enc"] / encodings;
    r.measured_c_ag = tally["ag"] / M;
    r.measured_c_cls = tally["cls"] / M;
  }
  {
    std::vector<Example> examples(static_cast<std::size_t>(batch_size));
    for (auto& ex : examples) ex.sequences.push_back(random_sequence(ssl, cpc.context_steps + cpc.prediction_steps, data));
    std::vector<const Example*> ptrs;
    for (const auto& ex : examples) ptrs.push_back(&ex);
    std::vector<int> labels(static_cast<std::size_t>(batch_size), 0);
    MacTally tally;
    MacRecording rec(tally);
    Tape tape;
    Graph g(tape, ssl.params);
    const EncodedBatch batch = encode_batch(g, ssl.encoder, ptrs);
    const BatchNoise noise = draw_batch_noise(batch, cpc, config.num_classes, data.fork("noise"));
    total_objective_cpc(g, ssl, batch, labels, 1.0, noise);
    r.measured_train_shared = tally.total();
  }

  std::vector<SequenceSample> sequences;
  if (config.encoder == EncoderKind::image) {
    grid.validate();
    if (grid.patch != config.image.patch) {
      throw Error(ErrorCode::invalid_argument, "grid patch " + std::to_string(grid.patch) +
                                                   " differs from encoder patch " + std::to_string(config.image.patch));
    }
    const Index G = grid.grid_side();
    if (G < cpc.context_steps) {
      throw Error(ErrorCode::invalid_argument, "grid columns shorter than the context length");
    }
    Tensor image = data.normal_tensor({config.image.channels, grid.image_size, grid.image_size});
    sequences = image_example(image, grid, std::nullopt, 0).sequences;
    r.overlap_factor = static_cast<double>(G * G * grid.patch * grid.patch) /
                       static_cast<double>(grid.image_size * grid.image_size);
  } else {
    sequences.push_back(random_sequence(ssl, cpc.context_steps + cpc.prediction_steps, data));
  }
  r.sequences = static_cast<Index>(sequences.size());
  r.patches = 0;
  for (const auto& s : sequences) r.patches += s.length();
  r.predicted_test = to_u64(r.patches) * r.c_enc + to_u64(r.sequences) * r.c_ctx + r.c_cls;
  r.predicted_supervised_test = to_u64(r.patches) * r.c_enc + r.c_cls;
  {
    MacTally tally;
    MacRecording rec(tally);
    test_forward(ssl, sequences, true);
    r.measured_test = tally.total();
  }
  {
    MacTally tally;
    MacRecording rec(tally);
    test_forward(sup, sequences, false);
    r.measured_supervised_test = tally.total();
  }
  return r;
}

nlohmann::json to_json(const ComplexityReport& r) {
  return {
      {"batch_size", r.batch_size},
      {"context_steps", r.context_steps},
      {"prediction_steps", r.prediction_steps},
      {"contrastive_size", r.contrastive_size},
      {"c_enc", r.c_enc},
      {"c_ag", r.c_ag},
      {"c_ctx", r.c_ctx},
      {"c_cls", r.c_cls},
      {"measured_c_enc", r.measured_c_enc},
      {"measured_c_ag", r.measured_c_ag},
      {"measured_c_cls", r.measured_c_cls},
      {"ag_to_enc", r.ag_to_enc()},
      {"train", {{"predicted", r.predicted_train}, {"measured", r.measured_train},
                 {"relative_error", r.train_error()}, {"measured_shared_encoding", r.measured_train_shared}}},
      {"test", {{"patches", r.patches}, {"sequences", r.sequences},
                {"predicted", r.predicted_test}, {"measured", r.measured_test},
                {"relative_error", r.test_error()}}},
      {"supervised_test", {{"predicted", r.predicted_supervised_test},
                           {"measured", r.measured_supervised_test},
                           {"relative_error", r.supervised_test_error()}}},
      {"test_ratio", r.test_ratio()},
      {"overlap_factor", r.overlap_factor},
      {"note", "both test paths encode the overlapping crops; one pass over the raw image would need " +
                   std::to_string(1.0 / r.overlap_factor) + " of that encoder work"},
  };
}

}  // namespace cpcssl
