#include "cpcssl/model.hpp"

#include <cmath>

#include "cpcssl/mac_counter.hpp"

namespace cpcssl {

using namespace ad;

std::vector<Index> ImageEncoderSpec::sides() const {
  std::vector<Index> out;
  Index side = patch;
  for (const auto& layer : layers) {
    if (layer.filters < 1 || layer.kernel < 1 || layer.stride < 1) {
      throw Error(ErrorCode::invalid_argument, "conv layer sizes must be positive");
    }
    if (layer.kernel > side) {
      throw Error(ErrorCode::invalid_argument, "conv kernel " + std::to_string(layer.kernel) +
                                                   " larger than its " + std::to_string(side) +
                                                   "-pixel input");
    }
    side = (side - layer.kernel) / layer.stride + 1;
    out.push_back(side);
  }
  return out;
}

Index ImageEncoderSpec::flat_size() const {
  if (layers.empty()) return channels * patch * patch;
  const Index side = sides().back();
  return layers.back().filters * side * side;
}

EncoderParams add_image_encoder(ParameterStore& store, const ImageEncoderSpec& spec,
                                Index latent_dim, RngState& rng) {
  EncoderParams enc;
  enc.kind = EncoderKind::image;
  enc.patch_shape = {spec.channels, spec.patch, spec.patch};
  enc.latent_dim = latent_dim;
  Index in_channels = spec.channels;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const Index fan_in = in_channels * l.kernel * l.kernel;
    const std::string name = "enc.conv" + std::to_string(i);
    EncoderParams::Conv conv;
    conv.kernels = store.add(name + ".kernels",
                             uniform_tensor({l.filters, in_channels, l.kernel, l.kernel},
                                            std::sqrt(6.0 / static_cast<double>(fan_in)), rng));
    conv.bias = store.add(name + ".bias", Tensor(Shape{l.filters}));
    conv.stride = l.stride;
    enc.convs.push_back(conv);
    in_channels = l.filters;
  }
  const Index flat = spec.flat_size();
  enc.projection = store.add("enc.proj", glorot_tensor({latent_dim, flat}, flat, latent_dim, rng));
  enc.projection_bias = store.add("enc.proj.bias", Tensor(Shape{latent_dim}));
  return enc;
}

EncoderParams add_text_encoder(ParameterStore& store, const TextEncoderSpec& spec, RngState& rng) {
  EncoderParams enc;
  enc.kind = EncoderKind::text;
  enc.patch_shape = {spec.sentence_length};
  enc.latent_dim = spec.latent_dim();
  enc.embedding = store.add("enc.embedding",
                            uniform_tensor({spec.vocab_size, spec.embed_dim}, 0.1, rng));
  for (Index w : spec.widths) {
    if (w > spec.sentence_length) {
      throw Error(ErrorCode::invalid_argument, "filter width " + std::to_string(w) +
                                                   " exceeds sentence length " +
                                                   std::to_string(spec.sentence_length));
    }
    const std::string name = "enc.width" + std::to_string(w);
    EncoderParams::Conv conv;
    conv.kernels = store.add(name + ".kernels",
                             uniform_tensor({spec.filters, spec.embed_dim, 1, w},
                                            std::sqrt(6.0 / static_cast<double>(spec.embed_dim * w)), rng));
    conv.bias = store.add(name + ".bias", Tensor(Shape{spec.filters}));
    enc.convs.push_back(conv);
  }
  return enc;
}

GaussianHead add_gaussian_head(ParameterStore& store, const std::string& prefix, Index input_dim,
                               Index context_dim, Index condition_dim, double log_var_bias,
                               RngState& rng) {
  const Index in = input_dim + condition_dim;
  GaussianHead head;
  head.condition_dim = condition_dim;
  head.mu_weight = store.add(prefix + ".mu", glorot_tensor({context_dim, in}, in, context_dim, rng));
  head.mu_bias = store.add(prefix + ".mu.bias", Tensor(Shape{context_dim}));
  head.log_var_weight =
      store.add(prefix + ".log_var", glorot_tensor({context_dim, in}, in, context_dim, rng));
  Tensor bias(Shape{context_dim});
  bias.vec().setConstant(log_var_bias);
  head.log_var_bias = store.add(prefix + ".log_var.bias", std::move(bias));
  return head;
}

AggregatorParams add_aggregator(ParameterStore& store, Index latent_dim, Index context_dim,
                                Index condition_dim, double log_var_bias, RngState& rng,
                                const std::string& prefix) {
  const Index in = latent_dim + context_dim;
  AggregatorParams agg;
  agg.context_dim = context_dim;
  auto gate = [&](const char* name) {
    return store.add(prefix + ".gru." + name, glorot_tensor({context_dim, in}, in, context_dim, rng));
  };
  auto bias = [&](const char* name) {
    return store.add(prefix + ".gru." + name + ".bias", Tensor(Shape{context_dim}));
  };
  agg.w_update = gate("update");
  agg.b_update = bias("update");
  agg.w_reset = gate("reset");
  agg.b_reset = bias("reset");
  agg.w_candidate = gate("candidate");
  agg.b_candidate = bias("candidate");
  agg.head = add_gaussian_head(store, prefix, context_dim, context_dim, condition_dim, log_var_bias, rng);
  return agg;
}

PredictorBank add_predictors(ParameterStore& store, Index steps, Index latent_dim,
                             Index context_dim, double scale, RngState& rng) {
  PredictorBank bank;
  const double bound = scale / std::sqrt(static_cast<double>(latent_dim * context_dim));
  for (Index k = 1; k <= steps; ++k) {
    bank.weights.push_back(store.add("pred.w" + std::to_string(k),
                                     uniform_tensor({latent_dim, context_dim}, bound, rng)));
  }
  return bank;
}

Var encode_patch(Graph& g, const EncoderParams& enc, const Tensor& patch) {
  if (patch.shape() != enc.patch_shape) {
    throw Error(ErrorCode::shape_mismatch, "patch of shape " + to_string(patch.shape()) +
                                               " for an encoder expecting " +
                                               to_string(enc.patch_shape));
  }
  MacComponent component("enc");
  if (enc.kind == EncoderKind::image) {
    Var h = g.constant(patch);
    for (const auto& conv : enc.convs) h = relu(conv2d(h, g(conv.kernels), g(conv.bias), conv.stride));
    h = reshape(h, {h.size()});
    return matvec(g(enc.projection), h) + g(enc.projection_bias);
  }
  const Index L = patch.size();
  std::vector<Index> ids(static_cast<std::size_t>(L));
  for (Index i = 0; i < L; ++i) ids[static_cast<std::size_t>(i)] = static_cast<Index>(patch[i]);
  const Var emb = embed(g(enc.embedding), ids);
  const Var rows = reshape(emb, {emb.shape()[0], 1, L});
  std::vector<Var> groups;
  for (const auto& conv : enc.convs) groups.push_back(max_positions(relu(conv2d(rows, g(conv.kernels), g(conv.bias), 1))));
  return concat(groups);
}

Var encode_sequence(Graph& g, const EncoderParams& enc, const SequenceSample& sample) {
  if (sample.patches.empty()) throw Error(ErrorCode::invalid_argument, "cannot encode an empty sequence");
  std::vector<Var> rows;
  rows.reserve(sample.patches.size());
  for (const Tensor& p : sample.patches) rows.push_back(encode_patch(g, enc, p));
  return stack_rows(rows);
}

Var aggregate_state(Graph& g, const AggregatorParams& agg, Var z_context) {
  if (z_context.value().rank() != 2) {
    throw Error(ErrorCode::shape_mismatch, "context must be a [t x D_z] matrix, got " +
                                               to_string(z_context.shape()));
  }
  MacComponent component("ag");
  const GruWeights w{g(agg.w_update), g(agg.b_update), g(agg.w_reset),
                     g(agg.b_reset),  g(agg.w_candidate), g(agg.b_candidate)};
  Var h = g.constant(Tensor(Shape{agg.context_dim}));
  for (Index i = 0; i < z_context.shape()[0]; ++i) h = gru_cell(h, row(z_context, i), w);
  return h;
}

ContextDistribution gaussian_context(Graph& g, const GaussianHead& head, Var state, Var condition) {
  MacComponent component("ag");
  if (head.condition_dim > 0) {
    if (!condition.valid() || condition.size() != head.condition_dim) {
      throw Error(ErrorCode::shape_mismatch, "context head expects a condition of size " +
                                                 std::to_string(head.condition_dim));
    }
    state = concat({state, condition});
  } else if (condition.valid()) {
    throw Error(ErrorCode::invalid_argument, "unconditional context head given a condition");
  }
  ContextDistribution dist;
  dist.mu = matvec(g(head.mu_weight), state) + g(head.mu_bias);
  dist.log_var = clamp(matvec(g(head.log_var_weight), state) + g(head.log_var_bias), kLogVarMin, kLogVarMax);
  return dist;
}

ContextDistribution aggregate_context(Graph& g, const AggregatorParams& agg, Var z_context,
                                      Index context_steps, Var condition) {
  if (z_context.value().rank() != 2 || z_context.shape()[0] != context_steps) {
    throw Error(ErrorCode::shape_mismatch, "expected " + std::to_string(context_steps) +
                                               " context rows, got shape " +
                                               to_string(z_context.shape()));
  }
  return gaussian_context(g, agg.head, aggregate_state(g, agg, z_context), condition);
}

Var sample_context(const ContextDistribution& dist, const Tensor& eps) {
  if (eps.size() != dist.mu.size()) {
    throw Error(ErrorCode::shape_mismatch, "noise of shape " + to_string(eps.shape()) +
                                               " for context of shape " + to_string(dist.mu.shape()));
  }
  const Var noise = dist.mu.tape()->constant(eps.reshaped(dist.mu.shape()));
  return dist.mu + mul(exp(0.5 * dist.log_var), noise);
}

Var sample_context(const ContextDistribution& dist, RngState& rng) {
  return sample_context(dist, rng.normal_tensor(dist.mu.shape()));
}

Var score(Var z, Var c, Var w) {
  if (w.value().rank() != 2 || w.shape()[0] != z.size() || w.shape()[1] != c.size()) {
    throw Error(ErrorCode::shape_mismatch, "score: W " + to_string(w.shape()) + " for z " +
                                               to_string(z.shape()) + " and c " + to_string(c.shape()));
  }
  MacComponent component("ag");
  return dot(z, matvec(w, c));
}

Var info_nce_step_loss(Var c, Var candidates, Index positive_index, Var w) {
  if (candidates.value().rank() != 2) {
    throw Error(ErrorCode::shape_mismatch, "candidates must be [N x D_z], got " +
                                               to_string(candidates.shape()));
  }
  const Index N = candidates.shape()[0];
  if (positive_index < 0 || positive_index >= N) {
    throw Error(ErrorCode::out_of_range, "positive index " + std::to_string(positive_index) +
                                             " outside a set of " + std::to_string(N));
  }
  MacComponent component("ag");
  const Var scores = matvec(candidates, matvec(w, c));
  return -pick(log_softmax(scores), positive_index);
}

Var pool_features(Var z_all) {
  if (z_all.value().rank() != 2 || z_all.shape()[0] < 1) {
    throw Error(ErrorCode::invalid_argument, "pooling needs a non-empty [T x D_z] matrix");
  }
  return mean_rows(z_all);
}

}  // namespace cpcssl
