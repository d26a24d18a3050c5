#pragma once

#include <vector>

#include "cpcssl/contrastive.hpp"
#include "cpcssl/data.hpp"
#include "cpcssl/ops.hpp"
#include "cpcssl/parameters.hpp"

namespace cpcssl {

struct ConvLayerSpec {
  Index filters = 8;
  Index kernel = 3;
  Index stride = 1;

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

/// Patch encoder for [C x p x p] crops: conv + ReLU layers, flattened, then a
/// linear map to D_z.
struct ImageEncoderSpec {
  Index channels = 1;
  Index patch = 16;
  std::vector<ConvLayerSpec> layers{{32, 3, 1}, {64, 3, 2}};

  /// Spatial side after each layer; throws if a kernel outgrows its input.
  std::vector<Index> sides() const;
  Index flat_size() const;
};

/// Sentence encoder: embedding, one 1-D filter group per width, ReLU, max over
/// positions, concatenated. D_z = widths.size() * filters.
struct TextEncoderSpec {
  Index vocab_size = 20000;
  Index embed_dim = 64;
  Index sentence_length = 32;
  std::vector<Index> widths{3, 4, 5};
  Index filters = 128;

  Index latent_dim() const { return static_cast<Index>(widths.size()) * filters; }
};

enum class EncoderKind { image, text };

struct EncoderParams {
  struct Conv {
    ParamId kernels;
    ParamId bias;
    Index stride = 1;
  };

  EncoderKind kind = EncoderKind::image;
  Shape patch_shape;
  Index latent_dim = 0;
  std::vector<Conv> convs;  // image layers, or text filter groups
  ParamId projection;       // image: [D_z x flat]
  ParamId projection_bias;  // image: [D_z]
  ParamId embedding;        // text: [V x E]
};

/// Affine mean and log-variance maps from [h; condition] to D_c.
struct GaussianHead {
  ParamId mu_weight, mu_bias;
  ParamId log_var_weight, log_var_bias;
  Index condition_dim = 0;
};

struct AggregatorParams {
  ParamId w_update, b_update;
  ParamId w_reset, b_reset;
  ParamId w_candidate, b_candidate;
  GaussianHead head;
  Index context_dim = 0;
};

/// One bilinear scorer W_k [D_z x D_c] per prediction step.
struct PredictorBank {
  std::vector<ParamId> weights;

  Index steps() const { return static_cast<Index>(weights.size()); }
};

struct ContextDistribution {
  Var mu;
  Var log_var;
};

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

EncoderParams add_image_encoder(ParameterStore& store, const ImageEncoderSpec& spec,
                                Index latent_dim, RngState& rng);
EncoderParams add_text_encoder(ParameterStore& store, const TextEncoderSpec& spec, RngState& rng);
/// GRU of width D_c plus one Gaussian head taking `condition_dim` extra inputs.
AggregatorParams add_aggregator(ParameterStore& store, Index latent_dim, Index context_dim,
                                Index condition_dim, double log_var_bias, RngState& rng,
                                const std::string& prefix = "agg");
GaussianHead add_gaussian_head(ParameterStore& store, const std::string& prefix, Index input_dim,
                               Index context_dim, Index condition_dim, double log_var_bias,
                               RngState& rng);
/// Entries uniform in +-scale / sqrt(D_z * D_c).
PredictorBank add_predictors(ParameterStore& store, Index steps, Index latent_dim,
                             Index context_dim, double scale, RngState& rng);

Var encode_patch(Graph& g, const EncoderParams& enc, const Tensor& patch);
/// [T x D_z], row i = g_enc(x_i).
Var encode_sequence(Graph& g, const EncoderParams& enc, const SequenceSample& sample);

/// Final GRU state after consuming the rows of z_context in order from h0 = 0.
Var aggregate_state(Graph& g, const AggregatorParams& agg, Var z_context);
ContextDistribution gaussian_context(Graph& g, const GaussianHead& head, Var state,
                                     Var condition = {});
/// GRU over exactly t rows followed by the aggregator's head.
ContextDistribution aggregate_context(Graph& g, const AggregatorParams& agg, Var z_context,
                                      Index context_steps, Var condition = {});

/// c = mu + exp(0.5 log_var) * eps.
Var sample_context(const ContextDistribution& dist, const Tensor& eps);
Var sample_context(const ContextDistribution& dist, RngState& rng);

/// z^T W c.
Var score(Var z, Var c, Var w);
/// -log softmax(candidates W c)[positive_index].
Var info_nce_step_loss(Var c, Var candidates, Index positive_index, Var w);
/// Row mean of [T x D_z].
Var pool_features(Var z_all);

}  // namespace cpcssl
