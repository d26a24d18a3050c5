#pragma once

#include <cstdint>

#include <nlohmann/json.hpp>

#include "cpcssl/data.hpp"
#include "cpcssl/objectives.hpp"

namespace cpcssl {

/// Multiply-accumulate counts, analytic and measured.
///
/// Per unit: C_enc is one patch encoding, C_ag one context (GRU over t steps,
/// the Gaussian head) plus the K bilinear scorers over N candidates, C_ctx the
/// context alone and C_cls one classification. Training is counted as
/// M (N K + t) C_enc + M C_ag + M C_cls, every candidate encoded afresh. The
/// test forward over an image of P patches in S column sequences is
/// P C_enc + S C_ctx + C_cls, against P C_enc + C_cls for the supervised
/// classifier on the same patches.
struct ComplexityReport {
  Index batch_size = 0, context_steps = 0, prediction_steps = 0, contrastive_size = 0;
  Index patches = 0, sequences = 0;

  std::uint64_t c_enc = 0, c_ag = 0, c_ctx = 0, c_cls = 0;
  std::uint64_t measured_c_enc = 0, measured_c_ag = 0, measured_c_cls = 0;

  std::uint64_t predicted_train = 0, measured_train = 0;
  /// Training forward as implemented, where each patch is encoded once and
  /// reused as a negative.
  std::uint64_t measured_train_shared = 0;

  std::uint64_t predicted_test = 0, measured_test = 0;
  std::uint64_t predicted_supervised_test = 0, measured_supervised_test = 0;

  /// Encoder work over the overlapping crops relative to one pass over the
  /// image: P p^2 / H^2.
  double overlap_factor = 1.0;

  double ag_to_enc() const { return static_cast<double>(c_ag) / static_cast<double>(c_enc); }
  double test_ratio() const {
    return static_cast<double>(measured_test) / static_cast<double>(measured_supervised_test);
  }
  double train_error() const { return relative_error(measured_train, predicted_train); }
  double test_error() const { return relative_error(measured_test, predicted_test); }
  double supervised_test_error() const {
    return relative_error(measured_supervised_test, predicted_supervised_test);
  }

  static double relative_error(std::uint64_t measured, std::uint64_t predicted);
};

std::uint64_t encoder_macs(const ModelConfig& config);
/// GRU over t steps plus the Gaussian head.
std::uint64_t context_macs(const CpcConfig& cpc, Index latent_dim, Index condition_dim = 0);
std::uint64_t aggregator_macs(const CpcConfig& cpc, Index latent_dim, Index condition_dim = 0);
std::uint64_t classifier_macs(Index latent_dim, Index num_classes);
/// M (N K + t) C_enc + M C_ag + M C_cls.
std::uint64_t train_cost(Index batch_size, Index contrastive_size, Index prediction_steps, Index context_steps,
                         std::uint64_t c_enc, std::uint64_t c_ag, std::uint64_t c_cls);

/// Builds cpc and supervised-only models from `config`, counts analytically and
/// through instrumented forward passes on random inputs. Text models are
/// measured on a single document of t + K sentences.
ComplexityReport complexity_report(const ModelConfig& config, const PatchGridSpec& grid,
                                   Index batch_size, RngState rng);

nlohmann::json to_json(const ComplexityReport& r);

}  // namespace cpcssl
