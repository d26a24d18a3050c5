#include "cpcssl/synthetic.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>

namespace cpcssl {

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw Error(ErrorCode::invalid_argument, "synthetic spec needs at least 2 classes");
  if (latent_dim < 0) throw Error(ErrorCode::invalid_argument, "latent_dim must be >= 0");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw Error(ErrorCode::invalid_argument, "noise_sigma must be finite and >= 0");
  }
  if (sequence_length < 2) throw Error(ErrorCode::invalid_argument, "sequence_length must be >= 2");
  if (patch_height < 1 || patch_width < 1) throw Error(ErrorCode::invalid_argument, "patch dims must be positive");
  if (!std::isfinite(class_scale) || !std::isfinite(latent_scale)) {
    throw Error(ErrorCode::invalid_argument, "emission scales must be finite");
  }
}

RowMatrix<double> SyntheticSpec::emission() const {
  const Index P = patch_size();
  RowMatrix<double> a(P, num_classes + latent_dim);
  RngState rng{emission_seed, 0};
  const double norm = 1.0 / std::sqrt(static_cast<double>(P));
  for (Index i = 0; i < P; ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      const double s = j < num_classes ? class_scale : latent_scale;
      a(i, j) = s * norm * rng.normal();
    }
  }
  return a;
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"num_classes", s.num_classes},     {"latent_dim", s.latent_dim},
                     {"noise_sigma", s.noise_sigma},     {"sequence_length", s.sequence_length},
                     {"patch_height", s.patch_height},   {"patch_width", s.patch_width},
                     {"class_scale", s.class_scale},     {"latent_scale", s.latent_scale},
                     {"emission_seed", s.emission_seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  static const char* known[] = {"num_classes", "latent_dim",  "noise_sigma",  "sequence_length",
                                "patch_height", "patch_width", "class_scale", "latent_scale",
                                "emission_seed"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw Error(ErrorCode::config, "unknown synthetic spec key '" + key + "'");
    }
  }
  try {
    SyntheticSpec d;
    s.num_classes = j.value("num_classes", d.num_classes);
    s.latent_dim = j.value("latent_dim", d.latent_dim);
    s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    s.sequence_length = j.value("sequence_length", d.sequence_length);
    s.patch_height = j.value("patch_height", d.patch_height);
    s.patch_width = j.value("patch_width", d.patch_width);
    s.class_scale = j.value("class_scale", d.class_scale);
    s.latent_scale = j.value("latent_scale", d.latent_scale);
    s.emission_seed = j.value("emission_seed", d.emission_seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("synthetic spec: ") + e.what());
  }
  s.validate();
}

Dataset make_synthetic_dataset(const SyntheticSpec& spec, Index count, RngState& rng) {
  spec.validate();
  const RowMatrix<double> a = spec.emission();
  const Index M = spec.num_classes, P = spec.patch_size();
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.examples.reserve(static_cast<std::size_t>(count));
  for (Index n = 0; n < count; ++n) {
    const int y = static_cast<int>(rng.uniform_index(M));
    Eigen::VectorXd h = Eigen::VectorXd::Zero(M + spec.latent_dim);
    h[y] = 1.0;
    for (Index d = 0; d < spec.latent_dim; ++d) h[M + d] = rng.normal();
    const Eigen::VectorXd mean = a * h;

    SequenceSample seq;
    seq.id = n;
    seq.label = y;
    for (Index i = 0; i < spec.sequence_length; ++i) {
      Tensor patch(Shape{1, spec.patch_height, spec.patch_width});
      for (Index p = 0; p < P; ++p) patch[p] = mean[p] + spec.noise_sigma * rng.normal();
      seq.patches.push_back(std::move(patch));
    }
    Example ex;
    ex.id = n;
    ex.label = y;
    ex.sequences.push_back(std::move(seq));
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

namespace {

double log_det_spd(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// Covariance of `n` exchangeable patches given y: blocks B B^T, plus sigma^2 I on the diagonal.
Eigen::MatrixXd group_covariance(const Eigen::MatrixXd& shared, double var, Index n) {
  const Index P = shared.rows();
  Eigen::MatrixXd cov(n * P, n * P);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) cov.block(i * P, j * P, P, P) = shared;
  }
  cov.diagonal().array() += var;
  return cov;
}

}  // namespace

double synthetic_mutual_information(const SyntheticSpec& spec, Index group_a, Index group_b) {
  spec.validate();
  if (group_a < 1 || group_b < 1) throw Error(ErrorCode::invalid_argument, "MI groups must be non-empty");
  const RowMatrix<double> a = spec.emission();
  const Eigen::MatrixXd latent = a.rightCols(spec.latent_dim);
  const Eigen::MatrixXd shared = latent * latent.transpose();
  if (spec.latent_dim == 0 || shared.isZero(0.0)) return 0.0;
  const double var = spec.noise_sigma * spec.noise_sigma;
  if (var == 0.0) return std::numeric_limits<double>::infinity();
  const double mi = 0.5 * (log_det_spd(group_covariance(shared, var, group_a)) +
                           log_det_spd(group_covariance(shared, var, group_b)) -
                           log_det_spd(group_covariance(shared, var, group_a + group_b)));
  return std::max(mi, 0.0);
}

}  // namespace cpcssl
