#include "diratlas/encoder.hpp"

#include <cmath>

#include "diratlas/embio.hpp"
#include "diratlas/error.hpp"
#include "diratlas/kernels.hpp"
#include "diratlas/rng.hpp"

namespace diratlas {
namespace {

constexpr double kDegenerateNorm = 1e-12;

void check_prefix(std::size_t prefix, std::size_t count) {
  if (prefix >= count) {
    fail(ErrorCode::InvalidArgument, "prefix id " + std::to_string(prefix) + " out of range (" +
                                         std::to_string(count) + " prefixes)");
  }
}

void check_length(const Vector& v, Eigen::Index want, const char* what) {
  if (v.size() != want) {
    fail(ErrorCode::DimensionMismatch, std::string(what) + " has length " +
                                           std::to_string(v.size()) + ", expected " +
                                           std::to_string(want));
  }
}

std::vector<std::string> default_names(std::size_t count) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < count; ++i) names.push_back("prefix" + std::to_string(i));
  return names;
}

// Backpropagates a cotangent through y -> y / |y|.
Vector normalization_vjp(const Vector& y, const Vector& cotangent) {
  const double ny = y.norm();
  const Vector t = y / ny;
  return (cotangent - t * kernels::dot(t, cotangent)) / ny;
}

RowMatrix gaussian(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

}  // namespace

Vector encode(const TextEncoder& encoder, std::size_t prefix, const Vector& e) {
  return encoder.forward(prefix, e);
}

Vector encode_vjp(const TextEncoder& encoder, std::size_t prefix, const Vector& e,
                  const Vector& cotangent) {
  return encoder.vjp(prefix, e, cotangent);
}

ToyEncoder::ToyEncoder(RowMatrix a, RowMatrix prefix_vectors, std::vector<std::string> names)
    : a_(std::move(a)), prefixes_(std::move(prefix_vectors)), names_(std::move(names)) {
  if (a_.size() == 0) fail(ErrorCode::InvalidArgument, "encoder matrix is empty");
  if (!a_.allFinite() || !prefixes_.allFinite()) {
    fail(ErrorCode::NonFinite, "encoder parameters must be finite");
  }
  if (prefixes_.rows() < 1 || prefixes_.cols() != a_.rows()) {
    fail(ErrorCode::DimensionMismatch, "prefix vectors must be P x " + std::to_string(a_.rows()));
  }
  if (names_.empty()) names_ = default_names(static_cast<std::size_t>(prefixes_.rows()));
  if (static_cast<Eigen::Index>(names_.size()) != prefixes_.rows()) {
    fail(ErrorCode::CountMismatch, "prefix names and prefix vectors disagree");
  }
}

const std::string& ToyEncoder::prefix_name(std::size_t prefix) const {
  check_prefix(prefix, names_.size());
  return names_[prefix];
}

Vector ToyEncoder::pre_normalized(std::size_t prefix, const Vector& e) const {
  check_prefix(prefix, names_.size());
  check_length(e, a_.cols(), "token vector");
  Vector y = kernels::gemv(a_, e);
  y += prefixes_.row(static_cast<Eigen::Index>(prefix)).transpose();
  if (y.norm() <= kDegenerateNorm) {
    fail(ErrorCode::DegenerateInput, "A e + p has norm below 1e-12");
  }
  return y;
}

Vector ToyEncoder::forward(std::size_t prefix, const Vector& e) const {
  const Vector y = pre_normalized(prefix, e);
  return y / y.norm();
}

Vector ToyEncoder::vjp(std::size_t prefix, const Vector& e, const Vector& cotangent) const {
  check_length(cotangent, a_.rows(), "cotangent");
  const Vector y = pre_normalized(prefix, e);
  return kernels::gemv_t(a_, normalization_vjp(y, cotangent));
}

ToyEncoder build_toy_encoder(RowMatrix a, RowMatrix prefix_vectors,
                             std::vector<std::string> prefix_names) {
  return ToyEncoder(std::move(a), std::move(prefix_vectors), std::move(prefix_names));
}

void save_toy_encoder(const ToyEncoder& encoder, const std::filesystem::path& stem) {
  save_matrix(encoder.matrix(), stem.string() + ".A.emb");
  save_matrix(encoder.prefix_vectors(), stem.string() + ".prefixes.emb");
  std::vector<std::string> names;
  for (std::size_t i = 0; i < encoder.prefix_count(); ++i) names.push_back(encoder.prefix_name(i));
  save_lines(names, stem.string() + ".prefix_names.txt");
}

ToyEncoder load_toy_encoder(const std::filesystem::path& stem) {
  return ToyEncoder(load_matrix(stem.string() + ".A.emb"),
                    load_matrix(stem.string() + ".prefixes.emb"),
                    load_lines(stem.string() + ".prefix_names.txt"));
}

MlpEncoder::MlpEncoder(RowMatrix w1, RowMatrix prefix_bias, RowMatrix w2, Vector c,
                       std::vector<std::string> names)
    : w1_(std::move(w1)),
      bias_(std::move(prefix_bias)),
      w2_(std::move(w2)),
      c_(std::move(c)),
      names_(std::move(names)) {
  if (bias_.cols() != w1_.rows() || w2_.cols() != w1_.rows() || c_.size() != w2_.rows()) {
    fail(ErrorCode::DimensionMismatch, "inconsistent MLP encoder shapes");
  }
  if (names_.empty()) names_ = default_names(static_cast<std::size_t>(bias_.rows()));
  if (static_cast<Eigen::Index>(names_.size()) != bias_.rows()) {
    fail(ErrorCode::CountMismatch, "prefix names and prefix biases disagree");
  }
}

const std::string& MlpEncoder::prefix_name(std::size_t prefix) const {
  check_prefix(prefix, names_.size());
  return names_[prefix];
}

Vector MlpEncoder::forward(std::size_t prefix, const Vector& e) const {
  check_prefix(prefix, names_.size());
  check_length(e, w1_.cols(), "token vector");
  Vector pre = kernels::gemv(w1_, e);
  pre += bias_.row(static_cast<Eigen::Index>(prefix)).transpose();
  const Vector h = pre.array().tanh().matrix();
  const Vector y = kernels::gemv(w2_, h) + c_;
  if (y.norm() <= kDegenerateNorm) fail(ErrorCode::DegenerateInput, "MLP output is zero");
  return y / y.norm();
}

Vector MlpEncoder::vjp(std::size_t prefix, const Vector& e, const Vector& cotangent) const {
  check_prefix(prefix, names_.size());
  check_length(e, w1_.cols(), "token vector");
  check_length(cotangent, w2_.rows(), "cotangent");
  Vector pre = kernels::gemv(w1_, e);
  pre += bias_.row(static_cast<Eigen::Index>(prefix)).transpose();
  const Vector h = pre.array().tanh().matrix();
  const Vector y = kernels::gemv(w2_, h) + c_;
  if (y.norm() <= kDegenerateNorm) fail(ErrorCode::DegenerateInput, "MLP output is zero");
  const Vector gh = kernels::gemv_t(w2_, normalization_vjp(y, cotangent));
  const Vector ga = (gh.array() * (1.0 - h.array().square())).matrix();
  return kernels::gemv_t(w1_, ga);
}

const std::vector<RegisteredEncoder>& encoder_registry() {
  static const std::vector<RegisteredEncoder> registry = {
      {"toy-identity",
       [](Eigen::Index d, std::uint64_t) -> std::unique_ptr<TextEncoder> {
         return std::make_unique<ToyEncoder>(RowMatrix::Identity(d, d), RowMatrix::Zero(1, d),
                                             std::vector<std::string>{"a picture of a {}"});
       }},
      {"toy-random",
       [](Eigen::Index d, std::uint64_t seed) -> std::unique_ptr<TextEncoder> {
         Rng rng(seed);
         RowMatrix a = gaussian(d, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
         RowMatrix p = gaussian(3, d, 0.3, rng);
         return std::make_unique<ToyEncoder>(
             std::move(a), std::move(p),
             std::vector<std::string>{"a picture of a {}", "a picture of a {} person",
                                      "a picture of a person with {}"});
       }},
      {"mlp-tanh",
       [](Eigen::Index d, std::uint64_t seed) -> std::unique_ptr<TextEncoder> {
         Rng rng(seed);
         const Eigen::Index hidden = 2 * d;
         const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
         const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
         RowMatrix w1 = gaussian(hidden, d, s1, rng);
         RowMatrix b = gaussian(2, hidden, 0.2, rng);
         RowMatrix w2 = gaussian(d, hidden, s2, rng);
         Vector c = rng.normal_vector(d) * 0.1;
         return std::make_unique<MlpEncoder>(
             std::move(w1), std::move(b), std::move(w2), std::move(c),
             std::vector<std::string>{"a picture of a {}", "a picture of a person with {}"});
       }},
  };
  return registry;
}

ContractReport check_encoder_contract(const TextEncoder& encoder, std::size_t probes,
                                      std::uint64_t seed, double norm_tol, double relative_tol) {
  constexpr double h = 1e-5;
  Rng rng(seed);
  ContractReport report;
  report.probes = probes;
  const Eigen::Index n_in = encoder.token_dim();
  const Eigen::Index n_out = encoder.output_dim();
  for (std::size_t p = 0; p < probes; ++p) {
    const std::size_t prefix = p % encoder.prefix_count();
    Vector e = rng.normal_vector(n_in);
    const Vector cot = rng.normal_vector(n_out);
    const Vector t = encoder.forward(prefix, e);
    report.max_norm_error = std::max(report.max_norm_error, std::abs(t.norm() - 1.0));

    const Vector analytic = encoder.vjp(prefix, e, cot);
    Vector numeric(n_in);
    for (Eigen::Index i = 0; i < n_in; ++i) {
      const double saved = e[i];
      e[i] = saved + h;
      const double up = cot.dot(encoder.forward(prefix, e));
      e[i] = saved - h;
      const double down = cot.dot(encoder.forward(prefix, e));
      e[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    const double rel = (analytic - numeric).norm() / std::max(numeric.norm(), 1e-8);
    report.max_relative_error = std::max(report.max_relative_error, rel);
  }
  report.passed = report.max_norm_error <= norm_tol && report.max_relative_error <= relative_tol;
  return report;
}

AdamState::AdamState(Vector parameters, AdamConfig cfg)
    : params_(std::move(parameters)),
      m_(Vector::Zero(params_.size())),
      v_(Vector::Zero(params_.size())),
      cfg_(cfg) {}

void AdamState::step(const Vector& gradient) {
  if (gradient.size() != params_.size()) {
    fail(ErrorCode::NonFiniteGradient, "gradient length " + std::to_string(gradient.size()) +
                                           " != parameter length " +
                                           std::to_string(params_.size()));
  }
  if (!gradient.allFinite()) fail(ErrorCode::NonFiniteGradient, "gradient has NaN/Inf entries");
  ++steps_;
  const double b1 = cfg_.beta1;
  const double b2 = cfg_.beta2;
  m_ = b1 * m_ + (1.0 - b1) * gradient;
  v_ = b2 * v_ + (1.0 - b2) * gradient.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  params_.array() -=
      cfg_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.epsilon);
}

AdamState adam_step(AdamState state, const Vector& gradient) {
  state.step(gradient);
  return state;
}

}  // namespace diratlas
