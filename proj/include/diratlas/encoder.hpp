#pragma once

// Differentiable text-encoder contract used by the labeling optimizer, the
// analytic encoders that satisfy it at desk scale, and the ADAM optimizer.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "diratlas/types.hpp"

namespace diratlas {

/// Maps (prefix, token vector e) to a unit vector t in embedding space.
/// Implementations must be immutable after construction.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;

  virtual Eigen::Index token_dim() const = 0;
  virtual Eigen::Index output_dim() const = 0;
  virtual std::size_t prefix_count() const = 0;
  virtual const std::string& prefix_name(std::size_t prefix) const = 0;

  virtual Vector forward(std::size_t prefix, const Vector& e) const = 0;
  /// Gradient with respect to e of cotangent^T forward(prefix, e).
  virtual Vector vjp(std::size_t prefix, const Vector& e, const Vector& cotangent) const = 0;
};

Vector encode(const TextEncoder& encoder, std::size_t prefix, const Vector& e);
Vector encode_vjp(const TextEncoder& encoder, std::size_t prefix, const Vector& e,
                  const Vector& cotangent);

/// t = (A e + p) / |A e + p|, one p per prefix.
class ToyEncoder final : public TextEncoder {
 public:
  ToyEncoder(RowMatrix a, RowMatrix prefix_vectors, std::vector<std::string> prefix_names);

  Eigen::Index token_dim() const override { return a_.cols(); }
  Eigen::Index output_dim() const override { return a_.rows(); }
  std::size_t prefix_count() const override { return names_.size(); }
  const std::string& prefix_name(std::size_t prefix) const override;

  Vector forward(std::size_t prefix, const Vector& e) const override;
  Vector vjp(std::size_t prefix, const Vector& e, const Vector& cotangent) const override;

  const RowMatrix& matrix() const { return a_; }
  const RowMatrix& prefix_vectors() const { return prefixes_; }

 private:
  Vector pre_normalized(std::size_t prefix, const Vector& e) const;

  RowMatrix a_;          // output_dim x token_dim
  RowMatrix prefixes_;   // prefix_count x output_dim
  std::vector<std::string> names_;
};

/// Prefix names default to "prefix<i>" when none are given.
ToyEncoder build_toy_encoder(RowMatrix a, RowMatrix prefix_vectors,
                             std::vector<std::string> prefix_names = {});

/// `<stem>.A.emb`, `<stem>.prefixes.emb` and `<stem>.prefix_names.txt`.
void save_toy_encoder(const ToyEncoder& encoder, const std::filesystem::path& stem);
ToyEncoder load_toy_encoder(const std::filesystem::path& stem);

/// t = normalize(W2 tanh(W1 e + b_prefix) + c). A nonlinear encoder for
/// exercising the contract beyond affine maps.
class MlpEncoder final : public TextEncoder {
 public:
  MlpEncoder(RowMatrix w1, RowMatrix prefix_bias, RowMatrix w2, Vector c,
             std::vector<std::string> prefix_names);

  Eigen::Index token_dim() const override { return w1_.cols(); }
  Eigen::Index output_dim() const override { return w2_.rows(); }
  std::size_t prefix_count() const override { return names_.size(); }
  const std::string& prefix_name(std::size_t prefix) const override;

  Vector forward(std::size_t prefix, const Vector& e) const override;
  Vector vjp(std::size_t prefix, const Vector& e, const Vector& cotangent) const override;

 private:
  RowMatrix w1_;    // hidden x token_dim
  RowMatrix bias_;  // prefix_count x hidden
  RowMatrix w2_;    // output_dim x hidden
  Vector c_;
  std::vector<std::string> names_;
};

struct RegisteredEncoder {
  std::string name;
  std::function<std::unique_ptr<TextEncoder>(Eigen::Index dim, std::uint64_t seed)> make;
};

/// Every encoder shipped with the library; the contract check runs over all.
const std::vector<RegisteredEncoder>& encoder_registry();

struct ContractReport {
  std::size_t probes = 0;
  double max_norm_error = 0.0;     // max | |forward| - 1 |
  double max_relative_error = 0.0; // max |vjp - fd| / |fd| over probes
  bool passed = false;
};

/// Compares the VJP with central finite differences of cotangent^T forward
/// at random probe points.
ContractReport check_encoder_contract(const TextEncoder& encoder, std::size_t probes,
                                      std::uint64_t seed, double norm_tol = 1e-9,
                                      double relative_tol = 1e-4);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// ADAM with bias correction.
class AdamState {
 public:
  AdamState(Vector parameters, AdamConfig cfg);

  /// Throws NonFiniteGradient on NaN/Inf or a length mismatch of the gradient.
  void step(const Vector& gradient);

  const Vector& parameters() const { return params_; }
  Vector& parameters() { return params_; }
  const Vector& first_moment() const { return m_; }
  const Vector& second_moment() const { return v_; }
  std::size_t step_count() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  Vector params_;
  Vector m_;
  Vector v_;
  std::size_t steps_ = 0;
  AdamConfig cfg_;
};

AdamState adam_step(AdamState state, const Vector& gradient);

}  // namespace diratlas
