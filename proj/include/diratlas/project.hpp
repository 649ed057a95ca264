#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "diratlas/types.hpp"

namespace diratlas {

/// How a latent code is laid out: one flat vector, or `layers` consecutive
/// blocks of `width` entries (a per-layer code such as W+).
struct LatentLayout {
  std::size_t layers = 1;
  std::size_t width = 0;
  bool per_layer = false;

  static LatentLayout flat(std::size_t q) { return {1, q, false}; }
  static LatentLayout layered(std::size_t layers, std::size_t width) {
    return {layers, width, true};
  }
  std::size_t size() const { return layers * width; }
};

struct LatentCodeSet {
  RowMatrix codes;  // r x q
  LatentLayout layout;

  Eigen::Index size() const { return codes.rows(); }
  Eigen::Index dim() const { return codes.cols(); }
};

/// Checks finite entries and that the layout matches the code width.
LatentCodeSet make_latent_set(RowMatrix codes, std::optional<LatentLayout> layout = std::nullopt);
LatentCodeSet select_rows(const LatentCodeSet& set, const std::vector<std::size_t>& rows);

/// Codes in `<stem>.emb`, layout record ("flat" or "per_layer L W") in
/// `<stem>.layout`.
void save_latent_set(const LatentCodeSet& set, const std::filesystem::path& stem);
LatentCodeSet load_latent_set(const std::filesystem::path& stem);

struct EditDirection {
  Vector vector;  // unit, oriented toward the positive class
  std::vector<std::string> label;
  double margin = 0.0;  // 1 / |w| of the trained hyperplane
};

struct SvmConfig {
  double c_param = 1.0;
  std::size_t max_iter = 300;  // epochs
  double tol = 1e-6;           // relative objective change between epochs
  std::uint64_t seed = 0;
};

struct SvmResult {
  EditDirection direction;
  Vector weights;  // hyperplane normal before normalization
  double bias = 0.0;
  double objective = 0.0;
  double training_accuracy = 0.0;
  std::size_t epochs = 0;
  bool converged = false;
  bool degenerate = false;  // no separating direction better than chance
};

/// Soft-margin linear SVM, 0.5|w|^2 + C sum hinge, trained by stochastic
/// subgradient descent (Pegasos steps, iterate averaging) over seeded
/// shuffles. The bias is an extra constant feature.
SvmResult svm_direction(const LatentCodeSet& positive, const LatentCodeSet& negative,
                        const SvmConfig& cfg = {});

/// code + alpha * direction. With a mask (per-layer layouts only), layers
/// whose mask entry is false are left untouched.
Vector apply_edit(const Vector& code, const EditDirection& direction, double alpha,
                  const LatentLayout& layout, const std::optional<std::vector<bool>>& layer_mask = {});

}  // namespace diratlas
