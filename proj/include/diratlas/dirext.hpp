#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diratlas/embio.hpp"
#include "diratlas/types.hpp"

namespace diratlas {

enum class DirectionKind { Pca, Ica, Random, Hybrid, Reseed, Atomic };

std::string_view to_string(DirectionKind kind);

struct Provenance {
  DirectionKind kind = DirectionKind::Pca;
  std::size_t index = 0;
  std::uint64_t seed = 0;   // Random and Hybrid
  std::size_t source = 0;   // Reseed and Atomic: the candidate direction split
};

/// Unit vector in embedding space. The coordinate of largest magnitude is
/// positive (first such coordinate on ties).
struct Direction {
  Vector vector;
  Provenance provenance;
  double variance = 0.0;
};

struct DirectionSet {
  std::vector<Direction> directions;
  Vector mean;
  bool rank_deficient = false;  // PCA: some returned eigenvalue < 1e-12
  bool converged = true;        // ICA: tolerance reached

  std::size_t size() const { return directions.size(); }
};

/// Flips `v` so its largest-magnitude coordinate is positive.
void normalize_sign(Vector& v);

Vector mean_vector(const EmbeddingSet& set);

/// Top-k principal axes of the mean-centered rows, by nonincreasing sample
/// variance (n-1 normalisation). Ties in variance are ordered by the first
/// coordinate at which the sign-normalized vectors differ, larger first.
DirectionSet pca_directions(const EmbeddingSet& set, std::size_t k);

/// Full PCA spectrum (all d eigenvalues, nonincreasing).
Vector pca_spectrum(const EmbeddingSet& set);

struct IcaConfig {
  std::size_t max_iter = 400;
  double tol = 1e-5;
  std::uint64_t seed = 0;
};

/// PCA whitening to k components: rows of the result have mean zero and
/// (1/n) Z^T Z = I. `unwhiten` maps whitened coordinates back to centered
/// embedding space.
struct Whitening {
  RowMatrix whitened;  // n x k
  Matrix whiten;       // k x d
  Matrix unwhiten;     // d x k
  Vector mean;
};
Whitening whiten(const EmbeddingSet& set, std::size_t k);

/// FastICA (logcosh contrast, symmetric decorrelation) on PCA-whitened data.
/// Each direction is a normalized mixing-matrix column; `variance` is that
/// column's squared norm. Ordered by nonincreasing variance.
DirectionSet ica_directions(const EmbeddingSet& set, std::size_t k, const IcaConfig& cfg = {});

/// Uniform unit vectors on the (d-1)-sphere.
DirectionSet random_directions(std::uint64_t seed, std::size_t count, std::size_t d);

inline constexpr double kDefaultCorrThreshold = 0.3;

/// The first n_pca principal axes followed by n_random random unit vectors
/// drawn from the orthogonal complement of those axes, each accepted only if
/// its |cosine| with every accepted direction is below corr_threshold.
DirectionSet hybrid_directions(const EmbeddingSet& set, std::size_t n_pca, std::size_t n_random,
                               double corr_threshold = kDefaultCorrThreshold,
                               std::uint64_t seed = 0);

/// |cosine| between corresponding directions.
std::vector<double> direction_alignment(const DirectionSet& a, const DirectionSet& b);

/// Directions as rows of `<stem>.emb`, provenance lines in `<stem>.prov`, and
/// the mean in `<stem>.mean.emb`.
void save_direction_set(const DirectionSet& set, const std::filesystem::path& stem);
DirectionSet load_direction_set(const std::filesystem::path& stem);

std::string format_provenance(const Direction& d);
Provenance parse_provenance(const std::string& line, double& variance);

}  // namespace diratlas
