#pragma once
// Synthetic joint embedding worlds with planted attribute directions.
//
// Every lexicon token j embeds as a row e_j of a random orthonormal matrix,
// and the toy encoder maps e_j to a unit direction b_j. The first k of the
// b_j are the planted attributes, tokens k..2k-1 are their synonyms in the
// taxonomy, the rest are distractors. Samples are
//   x = mu0 + sum_j c_j a_j + noise,
// where mu0 = 5 * theta and theta is orthogonal to every b_j.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diratlas/dirext.hpp"
#include "diratlas/embio.hpp"
#include "diratlas/encoder.hpp"
#include "diratlas/labeler.hpp"
#include "diratlas/project.hpp"

namespace diratlas {

enum class CoefficientLaw { Bimodal, Gaussian };
std::string_view to_string(CoefficientLaw law);
CoefficientLaw parse_coefficient_law(std::string_view name);

struct WorldConfig {
  std::uint64_t seed = 0;
  std::size_t d = 64;
  std::size_t k = 4;
  std::size_t n = 2000;
  double noise_sigma = 0.05;
  CoefficientLaw law = CoefficientLaw::Bimodal;
  std::size_t m = 20;           // lexicon size, 2k <= m <= d - 1
  std::size_t latent_dim = 32;  // q of the paired latent codes, >= k
  double latent_noise = 0.1;
  double magnitude_scale = 2.0;  // magnitude_j = scale * (1 - j / 2k)
};

void validate(const WorldConfig& cfg);

struct SyntheticWorld {
  WorldConfig config;
  EmbeddingSet embeddings;  // n x d
  Matrix planted;           // d x k, orthonormal columns
  RowMatrix coefficients;   // n x k
  Vector magnitudes;        // k, strictly decreasing
  Vector theme;             // mu0
  Lexicon lexicon;
  ToyEncoder encoder;
  Taxonomy taxonomy;
  LatentCodeSet latents;    // n x q, codes = coefficients G^T + noise
  Matrix latent_axes;       // q x k, orthonormal columns G
};

/// Bimodal: c_j = s_j magnitude_j with s_j = bit j of a shuffled row index,
/// so every sign pattern appears equally often when 2^k divides n.
/// Deterministic per seed.
SyntheticWorld generate_world(const WorldConfig& cfg);

struct AttributeRecovery {
  double best_cosine = 0.0;  // |cos| with the matched direction
  std::size_t direction = 0;
  bool label_correct = false;
};

struct RecoveryReport {
  std::vector<AttributeRecovery> per_attribute;
  std::size_t attributes_recovered = 0;  // |cos| >= 0.9 and correct label
};

inline constexpr double kRecoveryCosine = 0.9;

/// Greedy one-to-one matching by |cosine|; a label is correct when the
/// top-1 token of the matched direction is the attribute's own token.
/// `labels[i]` labels `directions.directions[i]` (missing entries count as
/// wrong labels).
RecoveryReport recovery_report(const Matrix& planted, const DirectionSet& directions,
                               const std::vector<LabelSet>& labels);
RecoveryReport recovery_report(const SyntheticWorld& world, const DirectionSet& directions,
                               const std::vector<LabelSet>& labels);

/// Directory layout: embeddings.emb, lexicon.emb, tokens.txt, taxonomy.tsv,
/// encoder.*, planted.emb (rows are attributes), coefficients.emb,
/// latents.emb/.layout, latent_axes.emb, theme.emb and manifest.json.
void save_world(const SyntheticWorld& world, const std::filesystem::path& dir);
SyntheticWorld load_world(const std::filesystem::path& dir);

}  // namespace diratlas
