#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diratlas/dirext.hpp"
#include "diratlas/embio.hpp"
#include "diratlas/encoder.hpp"
#include "diratlas/labeler.hpp"

namespace diratlas {

inline constexpr double kDefaultDedupThreshold = 0.9;

/// 2 depth(LCS) / (depth(a) + depth(b)) with depth(root) = 1, maximized over
/// every sense pair of the two tokens. Tokens absent from the taxonomy score
/// 0 against everything.
double wu_palmer(const Taxonomy& taxonomy, const std::string& a, const std::string& b);

struct DedupResult {
  std::vector<LabelEntry> kept;
  bool entangled = false;  // more than one concept survived
};

/// Walks the labels in order, keeping each word that is not more similar
/// than `threshold` to an already-kept word.
DedupResult dedup_labels(const std::vector<LabelEntry>& labels, const Taxonomy& taxonomy,
                         double threshold = kDefaultDedupThreshold);

/// Replaces an entangled direction by one direction per word: the encoded
/// prompt of that word's lexicon embedding.
std::vector<Direction> split_by_reseed(const std::vector<std::string>& words,
                                       const Lexicon& lexicon, const TextEncoder& encoder,
                                       std::size_t prefix);

struct DisentangleProblem {
  Vector u_hat;     // entangled direction, unit
  Vector weights;   // k confidence weights, nonnegative, sum 1
  Matrix tokens;    // d x k, unit columns
  double beta = 0.1;
  double learning_rate = 1e-3;
  std::size_t max_iterations = 500;
  std::uint64_t seed = 0;
  double init_noise = 1e-2;
};

/// Checks the problem invariants (unit columns, L1-normalized weights, k >= 1).
void validate(const DisentangleProblem& problem);

struct SplitLoss {
  double reconstruction = 0.0;  // |u - B w|
  double independence = 0.0;    // |B^T B - I|_F
  double token = 0.0;           // -tr(B^T T)
  double total = 0.0;           // beta * reconstruction + independence + token
};

SplitLoss split_loss(const Matrix& b, const DisentangleProblem& problem);
/// Loss plus its (sub)gradient with respect to B.
SplitLoss split_loss_gradient(const Matrix& b, const DisentangleProblem& problem, Matrix& grad);

struct DisentangleResult {
  Matrix b;            // d x k, unit columns
  Matrix b_raw;        // optimized B before column normalization
  Matrix b_initial;    // starting point
  SplitLoss losses;    // evaluated on b_raw
  std::vector<double> history;
  std::size_t iterations = 0;
  bool converged = false;  // early stop triggered
};

/// ADAM on L_split from the token columns plus seeded Gaussian noise; stops
/// early when |delta L| < 1e-8 for 10 consecutive iterations.
DisentangleResult disentangle(const DisentangleProblem& problem);

/// Builds the problem for an entangled direction from its surviving labels:
/// token columns are encoded prompts and weights are clamped, L1-normalized
/// label scores (uniform if every score is <= 0).
DisentangleProblem make_disentangle_problem(const Vector& u_hat,
                                            const std::vector<LabelEntry>& kept,
                                            const Lexicon& lexicon, const TextEncoder& encoder,
                                            std::size_t prefix);

/// B as `<stem>.emb` (rows are the atomic directions) and a loss record in
/// `<stem>.txt`.
void save_disentangle_result(const DisentangleResult& result, std::size_t direction_id,
                             const std::filesystem::path& stem);

}  // namespace diratlas
