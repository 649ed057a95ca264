#pragma once

// Labels a direction with lexicon tokens by optimizing a soft token
// selection z: the mixture e = E^T sigmoid(z) is encoded with a prefix, the
// cosine distance between the encoding and the exemplar centroid is
// minimized, and a regularizer on sigmoid(z) keeps the mixture sparse.
// The tokens ranked highest by inner product with the final e are the labels.

#include <cstddef>
#include <string>
#include <vector>

#include "diratlas/embio.hpp"
#include "diratlas/encoder.hpp"

namespace diratlas {

enum class Regularizer {
  Entropy,        // Shannon entropy of sigmoid(z) normalized to sum 1
  BinaryEntropy,  // sum of per-coordinate binary entropies
  L1,             // sum of sigmoid(z)
};

std::string_view to_string(Regularizer r);
Regularizer parse_regularizer(std::string_view name);

struct LabelingConfig {
  std::size_t max_iterations = 150;
  double learning_rate = 5e-3;
  double lambda = 1.0;  // Entropy / BinaryEntropy weight
  Regularizer regularizer = Regularizer::Entropy;
  double l1_lambda = 1e-4;
  std::size_t top_k = 5;
};

void validate(const LabelingConfig& cfg);

struct LossTerms {
  double total = 0.0;
  double cosine = 0.0;      // 1 - cos(t, target)
  double regularizer = 0.0;  // already weighted
};

Vector sigmoid(const Vector& z);

/// e = E^T sigmoid(z).
Vector soft_token(const Lexicon& lexicon, const Vector& z);

LossTerms labeling_loss(const Vector& z, const Vector& target, const TextEncoder& encoder,
                        const Lexicon& lexicon, std::size_t prefix, const LabelingConfig& cfg);

/// Loss plus its exact gradient with respect to z.
LossTerms labeling_loss_gradient(const Vector& z, const Vector& target,
                                 const TextEncoder& encoder, const Lexicon& lexicon,
                                 std::size_t prefix, const LabelingConfig& cfg, Vector& grad);

/// One optimization run for one prefix, z starting at zero.
struct SelectionState {
  Vector z;
  std::size_t prefix = 0;
  std::vector<double> history;  // loss before each step, then the final loss
  Vector mixture;               // e after the last step
  Vector refined;               // t = encode(prefix, e)
  LossTerms final_loss;
};

SelectionState run_selection(const Vector& target, const TextEncoder& encoder,
                             const Lexicon& lexicon, std::size_t prefix,
                             const LabelingConfig& cfg);

struct LabelEntry {
  std::size_t token = 0;
  std::string text;
  double score = 0.0;  // e_i^T e

  bool operator==(const LabelEntry&) const = default;
};

/// Tokens of the k largest inner products e_i^T e, ties by ascending index.
/// With skip_blocked, blocklisted tokens are dropped before ranking.
std::vector<LabelEntry> topk_tokens(const Lexicon& lexicon, const Vector& e, std::size_t k,
                                    bool skip_blocked = false);

/// Union of per-prefix label lists; a token seen more than once keeps its
/// largest score. Ordered by score, ties by ascending token index.
std::vector<LabelEntry> merge_labels(const std::vector<std::vector<LabelEntry>>& per_prefix);

struct LabelSet {
  std::size_t direction_id = 0;
  std::vector<LabelEntry> entries;
  Vector refined;                // t from the lowest-loss prefix run
  std::size_t best_prefix = 0;
  double final_loss = 0.0;
  double initial_loss = 0.0;
  bool no_progress = false;      // final loss >= initial loss on the best run
};

/// Runs the selection for each prefix and merges the per-prefix top-k lists.
LabelSet optimize_labels(const Vector& target, const TextEncoder& encoder,
                         const Lexicon& lexicon, const std::vector<std::size_t>& prefixes,
                         const LabelingConfig& cfg, std::size_t direction_id = 0);

}  // namespace diratlas
