#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "diratlas/embio.hpp"
#include "diratlas/types.hpp"

namespace diratlas {

inline constexpr double kDefaultTemperature = 100.0;
inline constexpr double kDefaultTolerance = 0.6;

struct ZeroShotScore {
  RowMatrix scores;  // images x prompts, each row a distribution
  std::vector<std::string> prompt_labels;

  /// Mean over rows, one entry per prompt.
  Vector column_means() const;
};

/// Row i, column j: softmax over j of temperature * cos(image_i, prompt_j).
ZeroShotScore zero_shot_scores(const EmbeddingSet& images, const EmbeddingSet& prompts,
                               double temperature = kDefaultTemperature);

struct DisentangleScores {
  double s1_a = 0.0, s2_a = 0.0;  // set a against prompts 1 and 2
  double s1_b = 0.0, s2_b = 0.0;
};

/// Mean zero-shot score of each set against each of exactly two prompts.
DisentangleScores disentangle_eval(const EmbeddingSet& set_a, const EmbeddingSet& set_b,
                                   const EmbeddingSet& prompts,
                                   double temperature = kDefaultTemperature);

struct PairedSimilarityReport {
  double mean_cosine = 0.0;
  double accuracy = 0.0;  // fraction of pairs with |a/|a| - b/|b|| <= tolerance
  double tolerance = kDefaultTolerance;
};

PairedSimilarityReport paired_cosine(const EmbeddingSet& original, const EmbeddingSet& edited,
                                     double tolerance = kDefaultTolerance);

/// One JSON object per line. Scores are written as per-prompt means.
void write_report_line(std::ostream& out, const ZeroShotScore& s);
void write_report_line(std::ostream& out, const PairedSimilarityReport& r);

/// Fixed-point table of column means, one column per prompt label.
std::string format_score_table(const ZeroShotScore& s, int precision = 4);

}  // namespace diratlas
