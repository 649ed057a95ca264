#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "diratlas/dirext.hpp"
#include "diratlas/embio.hpp"

namespace diratlas {

struct ExemplarSplit {
  std::vector<std::size_t> positive;  // most positive projection first
  std::vector<std::size_t> negative;  // least positive projection first
  std::vector<double> positive_projections;
  std::vector<double> negative_projections;
  Vector centroid;  // spherical centroid of the positive rows
};

/// Rows whose mean-centered projection onto the direction is strictly positive.
std::vector<std::size_t> relevance_filter(const EmbeddingSet& set, const Vector& mean,
                                          const Direction& direction);

/// Ranks the relevant rows by projection (ties by ascending row index) and
/// takes the top and bottom m_top as positive and negative exemplars.
ExemplarSplit select_exemplars(const EmbeddingSet& set, const Vector& mean,
                               const Direction& direction, std::size_t m_top);

/// Normalizes each selected raw row, averages, renormalizes.
Vector spherical_centroid(const EmbeddingSet& set, std::span<const std::size_t> indices);

struct ExemplarRecord {
  std::size_t direction_id = 0;
  ExemplarSplit split;
};

/// Index lists and projections go to `<stem>.txt` (a "direction <id>" line
/// followed by positive / negative / positive_projection /
/// negative_projection lines); centroids are rows of `<stem>.centroids.emb`.
void save_exemplars(const std::vector<ExemplarRecord>& records, const std::filesystem::path& stem);
std::vector<ExemplarRecord> load_exemplars(const std::filesystem::path& stem);

}  // namespace diratlas
