#include "diratlas/exemplar.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "diratlas/error.hpp"
#include "diratlas/kernels.hpp"

namespace diratlas {
namespace {

Vector projections(const EmbeddingSet& set, const Vector& mean, const Direction& direction) {
  if (mean.size() != set.dim() || direction.vector.size() != set.dim()) {
    fail(ErrorCode::DimensionMismatch,
         "set has d=" + std::to_string(set.dim()) + ", mean " + std::to_string(mean.size()) +
             ", direction " + std::to_string(direction.vector.size()));
  }
  Vector p = kernels::gemv(set.data, direction.vector);
  p.array() -= kernels::dot(mean, direction.vector);
  return p;
}

}  // namespace

std::vector<std::size_t> relevance_filter(const EmbeddingSet& set, const Vector& mean,
                                          const Direction& direction) {
  const Vector p = projections(set, mean, direction);
  std::vector<std::size_t> kept;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kept.push_back(static_cast<std::size_t>(i));
  }
  return kept;
}

ExemplarSplit select_exemplars(const EmbeddingSet& set, const Vector& mean,
                               const Direction& direction, std::size_t m_top) {
  if (m_top < 1) fail(ErrorCode::InvalidArgument, "m_top must be at least 1");
  const Vector p = projections(set, mean, direction);
  std::vector<std::size_t> pool;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) pool.push_back(static_cast<std::size_t>(i));
  }
  if (pool.size() < 2 * m_top) {
    fail(ErrorCode::InsufficientRelevant, std::to_string(pool.size()) +
                                              " relevant samples, need " +
                                              std::to_string(2 * m_top));
  }
  std::sort(pool.begin(), pool.end(), [&p](std::size_t a, std::size_t b) {
    const double pa = p[static_cast<Eigen::Index>(a)];
    const double pb = p[static_cast<Eigen::Index>(b)];
    return pa != pb ? pa > pb : a < b;
  });
  ExemplarSplit out;
  for (std::size_t i = 0; i < m_top; ++i) {
    const auto hi = pool[i];
    const auto lo = pool[pool.size() - 1 - i];
    out.positive.push_back(hi);
    out.positive_projections.push_back(p[static_cast<Eigen::Index>(hi)]);
    out.negative.push_back(lo);
    out.negative_projections.push_back(p[static_cast<Eigen::Index>(lo)]);
  }
  out.centroid = spherical_centroid(set, out.positive);
  return out;
}

Vector spherical_centroid(const EmbeddingSet& set, std::span<const std::size_t> indices) {
  if (indices.empty()) fail(ErrorCode::InvalidArgument, "centroid of no rows");
  Vector acc = Vector::Zero(set.dim());
  for (const auto i : indices) {
    if (i >= static_cast<std::size_t>(set.size())) {
      fail(ErrorCode::InvalidArgument, "row index " + std::to_string(i) + " out of range");
    }
    const auto r = kernels::row(set.data, static_cast<Eigen::Index>(i));
    const double nr = std::sqrt(kernels::dot(r, r));
    if (nr < 1e-12) fail(ErrorCode::DegenerateCentroid, "row " + std::to_string(i) + " is zero");
    kernels::axpy(1.0 / nr, r, {acc.data(), static_cast<std::size_t>(acc.size())});
  }
  acc /= static_cast<double>(indices.size());
  const double na = acc.norm();
  if (na < 1e-9) {
    fail(ErrorCode::DegenerateCentroid, "mean of normalized rows has norm " + std::to_string(na));
  }
  return acc / na;
}

namespace {

template <typename T>
std::string join_line(const std::string& key, const std::vector<T>& values) {
  std::string line = key;
  char buf[64];
  for (const auto& v : values) {
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    line += ' ';
    line.append(buf, ptr);
  }
  return line;
}

template <typename T>
std::vector<T> split_line(const std::string& line, const std::string& key) {
  if (line.compare(0, key.size(), key) != 0 ||
      (line.size() > key.size() && line[key.size()] != ' ')) {
    fail(ErrorCode::BadFormat, "expected '" + key + "' record, got '" + line + "'");
  }
  std::vector<T> out;
  const char* p = line.data() + key.size();
  const char* end = line.data() + line.size();
  while (p < end) {
    while (p < end && *p == ' ') ++p;
    if (p == end) break;
    T v{};
    const auto [ptr, ec] = std::from_chars(p, end, v);
    if (ec != std::errc()) fail(ErrorCode::BadFormat, "bad value in '" + key + "' record");
    out.push_back(v);
    p = ptr;
  }
  return out;
}

}  // namespace

void save_exemplars(const std::vector<ExemplarRecord>& records,
                    const std::filesystem::path& stem) {
  if (records.empty()) fail(ErrorCode::InvalidArgument, "no exemplar records");
  std::vector<std::string> lines;
  RowMatrix centroids(static_cast<Eigen::Index>(records.size()),
                      records.front().split.centroid.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    lines.push_back("direction " + std::to_string(rec.direction_id));
    lines.push_back(join_line("positive", rec.split.positive));
    lines.push_back(join_line("negative", rec.split.negative));
    lines.push_back(join_line("positive_projection", rec.split.positive_projections));
    lines.push_back(join_line("negative_projection", rec.split.negative_projections));
    centroids.row(static_cast<Eigen::Index>(r)) = rec.split.centroid.transpose();
  }
  save_lines(lines, stem.string() + ".txt");
  save_matrix(centroids, stem.string() + ".centroids.emb");
}

std::vector<ExemplarRecord> load_exemplars(const std::filesystem::path& stem) {
  const auto lines = load_lines(stem.string() + ".txt");
  const RowMatrix centroids = load_matrix(stem.string() + ".centroids.emb");
  if (lines.size() % 5 != 0 || static_cast<Eigen::Index>(lines.size() / 5) != centroids.rows()) {
    fail(ErrorCode::CountMismatch, "exemplar records and centroid rows disagree");
  }
  std::vector<ExemplarRecord> out;
  for (std::size_t r = 0; r * 5 < lines.size(); ++r) {
    ExemplarRecord rec;
    const auto id = split_line<std::size_t>(lines[5 * r], "direction");
    if (id.size() != 1) fail(ErrorCode::BadFormat, "direction record needs one id");
    rec.direction_id = id.front();
    rec.split.positive = split_line<std::size_t>(lines[5 * r + 1], "positive");
    rec.split.negative = split_line<std::size_t>(lines[5 * r + 2], "negative");
    rec.split.positive_projections = split_line<double>(lines[5 * r + 3], "positive_projection");
    rec.split.negative_projections = split_line<double>(lines[5 * r + 4], "negative_projection");
    rec.split.centroid = centroids.row(static_cast<Eigen::Index>(r)).transpose();
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace diratlas
