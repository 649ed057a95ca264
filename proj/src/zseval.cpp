#include "diratlas/zseval.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "diratlas/error.hpp"
#include "diratlas/kernels.hpp"

namespace diratlas {
namespace {

RowMatrix unit_rows(const RowMatrix& m, const char* what) {
  RowMatrix out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = kernels::dot(kernels::row(out, i), kernels::row(out, i));
    if (!(n > 0)) {
      fail(ErrorCode::ZeroNormRow, std::string(what) + " row " + std::to_string(i) +
                                       " has zero norm");
    }
    out.row(i) /= std::sqrt(n);
  }
  return out;
}

}  // namespace

Vector ZeroShotScore::column_means() const { return scores.colwise().mean().transpose(); }

ZeroShotScore zero_shot_scores(const EmbeddingSet& images, const EmbeddingSet& prompts,
                               double temperature) {
  if (prompts.size() < 1) fail(ErrorCode::InvalidArgument, "need at least one prompt");
  if (images.dim() != prompts.dim()) {
    fail(ErrorCode::DimensionMismatch, "images and prompts differ in dimension");
  }
  if (!std::isfinite(temperature)) fail(ErrorCode::InvalidArgument, "temperature must be finite");
  const RowMatrix x = unit_rows(images.data, "image");
  const RowMatrix p = unit_rows(prompts.data, "prompt");
  ZeroShotScore out;
  out.prompt_labels = prompts.labels;
  out.scores.resize(x.rows(), p.rows());
  Vector logits(p.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.rows(); ++j) {
      logits[j] = temperature * kernels::dot(kernels::row(x, i), kernels::row(p, j));
    }
    const double top = logits.maxCoeff();
    const Vector e = (logits.array() - top).exp().matrix();
    out.scores.row(i) = (e / e.sum()).transpose();
  }
  return out;
}

DisentangleScores disentangle_eval(const EmbeddingSet& set_a, const EmbeddingSet& set_b,
                                   const EmbeddingSet& prompts, double temperature) {
  if (prompts.size() != 2) {
    fail(ErrorCode::InvalidArgument, "disentangle_eval takes exactly two prompts");
  }
  const Vector a = zero_shot_scores(set_a, prompts, temperature).column_means();
  const Vector b = zero_shot_scores(set_b, prompts, temperature).column_means();
  return {a[0], a[1], b[0], b[1]};
}

PairedSimilarityReport paired_cosine(const EmbeddingSet& original, const EmbeddingSet& edited,
                                     double tolerance) {
  if (original.size() != edited.size()) {
    fail(ErrorCode::LengthMismatch, "paired sets need equal row counts");
  }
  if (original.dim() != edited.dim()) {
    fail(ErrorCode::DimensionMismatch, "paired sets differ in dimension");
  }
  const RowMatrix a = unit_rows(original.data, "original");
  const RowMatrix b = unit_rows(edited.data, "edited");
  PairedSimilarityReport r;
  r.tolerance = tolerance;
  std::size_t within = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    r.mean_cosine += kernels::dot(kernels::row(a, i), kernels::row(b, i));
    if ((a.row(i) - b.row(i)).norm() <= tolerance) ++within;
  }
  r.mean_cosine /= static_cast<double>(a.rows());
  r.accuracy = static_cast<double>(within) / static_cast<double>(a.rows());
  return r;
}

void write_report_line(std::ostream& out, const ZeroShotScore& s) {
  nlohmann::json j;
  const Vector m = s.column_means();
  j["scores"] = std::vector<double>(m.data(), m.data() + m.size());
  j["prompts"] = s.prompt_labels;
  out << j.dump() << '\n';
}

void write_report_line(std::ostream& out, const PairedSimilarityReport& r) {
  nlohmann::json j;
  j["mean_cosine"] = r.mean_cosine;
  j["accuracy"] = r.accuracy;
  j["tolerance"] = r.tolerance;
  out << j.dump() << '\n';
}

std::string format_score_table(const ZeroShotScore& s, int precision) {
  const Vector m = s.column_means();
  std::ostringstream out;
  for (Eigen::Index j = 0; j < m.size(); ++j) {
    const auto u = static_cast<std::size_t>(j);
    out << (j ? "\t" : "") << (u < s.prompt_labels.size() ? s.prompt_labels[u] : "prompt" + std::to_string(j));
  }
  out << '\n' << std::fixed << std::setprecision(precision);
  for (Eigen::Index j = 0; j < m.size(); ++j) out << (j ? "\t" : "") << m[j];
  out << '\n';
  return out.str();
}

}  // namespace diratlas
