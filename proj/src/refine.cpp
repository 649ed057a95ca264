#include "diratlas/refine.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "diratlas/error.hpp"
#include "diratlas/rng.hpp"

namespace diratlas {
namespace {

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

double wu_palmer(const Taxonomy& taxonomy, const std::string& a, const std::string& b) {
  const auto& sa = taxonomy.senses_of(a);
  const auto& sb = taxonomy.senses_of(b);
  double best = 0.0;
  for (const auto x : sa) {
    for (const auto y : sb) {
      const auto lcs = taxonomy.lowest_common_ancestor(x, y);
      const double s = 2.0 * taxonomy.depth[lcs] / (taxonomy.depth[x] + taxonomy.depth[y]);
      best = std::max(best, s);
    }
  }
  return best;
}

DedupResult dedup_labels(const std::vector<LabelEntry>& labels, const Taxonomy& taxonomy,
                         double threshold) {
  DedupResult out;
  for (const auto& candidate : labels) {
    const bool similar = std::any_of(out.kept.begin(), out.kept.end(), [&](const LabelEntry& k) {
      return wu_palmer(taxonomy, k.text, candidate.text) > threshold;
    });
    if (!similar) out.kept.push_back(candidate);
  }
  out.entangled = out.kept.size() > 1;
  return out;
}

std::vector<Direction> split_by_reseed(const std::vector<std::string>& words,
                                       const Lexicon& lexicon, const TextEncoder& encoder,
                                       std::size_t prefix) {
  std::vector<Direction> out;
  for (const auto& w : words) {
    const auto idx = lexicon.find(w);
    if (!idx) fail(ErrorCode::UnknownToken, "'" + w + "' is not in the lexicon");
    const Vector e = lexicon.embeddings.row(static_cast<Eigen::Index>(*idx)).transpose();
    // Encoded prompts keep their polarity: the positive side is the word.
    out.push_back({encoder.forward(prefix, e), {DirectionKind::Reseed, *idx, 0}, 0.0});
  }
  return out;
}

void validate(const DisentangleProblem& p) {
  const Eigen::Index k = p.tokens.cols();
  if (k < 1) fail(ErrorCode::InvalidArgument, "disentangling needs at least one token column");
  if (p.u_hat.size() != p.tokens.rows()) {
    fail(ErrorCode::DimensionMismatch, "direction and token columns differ in dimension");
  }
  if (p.weights.size() != k) {
    fail(ErrorCode::LengthMismatch, "need one weight per token column");
  }
  if ((p.weights.array() < 0).any() || std::abs(p.weights.sum() - 1.0) > 1e-9) {
    fail(ErrorCode::InvalidArgument, "weights must be nonnegative and sum to 1");
  }
  for (Eigen::Index j = 0; j < k; ++j) {
    if (std::abs(p.tokens.col(j).norm() - 1.0) > 1e-6) {
      fail(ErrorCode::InvalidArgument, "token column " + std::to_string(j) + " is not unit norm");
    }
  }
  if (std::abs(p.u_hat.norm() - 1.0) > 1e-6) {
    fail(ErrorCode::InvalidArgument, "entangled direction is not unit norm");
  }
  if (!(p.beta >= 0) || !(p.learning_rate > 0) || p.max_iterations < 1) {
    fail(ErrorCode::InvalidArgument, "beta >= 0, learning rate > 0, max_iterations >= 1");
  }
}

SplitLoss split_loss(const Matrix& b, const DisentangleProblem& p) {
  SplitLoss l;
  l.reconstruction = (p.u_hat - b * p.weights).norm();
  l.independence =
      (b.transpose() * b - Matrix::Identity(b.cols(), b.cols())).norm();
  l.token = -(b.transpose() * p.tokens).trace();
  l.total = p.beta * l.reconstruction + l.independence + l.token;
  return l;
}

SplitLoss split_loss_gradient(const Matrix& b, const DisentangleProblem& p, Matrix& grad) {
  const Vector r = p.u_hat - b * p.weights;
  const Matrix gram = b.transpose() * b - Matrix::Identity(b.cols(), b.cols());
  SplitLoss l;
  l.reconstruction = r.norm();
  l.independence = gram.norm();
  l.token = -(b.transpose() * p.tokens).trace();
  l.total = p.beta * l.reconstruction + l.independence + l.token;

  grad = -p.tokens;
  if (l.reconstruction > 0) grad -= (p.beta / l.reconstruction) * r * p.weights.transpose();
  // d|G|_F/dB = 2 B G / |G|_F for symmetric G
  if (l.independence > 0) grad += (2.0 / l.independence) * b * gram;
  return l;
}

DisentangleResult disentangle(const DisentangleProblem& problem) {
  validate(problem);
  const Eigen::Index d = problem.tokens.rows();
  const Eigen::Index k = problem.tokens.cols();
  Rng rng(problem.seed);
  Matrix b = problem.tokens;
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] += problem.init_noise * rng.normal();

  DisentangleResult out;
  out.b_initial = b;
  AdamState adam(Eigen::Map<const Vector>(b.data(), b.size()),
                 AdamConfig{.learning_rate = problem.learning_rate});
  Matrix grad;
  int quiet = 0;
  double previous = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t it = 0; it < problem.max_iterations; ++it) {
    const Eigen::Map<const Matrix> current(adam.parameters().data(), d, k);
    const SplitLoss l = split_loss_gradient(current, problem, grad);
    if (!std::isfinite(l.total) || !grad.allFinite()) {
      fail(ErrorCode::NonFinite, "disentangle diverged at iteration " + std::to_string(it));
    }
    out.history.push_back(l.total);
    out.iterations = it + 1;
    if (std::abs(l.total - previous) < 1e-8) {
      if (++quiet >= 10) {
        out.converged = true;
        break;
      }
    } else {
      quiet = 0;
    }
    previous = l.total;
    adam.step(Eigen::Map<const Vector>(grad.data(), grad.size()));
  }
  out.b_raw = Eigen::Map<const Matrix>(adam.parameters().data(), d, k);
  out.losses = split_loss(out.b_raw, problem);
  if (!std::isfinite(out.losses.total)) {
    fail(ErrorCode::NonFinite, "disentangle produced a non-finite loss");
  }
  out.b = out.b_raw;
  for (Eigen::Index j = 0; j < k; ++j) {
    const double n = out.b.col(j).norm();
    if (n < 1e-12) fail(ErrorCode::NonFinite, "atomic direction " + std::to_string(j) + " collapsed");
    out.b.col(j) /= n;
  }
  return out;
}

DisentangleProblem make_disentangle_problem(const Vector& u_hat,
                                            const std::vector<LabelEntry>& kept,
                                            const Lexicon& lexicon, const TextEncoder& encoder,
                                            std::size_t prefix) {
  if (kept.empty()) fail(ErrorCode::InvalidArgument, "no labels to disentangle");
  DisentangleProblem p;
  p.u_hat = u_hat / u_hat.norm();
  const auto k = static_cast<Eigen::Index>(kept.size());
  p.tokens.resize(u_hat.size(), k);
  p.weights.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& entry = kept[static_cast<std::size_t>(j)];
    if (entry.token >= lexicon.size()) fail(ErrorCode::UnknownToken, "label index out of range");
    const Vector e = lexicon.embeddings.row(static_cast<Eigen::Index>(entry.token)).transpose();
    p.tokens.col(j) = encoder.forward(prefix, e);
    p.weights[j] = std::max(entry.score, 0.0);
  }
  const double total = p.weights.sum();
  if (total > 0) {
    p.weights /= total;
  } else {
    p.weights.setConstant(1.0 / static_cast<double>(k));
  }
  return p;
}

void save_disentangle_result(const DisentangleResult& result, std::size_t direction_id,
                             const std::filesystem::path& stem) {
  save_matrix(RowMatrix(result.b.transpose()), stem.string() + ".emb");
  save_lines({"direction " + std::to_string(direction_id),
              "L_rec " + fmt(result.losses.reconstruction),
              "L_indep " + fmt(result.losses.independence),
              "L_tok " + fmt(result.losses.token), "L_split " + fmt(result.losses.total),
              "iterations " + std::to_string(result.iterations),
              std::string("converged ") + (result.converged ? "true" : "false")},
             stem.string() + ".txt");
}

}  // namespace diratlas
