#include "diratlas/project.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "diratlas/embio.hpp"
#include "diratlas/error.hpp"
#include "diratlas/kernels.hpp"
#include "diratlas/rng.hpp"

namespace diratlas {
namespace {

struct Sample {
  const double* x;
  double y;
};

// 0.5 |w|^2 + C sum_i max(0, 1 - y_i (w.x_i + b)), bias unregularized in the
// reported objective but regularized during training as a constant feature.
double primal_objective(const std::vector<Sample>& samples, std::size_t q, const Vector& w,
                        double c) {
  double hinge = 0.0;
  for (const auto& s : samples) {
    const double f = kernels::active().dot(w.data(), s.x, q) + w[static_cast<Eigen::Index>(q)];
    hinge += std::max(0.0, 1.0 - s.y * f);
  }
  return 0.5 * w.squaredNorm() + c * hinge;
}

}  // namespace

LatentCodeSet make_latent_set(RowMatrix codes, std::optional<LatentLayout> layout) {
  if (codes.rows() < 2 || codes.cols() < 1) {
    fail(ErrorCode::InvalidArgument, "latent code set needs at least 2 rows");
  }
  if (!codes.allFinite()) fail(ErrorCode::NonFinite, "latent codes must be finite");
  LatentLayout l = layout.value_or(LatentLayout::flat(static_cast<std::size_t>(codes.cols())));
  if (static_cast<Eigen::Index>(l.size()) != codes.cols()) {
    fail(ErrorCode::DimensionMismatch, "layout " + std::to_string(l.layers) + "x" +
                                           std::to_string(l.width) + " does not match q=" +
                                           std::to_string(codes.cols()));
  }
  return LatentCodeSet{std::move(codes), l};
}

LatentCodeSet select_rows(const LatentCodeSet& set, const std::vector<std::size_t>& rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), set.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= static_cast<std::size_t>(set.size())) {
      fail(ErrorCode::InvalidArgument, "latent row " + std::to_string(rows[i]) + " out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = set.codes.row(static_cast<Eigen::Index>(rows[i]));
  }
  return LatentCodeSet{std::move(out), set.layout};
}

void save_latent_set(const LatentCodeSet& set, const std::filesystem::path& stem) {
  save_matrix(set.codes, stem.string() + ".emb");
  const std::string layout =
      set.layout.per_layer ? "per_layer " + std::to_string(set.layout.layers) + " " +
                                 std::to_string(set.layout.width)
                           : std::string("flat");
  save_lines({layout}, stem.string() + ".layout");
}

LatentCodeSet load_latent_set(const std::filesystem::path& stem) {
  RowMatrix codes = load_matrix(stem.string() + ".emb");
  const std::filesystem::path layout_path = stem.string() + ".layout";
  if (!std::filesystem::exists(layout_path)) return make_latent_set(std::move(codes));
  const auto lines = load_lines(layout_path);
  if (lines.empty()) fail(ErrorCode::BadFormat, layout_path.string() + " is empty");
  std::istringstream in(lines.front());
  std::string kind;
  in >> kind;
  if (kind == "flat") return make_latent_set(std::move(codes));
  if (kind == "per_layer") {
    std::size_t layers = 0, width = 0;
    in >> layers >> width;
    if (!in || layers == 0 || width == 0) {
      fail(ErrorCode::BadFormat, "malformed per_layer record '" + lines.front() + "'");
    }
    return make_latent_set(std::move(codes), LatentLayout::layered(layers, width));
  }
  fail(ErrorCode::BadFormat, "unknown layout '" + kind + "'");
}

SvmResult svm_direction(const LatentCodeSet& positive, const LatentCodeSet& negative,
                        const SvmConfig& cfg) {
  if (positive.size() < 1 || negative.size() < 1) {
    fail(ErrorCode::InvalidArgument, "both classes need at least one code");
  }
  if (positive.dim() != negative.dim()) {
    fail(ErrorCode::DimensionMismatch, "positive and negative codes differ in width");
  }
  if (!(cfg.c_param > 0) || cfg.max_iter < 1) {
    fail(ErrorCode::InvalidArgument, "c_param must be > 0 and max_iter >= 1");
  }
  const auto q = static_cast<std::size_t>(positive.dim());
  std::vector<Sample> samples;
  for (Eigen::Index i = 0; i < positive.size(); ++i) {
    samples.push_back({positive.codes.data() + i * positive.dim(), 1.0});
  }
  for (Eigen::Index i = 0; i < negative.size(); ++i) {
    samples.push_back({negative.codes.data() + i * negative.dim(), -1.0});
  }
  // Canonical per-class order, so the result ignores input row order.
  const auto width = static_cast<std::ptrdiff_t>(q);
  std::stable_sort(samples.begin(), samples.end(), [width](const Sample& a, const Sample& b) {
    if (a.y != b.y) return a.y > b.y;
    return std::lexicographical_compare(a.x, a.x + width, b.x, b.x + width);
  });
  const double n = static_cast<double>(samples.size());
  const double lambda = 1.0 / (cfg.c_param * n);

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const auto qq = static_cast<Eigen::Index>(q);
  Vector w = Vector::Zero(qq + 1);
  Vector average = Vector::Zero(qq + 1);
  Vector best = average;
  double best_objective = std::numeric_limits<double>::infinity();
  double last_objective = std::numeric_limits<double>::infinity();
  std::size_t t = 0;
  std::size_t averaged = 0;
  SvmResult out;
  const double radius = 1.0 / std::sqrt(lambda);
  for (std::size_t epoch = 0; epoch < cfg.max_iter; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (const auto idx : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const auto& s = samples[idx];
      const double margin = s.y * (kernels::active().dot(w.data(), s.x, q) + w[qq]);
      w *= 1.0 - eta * lambda;
      if (margin < 1.0) {
        kernels::active().axpy(eta * s.y, s.x, w.data(), q);
        w[qq] += eta * s.y;
      }
      const double nw = w.norm();
      if (nw > radius) w *= radius / nw;
      // Running mean of the iterates from the second epoch on.
      if (epoch > 0) {
        ++averaged;
        average += (w - average) / static_cast<double>(averaged);
      }
    }
    const Vector& candidate = epoch > 0 ? average : w;
    const double obj = primal_objective(samples, q, candidate, cfg.c_param);
    out.epochs = epoch + 1;
    if (obj < best_objective) {
      best_objective = obj;
      best = candidate;
    }
    if (epoch > 0 && std::abs(last_objective - obj) <= cfg.tol * std::max(1.0, std::abs(obj))) {
      out.converged = true;
      break;
    }
    last_objective = obj;
  }

  out.weights = best.head(qq);
  out.bias = best[qq];
  out.objective = best_objective;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    const double f = kernels::active().dot(out.weights.data(), s.x, q) + out.bias;
    if (s.y * f > 0) ++correct;
  }
  out.training_accuracy = static_cast<double>(correct) / n;
  const double nw = out.weights.norm();
  out.degenerate = out.training_accuracy <= 0.5 || nw < 1e-12;

  Vector dir = nw >= 1e-12 ? Vector(out.weights / nw) : Vector(Vector::Unit(qq, 0));
  // Orient toward the positive class mean.
  const Vector mean_gap = positive.codes.colwise().mean().transpose() -
                          negative.codes.colwise().mean().transpose();
  if (kernels::dot(dir, mean_gap) < 0) dir = -dir;
  out.direction.vector = std::move(dir);
  out.direction.margin = nw >= 1e-12 ? 1.0 / nw : 0.0;
  return out;
}

Vector apply_edit(const Vector& code, const EditDirection& direction, double alpha,
                  const LatentLayout& layout, const std::optional<std::vector<bool>>& layer_mask) {
  if (code.size() != direction.vector.size() ||
      static_cast<Eigen::Index>(layout.size()) != code.size()) {
    fail(ErrorCode::DimensionMismatch, "code, direction and layout widths disagree");
  }
  Vector out = code;
  if (!layer_mask) {
    kernels::axpy(alpha, {direction.vector.data(), static_cast<std::size_t>(code.size())},
                  {out.data(), static_cast<std::size_t>(out.size())});
    return out;
  }
  if (!layout.per_layer || layer_mask->size() != layout.layers) {
    fail(ErrorCode::DimensionMismatch, "layer mask needs a per_layer layout with one entry per layer");
  }
  for (std::size_t l = 0; l < layout.layers; ++l) {
    if (!(*layer_mask)[l]) continue;
    const auto offset = static_cast<std::ptrdiff_t>(l * layout.width);
    kernels::axpy(alpha, {direction.vector.data() + offset, layout.width},
                  {out.data() + offset, layout.width});
  }
  return out;
}

}  // namespace diratlas
