#include "diratlas/dirext.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/SVD>

#include "diratlas/error.hpp"
#include "diratlas/kernels.hpp"
#include "diratlas/rng.hpp"

namespace diratlas {
namespace {

constexpr double kTieTolerance = 1e-10;
constexpr double kRankTolerance = 1e-12;

Matrix centered(const EmbeddingSet& set, const Vector& mean) {
  Matrix c = set.data;
  c.rowwise() -= mean.transpose();
  return c;
}

// Right singular vectors and squared singular values of the centered data,
// padded to d entries.
struct Spectrum {
  Matrix axes;     // d x d, columns ordered by nonincreasing value
  Vector squared;  // d
};

Spectrum centered_spectrum(const Matrix& c) {
  const Eigen::Index d = c.cols();
  Spectrum out;
  out.squared = Vector::Zero(d);
  if (c.rows() >= d) {
    Eigen::BDCSVD<Matrix> svd(c, Eigen::ComputeThinV);
    out.axes = svd.matrixV();
    out.squared.head(svd.singularValues().size()) = svd.singularValues().array().square();
  } else {
    Eigen::BDCSVD<Matrix> svd(c, Eigen::ComputeFullV);
    out.axes = svd.matrixV();
    out.squared.head(svd.singularValues().size()) = svd.singularValues().array().square();
  }
  return out;
}

// Larger value at the first differing coordinate sorts first.
bool lexicographically_greater(const Vector& a, const Vector& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return a[i] > b[i];
  }
  return false;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double projected_variance(const EmbeddingSet& set, const Vector& mean, const Vector& v) {
  if (set.size() < 2) return 0.0;
  const Vector proj = kernels::gemv(set.data, v);
  const double offset = kernels::dot(mean, v);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < proj.size(); ++i) {
    const double p = proj[i] - offset;
    acc += p * p;
  }
  return acc / static_cast<double>(set.size() - 1);
}

// (W W^T)^{-1/2} W
Matrix symmetric_decorrelation(const Matrix& w) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(w * w.transpose());
  const Vector inv_sqrt = eig.eigenvalues().array().max(1e-300).rsqrt();
  return eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose() * w;
}

}  // namespace

std::string_view to_string(DirectionKind kind) {
  switch (kind) {
    case DirectionKind::Pca: return "pca";
    case DirectionKind::Ica: return "ica";
    case DirectionKind::Random: return "random";
    case DirectionKind::Hybrid: return "hybrid";
    case DirectionKind::Reseed: return "reseed";
    case DirectionKind::Atomic: return "atomic";
  }
  return "unknown";
}

void normalize_sign(Vector& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  }
  if (v.size() > 0 && v[best] < 0) v = -v;
}

Vector mean_vector(const EmbeddingSet& set) {
  if (set.size() < 1) fail(ErrorCode::InvalidArgument, "mean of an empty set");
  Vector ones = Vector::Constant(set.size(), 1.0 / static_cast<double>(set.size()));
  return kernels::gemv_t(set.data, ones);
}

Vector pca_spectrum(const EmbeddingSet& set) {
  if (set.size() < 2) fail(ErrorCode::InvalidArgument, "PCA needs at least 2 samples");
  const Spectrum s = centered_spectrum(centered(set, mean_vector(set)));
  return s.squared / static_cast<double>(set.size() - 1);
}

DirectionSet pca_directions(const EmbeddingSet& set, std::size_t k) {
  if (set.size() < 2) fail(ErrorCode::InvalidArgument, "PCA needs at least 2 samples");
  const auto d = static_cast<std::size_t>(set.dim());
  if (k < 1 || k > d) {
    fail(ErrorCode::InvalidArgument, "PCA count " + std::to_string(k) + " outside [1, " +
                                         std::to_string(d) + "]");
  }
  DirectionSet out;
  out.mean = mean_vector(set);
  const Spectrum s = centered_spectrum(centered(set, out.mean));
  const double scale = 1.0 / static_cast<double>(set.size() - 1);

  std::vector<Direction> all(d);
  for (std::size_t i = 0; i < d; ++i) {
    all[i].vector = s.axes.col(static_cast<Eigen::Index>(i));
    normalize_sign(all[i].vector);
    all[i].variance = s.squared[static_cast<Eigen::Index>(i)] * scale;
  }
  // Deterministic order within runs of (numerically) equal eigenvalues.
  const double tie = kTieTolerance * std::max(1.0, all.front().variance);
  for (std::size_t begin = 0; begin < d;) {
    std::size_t end = begin + 1;
    while (end < d && all[begin].variance - all[end].variance <= tie) ++end;
    if (end - begin > 1) {
      std::sort(all.begin() + static_cast<std::ptrdiff_t>(begin),
                all.begin() + static_cast<std::ptrdiff_t>(end),
                [](const Direction& a, const Direction& b) {
                  return lexicographically_greater(a.vector, b.vector);
                });
    }
    begin = end;
  }
  all.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    all[i].provenance = {DirectionKind::Pca, i, 0};
    if (all[i].variance < kRankTolerance) out.rank_deficient = true;
  }
  out.directions = std::move(all);
  return out;
}

Whitening whiten(const EmbeddingSet& set, std::size_t k) {
  const auto n = static_cast<std::size_t>(set.size());
  const auto d = static_cast<std::size_t>(set.dim());
  if (k < 1 || k > d || n <= k) {
    fail(ErrorCode::InvalidArgument, "whitening needs n > k and 1 <= k <= d");
  }
  Whitening w;
  w.mean = mean_vector(set);
  const Matrix c = centered(set, w.mean);
  const Spectrum s = centered_spectrum(c);
  const auto kk = static_cast<Eigen::Index>(k);
  const Vector eig = s.squared.head(kk) / static_cast<double>(n);
  if (eig[kk - 1] < kRankTolerance) {
    fail(ErrorCode::RankDeficient, "component " + std::to_string(k - 1) +
                                       " has variance below 1e-12; cannot whiten");
  }
  const Matrix axes = s.axes.leftCols(kk);
  w.whiten = eig.array().rsqrt().matrix().asDiagonal() * axes.transpose();
  w.unwhiten = axes * eig.array().sqrt().matrix().asDiagonal();
  w.whitened = c * w.whiten.transpose();
  return w;
}

DirectionSet ica_directions(const EmbeddingSet& set, std::size_t k, const IcaConfig& cfg) {
  if (k < 2) fail(ErrorCode::InvalidArgument, "ICA needs k >= 2");
  const Whitening wh = whiten(set, k);
  const Matrix& z = wh.whitened;
  const auto kk = static_cast<Eigen::Index>(k);
  const double inv_n = 1.0 / static_cast<double>(z.rows());

  Rng rng(cfg.seed);
  Matrix w(kk, kk);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  w = symmetric_decorrelation(w);

  Matrix best = w;
  double best_lim = std::numeric_limits<double>::infinity();
  bool converged = false;
  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    const Matrix wx = z * w.transpose();  // n x k source estimates
    const Matrix g = wx.array().tanh().matrix();
    const Vector g_prime_mean = (1.0 - g.array().square()).colwise().mean().transpose();
    Matrix next = (g.transpose() * z) * inv_n - g_prime_mean.asDiagonal() * w;
    next = symmetric_decorrelation(next);
    const double lim =
        ((next * w.transpose()).diagonal().array().abs() - 1.0).abs().maxCoeff();
    w = next;
    if (lim < best_lim) {
      best_lim = lim;
      best = w;
    }
    if (lim < cfg.tol) {
      converged = true;
      break;
    }
  }

  const Matrix mixing = wh.unwhiten * best.transpose();  // d x k
  DirectionSet out;
  out.mean = wh.mean;
  out.converged = converged;
  std::vector<Direction> dirs(k);
  for (std::size_t j = 0; j < k; ++j) {
    const Vector col = mixing.col(static_cast<Eigen::Index>(j));
    dirs[j].variance = col.squaredNorm();
    dirs[j].vector = col / col.norm();
    normalize_sign(dirs[j].vector);
  }
  std::stable_sort(dirs.begin(), dirs.end(),
                   [](const Direction& a, const Direction& b) { return a.variance > b.variance; });
  for (std::size_t j = 0; j < k; ++j) dirs[j].provenance = {DirectionKind::Ica, j, cfg.seed};
  out.directions = std::move(dirs);
  return out;
}

DirectionSet random_directions(std::uint64_t seed, std::size_t count, std::size_t d) {
  if (count < 1 || d < 1) fail(ErrorCode::InvalidArgument, "random directions need count, d >= 1");
  Rng rng(seed);
  DirectionSet out;
  for (std::size_t i = 0; i < count; ++i) {
    Vector v;
    double nv = 0.0;
    do {
      v = rng.normal_vector(static_cast<Eigen::Index>(d));
      nv = v.norm();
    } while (nv < 1e-12);
    v /= nv;
    normalize_sign(v);
    out.directions.push_back({std::move(v), {DirectionKind::Random, i, seed}, 0.0});
  }
  return out;
}

DirectionSet hybrid_directions(const EmbeddingSet& set, std::size_t n_pca, std::size_t n_random,
                               double corr_threshold, std::uint64_t seed) {
  const auto d = static_cast<std::size_t>(set.dim());
  if (n_pca + n_random > d) {
    fail(ErrorCode::InvalidArgument, "n_pca + n_random exceeds the dimension");
  }
  if (set.size() < 2) fail(ErrorCode::InvalidArgument, "hybrid directions need n >= 2");
  DirectionSet out;
  if (n_pca > 0) {
    out = pca_directions(set, n_pca);
  } else {
    out.mean = mean_vector(set);
  }
  const auto pca_count = out.directions.size();

  Rng rng(seed);
  const std::size_t max_attempts = 1000 * n_random;
  std::size_t attempts = 0;
  std::size_t accepted = 0;
  while (accepted < n_random) {
    if (attempts++ >= max_attempts) {
      fail(ErrorCode::ExhaustedAttempts,
           std::to_string(max_attempts) + " candidates failed the correlation threshold " +
               fmt_double(corr_threshold));
    }
    Vector v = rng.normal_vector(static_cast<Eigen::Index>(d));
    // Two passes of projection keep the residual orthogonal to rounding level.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < pca_count; ++i) {
        const Vector& u = out.directions[i].vector;
        v -= kernels::dot(u, v) * u;
      }
    }
    const double nv = v.norm();
    if (nv < 1e-12) continue;
    v /= nv;
    normalize_sign(v);
    double worst = 0.0;
    for (const auto& other : out.directions) {
      worst = std::max(worst, std::abs(kernels::dot(other.vector, v)));
    }
    if (!(worst < corr_threshold)) continue;
    const double var = projected_variance(set, out.mean, v);
    out.directions.push_back({std::move(v), {DirectionKind::Hybrid, accepted, seed}, var});
    ++accepted;
  }
  return out;
}

std::vector<double> direction_alignment(const DirectionSet& a, const DirectionSet& b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::LengthMismatch, std::to_string(a.size()) + " vs " +
                                        std::to_string(b.size()) + " directions");
  }
  std::vector<double> out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Vector& u = a.directions[i].vector;
    const Vector& v = b.directions[i].vector;
    if (u.size() != v.size()) fail(ErrorCode::DimensionMismatch, "direction dimensions differ");
    out.push_back(std::abs(kernels::dot(u, v)) / (u.norm() * v.norm()));
  }
  return out;
}

std::string format_provenance(const Direction& d) {
  std::string line(to_string(d.provenance.kind));
  if (d.provenance.kind == DirectionKind::Random || d.provenance.kind == DirectionKind::Hybrid) {
    line += ' ' + std::to_string(d.provenance.seed);
  }
  if (d.provenance.kind == DirectionKind::Reseed || d.provenance.kind == DirectionKind::Atomic) {
    line += ' ' + std::to_string(d.provenance.source);
  }
  line += ' ' + std::to_string(d.provenance.index);
  line += ' ' + fmt_double(d.variance);
  return line;
}

Provenance parse_provenance(const std::string& line, double& variance) {
  std::istringstream in(line);
  std::string kind;
  in >> kind;
  Provenance p;
  if (kind == "pca") p.kind = DirectionKind::Pca;
  else if (kind == "ica") p.kind = DirectionKind::Ica;
  else if (kind == "random") p.kind = DirectionKind::Random;
  else if (kind == "hybrid") p.kind = DirectionKind::Hybrid;
  else if (kind == "reseed") p.kind = DirectionKind::Reseed;
  else if (kind == "atomic") p.kind = DirectionKind::Atomic;
  else fail(ErrorCode::BadFormat, "unknown provenance '" + kind + "'");
  if (p.kind == DirectionKind::Random || p.kind == DirectionKind::Hybrid) in >> p.seed;
  if (p.kind == DirectionKind::Reseed || p.kind == DirectionKind::Atomic) in >> p.source;
  std::string var_text;
  in >> p.index >> var_text;
  if (!in) fail(ErrorCode::BadFormat, "malformed provenance line '" + line + "'");
  const auto [ptr, ec] = std::from_chars(var_text.data(), var_text.data() + var_text.size(), variance);
  if (ec != std::errc() || ptr != var_text.data() + var_text.size()) {
    fail(ErrorCode::BadFormat, "malformed variance in '" + line + "'");
  }
  return p;
}

void save_direction_set(const DirectionSet& set, const std::filesystem::path& stem) {
  if (set.directions.empty()) fail(ErrorCode::InvalidArgument, "empty direction set");
  const auto d = set.directions.front().vector.size();
  RowMatrix m(static_cast<Eigen::Index>(set.size()), d);
  std::vector<std::string> prov;
  for (std::size_t i = 0; i < set.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = set.directions[i].vector.transpose();
    prov.push_back(format_provenance(set.directions[i]));
  }
  save_matrix(m, stem.string() + ".emb");
  save_lines(prov, stem.string() + ".prov");
  if (set.mean.size() > 0) {
    save_matrix(RowMatrix(set.mean.transpose()), stem.string() + ".mean.emb");
  }
}

DirectionSet load_direction_set(const std::filesystem::path& stem) {
  const RowMatrix m = load_matrix(stem.string() + ".emb");
  const auto prov = load_lines(stem.string() + ".prov");
  if (static_cast<Eigen::Index>(prov.size()) != m.rows()) {
    fail(ErrorCode::CountMismatch, std::to_string(prov.size()) + " provenance lines for " +
                                       std::to_string(m.rows()) + " directions");
  }
  DirectionSet out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Direction dir;
    dir.vector = m.row(i).transpose();
    dir.provenance = parse_provenance(prov[static_cast<std::size_t>(i)], dir.variance);
    out.directions.push_back(std::move(dir));
  }
  const std::filesystem::path mean_path = stem.string() + ".mean.emb";
  if (std::filesystem::exists(mean_path)) {
    const RowMatrix mean = load_matrix(mean_path);
    out.mean = mean.row(0).transpose();
  }
  return out;
}

}  // namespace diratlas
