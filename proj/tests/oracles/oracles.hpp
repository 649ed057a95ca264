#pragma once
// Independent reference computations for the tests. Nothing here calls into
// the library's numerical code; inputs and outputs are plain Eigen types.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Explicitly formed sample covariance, 1/(n-1).
inline Mat covariance(const Mat& x) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Vec mean = Vec::Zero(d);
  for (Eigen::Index i = 0; i < n; ++i) mean += x.row(i).transpose();
  mean /= static_cast<double>(n);
  Mat c = Mat::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec r = x.row(i).transpose() - mean;
    for (Eigen::Index a = 0; a < d; ++a) {
      for (Eigen::Index b = 0; b < d; ++b) c(a, b) += r[a] * r[b];
    }
  }
  return c / static_cast<double>(n - 1);
}

struct Eigen_ {
  Vec values;   // nonincreasing
  Mat vectors;  // columns
};

// Cyclic Jacobi rotations on a symmetric matrix.
inline Eigen_ jacobi_eigen(Mat a, int sweeps = 100) {
  const Eigen::Index n = a.rows();
  Mat v = Mat::Identity(n, n);
  for (int s = 0; s < sweeps; ++s) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (off < 1e-30) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), sn = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return a(i, i) > a(j, j); });
  Eigen_ out{Vec(n), Mat(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values[i] = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    out.vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

// Largest-|entry| coordinate made positive.
inline Vec sign_normalized(Vec v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  }
  if (v[best] < 0) v = -v;
  return v;
}

// Indices ordered by value, largest first, ties by ascending index, computed
// by counting how many entries outrank each one.
inline std::vector<std::size_t> rank_desc(const std::vector<double>& v) {
  std::vector<std::size_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] > v[i] || (v[j] == v[i] && j < i)) ++rank;
    }
    out[rank] = i;
  }
  return out;
}

// Central differences of f at x.
inline Vec gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-6) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

inline double cosine(const Vec& a, const Vec& b) { return a.dot(b) / (a.norm() * b.norm()); }

inline double angle_deg(const Vec& a, const Vec& b) {
  const double c = std::min(1.0, std::abs(cosine(a, b)));
  return std::acos(c) * 180.0 / 3.14159265358979323846;
}

// Brute-force one-hot labeling: the token whose encoded prompt is closest to
// the target in cosine.
inline std::size_t best_one_hot(const std::function<Vec(const Vec&)>& encode, const Mat& tokens,
                                const Vec& target) {
  std::size_t best = 0;
  double best_cos = -2.0;
  for (Eigen::Index j = 0; j < tokens.rows(); ++j) {
    const double c = cosine(encode(tokens.row(j).transpose()), target);
    if (c > best_cos) {
      best_cos = c;
      best = static_cast<std::size_t>(j);
    }
  }
  return best;
}

// Wu-Palmer from explicit ancestor chains; parent[i] < 0 marks the root.
inline double wu_palmer(const std::vector<int>& parent, int a, int b) {
  auto chain = [&](int x) {
    std::vector<int> c;
    for (; x >= 0; x = parent[static_cast<std::size_t>(x)]) c.push_back(x);
    return c;
  };
  const auto ca = chain(a), cb = chain(b);
  const std::set<int> sb(cb.begin(), cb.end());
  int lcs = -1;
  for (const int x : ca) {
    if (sb.count(x)) {
      lcs = x;
      break;
    }
  }
  const double depth_lcs = static_cast<double>(chain(lcs).size());
  return 2.0 * depth_lcs / static_cast<double>(ca.size() + cb.size());
}

// Softmax of scaled cosines in long double.
inline std::vector<double> softmax_cosines(const Vec& image, const std::vector<Vec>& prompts,
                                           double temperature) {
  std::vector<long double> logits;
  for (const auto& p : prompts) logits.push_back(temperature * cosine(image, p));
  const long double mx = *std::max_element(logits.begin(), logits.end());
  long double total = 0;
  for (auto& l : logits) total += (l = std::exp(l - mx));
  std::vector<double> out;
  for (const auto l : logits) out.push_back(static_cast<double>(l / total));
  return out;
}

}  // namespace oracle
