#include "diratlas/labeler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "diratlas/error.hpp"
#include "diratlas/kernels.hpp"

namespace diratlas {
namespace {

double log_sigmoid(double z) {
  // log(1 / (1 + e^-z)) without overflow
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

Vector unit_target(const Vector& target) {
  const double n = target.norm();
  if (std::abs(n - 1.0) > 1e-6) {
    fail(ErrorCode::InvalidArgument, "labeling target must be unit norm (got " +
                                         std::to_string(n) + ")");
  }
  return target / n;
}

// Weighted regularizer value and its gradient with respect to sigmoid(z).
double regularizer(const Vector& z, const Vector& s, const LabelingConfig& cfg, Vector* d_sigma) {
  const Eigen::Index m = s.size();
  switch (cfg.regularizer) {
    case Regularizer::Entropy: {
      const double total = s.sum();
      double h = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        const double p = s[i] / total;
        if (p > 0) h -= p * std::log(p);
      }
      if (d_sigma) {
        d_sigma->resize(m);
        for (Eigen::Index i = 0; i < m; ++i) {
          const double p = s[i] / total;
          (*d_sigma)[i] = p > 0 ? -cfg.lambda * (std::log(p) + h) / total : 0.0;
        }
      }
      return cfg.lambda * h;
    }
    case Regularizer::BinaryEntropy: {
      double h = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        h -= s[i] * log_sigmoid(z[i]) + (1.0 - s[i]) * log_sigmoid(-z[i]);
      }
      if (d_sigma) {
        // dh/dsigma = log((1 - sigma) / sigma) = -z
        *d_sigma = -cfg.lambda * z;
      }
      return cfg.lambda * h;
    }
    case Regularizer::L1: {
      if (d_sigma) *d_sigma = Vector::Constant(m, cfg.l1_lambda);
      return cfg.l1_lambda * s.sum();
    }
  }
  return 0.0;
}

LossTerms evaluate(const Vector& z, const Vector& target, const TextEncoder& encoder,
                   const Lexicon& lexicon, std::size_t prefix, const LabelingConfig& cfg,
                   Vector* grad) {
  if (z.size() != static_cast<Eigen::Index>(lexicon.size())) {
    fail(ErrorCode::LengthMismatch, "selection vector has length " + std::to_string(z.size()) +
                                        ", lexicon has " + std::to_string(lexicon.size()));
  }
  const Vector x = unit_target(target);
  const Vector s = sigmoid(z);
  const Vector e = kernels::gemv_t(lexicon.embeddings, s);
  const Vector t = encoder.forward(prefix, e);
  LossTerms out;
  out.cosine = 1.0 - kernels::dot(t, x) / t.norm();
  Vector d_reg;
  out.regularizer = regularizer(z, s, cfg, grad ? &d_reg : nullptr);
  out.total = out.cosine + out.regularizer;
  if (grad) {
    // t is unit by contract, so d(1 - t.x)/dt = -x and the encoder VJP
    // carries the normalization.
    const Vector d_e = encoder.vjp(prefix, e, -x);
    Vector d_sigma = kernels::gemv(lexicon.embeddings, d_e);
    d_sigma += d_reg;
    *grad = (d_sigma.array() * s.array() * (1.0 - s.array())).matrix();
  }
  return out;
}

}  // namespace

std::string_view to_string(Regularizer r) {
  switch (r) {
    case Regularizer::Entropy: return "entropy";
    case Regularizer::BinaryEntropy: return "binary_entropy";
    case Regularizer::L1: return "l1";
  }
  return "unknown";
}

Regularizer parse_regularizer(std::string_view name) {
  if (name == "entropy") return Regularizer::Entropy;
  if (name == "binary_entropy") return Regularizer::BinaryEntropy;
  if (name == "l1") return Regularizer::L1;
  fail(ErrorCode::InvalidArgument, "unknown regularizer '" + std::string(name) + "'");
}

void validate(const LabelingConfig& cfg) {
  if (cfg.max_iterations < 1) fail(ErrorCode::InvalidArgument, "max_iterations must be >= 1");
  if (!(cfg.lambda >= 0)) fail(ErrorCode::InvalidArgument, "lambda must be >= 0");
  if (!(cfg.l1_lambda >= 0)) fail(ErrorCode::InvalidArgument, "l1_lambda must be >= 0");
  if (cfg.top_k < 1) fail(ErrorCode::InvalidArgument, "top_k must be >= 1");
  if (!(cfg.learning_rate > 0)) fail(ErrorCode::InvalidArgument, "learning rate must be > 0");
}

Vector sigmoid(const Vector& z) {
  Vector s(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double v = z[i];
    if (v >= 0) {
      s[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double ev = std::exp(v);
      s[i] = ev / (1.0 + ev);
    }
  }
  return s;
}

Vector soft_token(const Lexicon& lexicon, const Vector& z) {
  if (z.size() != static_cast<Eigen::Index>(lexicon.size())) {
    fail(ErrorCode::LengthMismatch, "selection vector has length " + std::to_string(z.size()) +
                                        ", lexicon has " + std::to_string(lexicon.size()));
  }
  return kernels::gemv_t(lexicon.embeddings, sigmoid(z));
}

LossTerms labeling_loss(const Vector& z, const Vector& target, const TextEncoder& encoder,
                        const Lexicon& lexicon, std::size_t prefix, const LabelingConfig& cfg) {
  return evaluate(z, target, encoder, lexicon, prefix, cfg, nullptr);
}

LossTerms labeling_loss_gradient(const Vector& z, const Vector& target,
                                 const TextEncoder& encoder, const Lexicon& lexicon,
                                 std::size_t prefix, const LabelingConfig& cfg, Vector& grad) {
  return evaluate(z, target, encoder, lexicon, prefix, cfg, &grad);
}

SelectionState run_selection(const Vector& target, const TextEncoder& encoder,
                             const Lexicon& lexicon, std::size_t prefix,
                             const LabelingConfig& cfg) {
  validate(cfg);
  AdamState adam(Vector::Zero(static_cast<Eigen::Index>(lexicon.size())),
                 AdamConfig{.learning_rate = cfg.learning_rate});
  SelectionState state;
  state.prefix = prefix;
  state.history.reserve(cfg.max_iterations + 1);
  Vector grad;
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    const LossTerms l =
        labeling_loss_gradient(adam.parameters(), target, encoder, lexicon, prefix, cfg, grad);
    state.history.push_back(l.total);
    adam.step(grad);
  }
  state.z = adam.parameters();
  state.final_loss = labeling_loss(state.z, target, encoder, lexicon, prefix, cfg);
  state.history.push_back(state.final_loss.total);
  state.mixture = soft_token(lexicon, state.z);
  state.refined = encoder.forward(prefix, state.mixture);
  return state;
}

std::vector<LabelEntry> topk_tokens(const Lexicon& lexicon, const Vector& e, std::size_t k,
                                    bool skip_blocked) {
  const Vector scores = kernels::gemv(lexicon.embeddings, e);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < lexicon.size(); ++i) {
    if (!(skip_blocked && lexicon.is_blocked(i))) order.push_back(i);
  }
  const auto take = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&scores](std::size_t a, std::size_t b) {
                      const double sa = scores[static_cast<Eigen::Index>(a)];
                      const double sb = scores[static_cast<Eigen::Index>(b)];
                      return sa != sb ? sa > sb : a < b;
                    });
  std::vector<LabelEntry> out;
  for (std::size_t i = 0; i < take; ++i) {
    const auto tok = order[i];
    out.push_back({tok, lexicon.tokens[tok], scores[static_cast<Eigen::Index>(tok)]});
  }
  return out;
}

std::vector<LabelEntry> merge_labels(const std::vector<std::vector<LabelEntry>>& per_prefix) {
  std::map<std::size_t, LabelEntry> best;
  for (const auto& list : per_prefix) {
    for (const auto& entry : list) {
      const auto [it, inserted] = best.emplace(entry.token, entry);
      if (!inserted && entry.score > it->second.score) it->second = entry;
    }
  }
  std::vector<LabelEntry> out;
  for (auto& [tok, entry] : best) out.push_back(entry);
  std::stable_sort(out.begin(), out.end(), [](const LabelEntry& a, const LabelEntry& b) {
    return a.score != b.score ? a.score > b.score : a.token < b.token;
  });
  return out;
}

LabelSet optimize_labels(const Vector& target, const TextEncoder& encoder,
                         const Lexicon& lexicon, const std::vector<std::size_t>& prefixes,
                         const LabelingConfig& cfg, std::size_t direction_id) {
  if (prefixes.empty()) fail(ErrorCode::InvalidArgument, "no prefixes to label with");
  validate(cfg);
  LabelSet out;
  out.direction_id = direction_id;
  std::vector<std::vector<LabelEntry>> per_prefix;
  bool have_best = false;
  for (const auto prefix : prefixes) {
    SelectionState run = run_selection(target, encoder, lexicon, prefix, cfg);
    per_prefix.push_back(topk_tokens(lexicon, run.mixture, cfg.top_k, true));
    if (!have_best || run.final_loss.total < out.final_loss) {
      have_best = true;
      out.final_loss = run.final_loss.total;
      out.initial_loss = run.history.front();
      out.best_prefix = prefix;
      out.refined = run.refined;
    }
  }
  out.entries = merge_labels(per_prefix);
  out.no_progress = out.final_loss >= out.initial_loss;
  return out;
}

}  // namespace diratlas
