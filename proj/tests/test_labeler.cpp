#include <doctest.h>

#include <cmath>
#include <set>

#include "diratlas/labeler.hpp"
#include "diratlas/synthbench.hpp"
#include "oracles/oracles.hpp"
#include "support.hpp"

using namespace diratlas;

namespace {

Lexicon identity_lexicon(std::size_t m) {
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < m; ++i) tokens.push_back("t" + std::to_string(i));
  return make_lexicon(tokens, RowMatrix::Identity(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)));
}

ToyEncoder identity_encoder(Eigen::Index d) {
  return build_toy_encoder(RowMatrix::Identity(d, d), RowMatrix::Zero(1, d));
}

Lexicon lexicon_of(std::vector<std::string> tokens, RowMatrix e, std::vector<std::string> block = {}) {
  return make_lexicon(std::move(tokens), std::move(e), block);
}

}  // namespace

TEST_CASE("soft token mixture") {
  Rng rng(1);
  const RowMatrix e = test::gaussian(rng, 5, 3);
  const Lexicon lex = lexicon_of({"a", "b", "c", "d", "f"}, e);
  CHECK((soft_token(lex, Vector::Zero(5)) - 0.5 * e.colwise().sum().transpose()).norm() < 1e-14);

  const Lexicon id = identity_lexicon(2);
  Vector z(2);
  z << 10, -10;
  const Vector mix = soft_token(id, z);
  CHECK(std::abs(mix[0] - 0.9999546021312976) < 1e-12);
  CHECK(std::abs(mix[1] - 4.5397868702434395e-05) < 1e-15);
  CHECK(soft_token(lex, Vector::Constant(5, -60)).norm() < 1e-20);
  CHECK(test::code_of([&] { soft_token(lex, Vector::Zero(4)); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("labeling loss values") {
  const Lexicon id = identity_lexicon(4);
  const ToyEncoder enc = identity_encoder(4);
  LabelingConfig cfg;
  cfg.lambda = 0;
  const Vector target = Vector::Constant(4, 0.5);  // encode(E^T sigmoid(0))
  CHECK(std::abs(labeling_loss(Vector::Zero(4), target, enc, id, 0, cfg).total) < 1e-15);

  cfg.lambda = 1;
  const LossTerms uniform = labeling_loss(Vector::Zero(4), target, enc, id, 0, cfg);
  CHECK(std::abs(uniform.regularizer - std::log(4.0)) < 1e-12);

  cfg.lambda = 0;
  Vector z = Vector::Constant(4, -40);
  z[0] = 40;
  const LossTerms ortho = labeling_loss(z, Vector::Unit(4, 1), enc, id, 0, cfg);
  CHECK(std::abs(ortho.total - 1.0) < 1e-12);

  cfg.regularizer = Regularizer::L1;
  cfg.l1_lambda = 0.5;
  const LossTerms l1 = labeling_loss(Vector::Zero(4), target, enc, id, 0, cfg);
  CHECK(std::abs(l1.regularizer - 0.5 * 2.0) < 1e-12);

  cfg.regularizer = Regularizer::BinaryEntropy;
  cfg.lambda = 1;
  const LossTerms be = labeling_loss(Vector::Zero(4), target, enc, id, 0, cfg);
  CHECK(std::abs(be.regularizer - 4 * std::log(2.0)) < 1e-12);

  CHECK(test::code_of([&] { labeling_loss(Vector::Zero(4), 2 * target, enc, id, 0, cfg); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("loss gradient matches finite differences for every regularizer") {
  Rng rng(2);
  const RowMatrix e = test::gaussian(rng, 7, 5);
  const Lexicon lex = lexicon_of({"a", "b", "c", "d", "f", "g", "h"}, e);
  const ToyEncoder enc = build_toy_encoder(test::gaussian(rng, 5, 5), RowMatrix(0.3 * test::gaussian(rng, 2, 5)));
  for (const Regularizer r : {Regularizer::Entropy, Regularizer::BinaryEntropy, Regularizer::L1}) {
    CAPTURE(to_string(r));
    LabelingConfig cfg;
    cfg.regularizer = r;
    cfg.lambda = 0.7;
    cfg.l1_lambda = 0.3;
    for (int probe = 0; probe < 5; ++probe) {
      const Vector target = rng.normal_vector(5).normalized();
      const Vector z = rng.normal_vector(7);
      Vector grad;
      const LossTerms l = labeling_loss_gradient(z, target, enc, lex, 1, cfg, grad);
      CHECK(std::abs(l.total - labeling_loss(z, target, enc, lex, 1, cfg).total) < 1e-14);
      const Vector fd = oracle::gradient(
          [&](const Vector& x) { return labeling_loss(x, target, enc, lex, 1, cfg).total; }, z);
      CHECK((grad - fd).norm() <= 1e-6 * std::max(1.0, fd.norm()));
    }
  }
}

TEST_CASE("top-k by inner product") {
  const Lexicon lex = identity_lexicon(3);
  Vector e(3);
  e << 3, 1, 2;
  const auto top = topk_tokens(lex, e, 2);
  REQUIRE(top.size() == 2);
  CHECK(top[0].token == 0);
  CHECK(top[1].token == 2);
  CHECK(top[1].score == 2.0);

  RowMatrix m(2, 2);
  m << 0.9, 0, 0.6, 0.6;
  Vector x(2);
  x << 1, 0;
  CHECK(topk_tokens(lexicon_of({"p", "q"}, m), x, 1)[0].text == "p");
  // Magnitude matters: scaling q by 2 flips the ranking; cosine would not.
  m.row(1) *= 2;
  Vector y(2);
  y << 1, 1;
  CHECK(topk_tokens(lexicon_of({"p", "q"}, m), y, 1)[0].text == "q");
  m.row(1) /= 4;
  CHECK(topk_tokens(lexicon_of({"p", "q"}, m), y, 1)[0].text == "p");

  Rng rng(3);
  const Lexicon big = lexicon_of({"a", "b", "c", "d", "f", "g"}, test::gaussian(rng, 6, 4));
  const Vector r = rng.normal_vector(4);
  for (std::size_t k = 1; k < 6; ++k) {
    const auto a = topk_tokens(big, r, k), b = topk_tokens(big, r, k + 1);
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
  Vector tie = Vector::Ones(3);
  const auto ties = topk_tokens(lex, tie, 3);
  CHECK(ties[0].token == 0);
  CHECK(ties[2].token == 2);
}

TEST_CASE("merging label lists is a union keeping the best score") {
  const std::vector<LabelEntry> ab{{0, "A", 0.9}, {1, "B", 0.5}};
  const std::vector<LabelEntry> bc{{1, "B", 0.7}, {2, "C", 0.6}};
  const auto merged = merge_labels({ab, bc});
  REQUIRE(merged.size() == 3);
  CHECK(merged[0].text == "A");
  CHECK(merged[1].text == "B");
  CHECK(merged[1].score == 0.7);
  CHECK(merged[2].text == "C");
}

TEST_CASE("labeling recovers the planted token on the toy world") {
  WorldConfig wc;
  wc.seed = 4;
  const SyntheticWorld w = generate_world(wc);
  const LabelingConfig cfg;  // 150 steps, 5e-3, lambda 1
  for (Eigen::Index j = 0; j < 4; ++j) {
    const Vector target = w.planted.col(j);
    const LabelSet ls = optimize_labels(target, w.encoder, w.lexicon, {0}, cfg, 3);
    REQUIRE_FALSE(ls.entries.empty());
    const std::size_t brute = oracle::best_one_hot(
        [&](const Vector& e) { return encode(w.encoder, 0, e); }, w.lexicon.embeddings, target);
    CHECK(brute == static_cast<std::size_t>(j));
    CHECK(ls.entries[0].token == brute);
    CHECK(ls.direction_id == 3);
    CHECK(ls.entries.size() == cfg.top_k);
    CHECK(std::abs(ls.refined.norm() - 1) < 1e-9);
    CHECK_FALSE(ls.no_progress);
    for (std::size_t i = 1; i < ls.entries.size(); ++i) {
      CHECK(ls.entries[i].score <= ls.entries[i - 1].score);
    }
  }
}

TEST_CASE("descent with lambda 0 and the identity encoder") {
  Rng rng(5);
  const Lexicon lex = lexicon_of({"a", "b", "c", "d", "f", "g", "h", "i"}, test::gaussian(rng, 8, 6));
  const ToyEncoder enc = identity_encoder(6);
  LabelingConfig cfg;
  cfg.lambda = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Vector target = rng.normal_vector(6).normalized();
    const SelectionState s = run_selection(target, enc, lex, 0, cfg);
    CHECK(s.history.size() == cfg.max_iterations + 1);
    CHECK(s.final_loss.cosine < labeling_loss(Vector::Zero(8), target, enc, lex, 0, cfg).cosine);
  }
}

TEST_CASE("optimization is deterministic and respects the blocklist") {
  WorldConfig wc;
  wc.seed = 6;
  const SyntheticWorld w = generate_world(wc);
  const Vector target = w.planted.col(1);
  const LabelingConfig cfg;
  const LabelSet a = optimize_labels(target, w.encoder, w.lexicon, {0}, cfg);
  const LabelSet b = optimize_labels(target, w.encoder, w.lexicon, {0}, cfg);
  CHECK(a.entries == b.entries);
  CHECK(a.refined == b.refined);

  const std::string top = a.entries[0].text;
  const Lexicon blocked = make_lexicon(w.lexicon.tokens, w.lexicon.embeddings, {top});
  const LabelSet c = optimize_labels(target, w.encoder, blocked, {0}, cfg);
  for (const auto& e : c.entries) CHECK(e.text != top);
  CHECK(c.entries.size() == cfg.top_k);
}

TEST_CASE("multi-prefix labeling takes the union and the best run's vector") {
  const Lexicon lex = identity_lexicon(6);
  RowMatrix p = RowMatrix::Zero(2, 6);
  p(1, 5) = 3.0;  // prefix 1 pulls every prompt toward token 5
  const ToyEncoder enc = build_toy_encoder(RowMatrix::Identity(6, 6), p);
  LabelingConfig cfg;
  cfg.top_k = 2;
  cfg.lambda = 0;
  cfg.max_iterations = 300;
  cfg.learning_rate = 5e-2;
  const Vector target = Vector::Unit(6, 0);
  const SelectionState s0 = run_selection(target, enc, lex, 0, cfg);
  const SelectionState s1 = run_selection(target, enc, lex, 1, cfg);
  const LabelSet both = optimize_labels(target, enc, lex, {0, 1}, cfg);
  const auto t0 = topk_tokens(lex, s0.mixture, 2), t1 = topk_tokens(lex, s1.mixture, 2);
  std::set<std::size_t> expect;
  for (const auto& x : t0) expect.insert(x.token);
  for (const auto& x : t1) expect.insert(x.token);
  std::set<std::size_t> got;
  for (const auto& x : both.entries) got.insert(x.token);
  CHECK(got == expect);
  const bool zero_better = s0.final_loss.total <= s1.final_loss.total;
  CHECK(both.best_prefix == (zero_better ? 0u : 1u));
  CHECK(both.refined == (zero_better ? s0.refined : s1.refined));
}

TEST_CASE("no progress is flagged, not fatal") {
  const Lexicon id = identity_lexicon(3);
  const ToyEncoder enc = identity_encoder(3);
  LabelingConfig cfg;
  cfg.lambda = 0;
  const Vector target = Vector::Constant(3, 1.0 / std::sqrt(3.0));  // optimum at z = 0
  const LabelSet ls = optimize_labels(target, enc, id, {0}, cfg);
  CHECK(ls.no_progress);
}

TEST_CASE("config validation") {
  LabelingConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  cfg.max_iterations = 0;
  CHECK(test::code_of([&] { validate(cfg); }) == ErrorCode::InvalidArgument);
  cfg = {};
  cfg.lambda = -1;
  CHECK(test::code_of([&] { validate(cfg); }) == ErrorCode::InvalidArgument);
  cfg = {};
  cfg.top_k = 0;
  CHECK(test::code_of([&] { validate(cfg); }) == ErrorCode::InvalidArgument);
  CHECK(parse_regularizer("l1") == Regularizer::L1);
  CHECK(test::code_of([] { parse_regularizer("l2"); }) == ErrorCode::InvalidArgument);
  CHECK(LabelingConfig{}.max_iterations == 150);
  CHECK(LabelingConfig{}.learning_rate == 5e-3);
  CHECK(LabelingConfig{}.lambda == 1.0);
}
