// One PASS/FAIL line per acceptance criterion, INFO lines for measurements
// at settings other than the ones a criterion is judged on.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "diratlas/dirext.hpp"
#include "diratlas/embio.hpp"
#include "diratlas/encoder.hpp"
#include "diratlas/exemplar.hpp"
#include "diratlas/labeler.hpp"
#include "diratlas/pipeline.hpp"
#include "diratlas/project.hpp"
#include "diratlas/refine.hpp"
#include "diratlas/synthbench.hpp"
#include "diratlas/zseval.hpp"
#include "oracles/oracles.hpp"
#include "support.hpp"

using namespace diratlas;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Collects failed checks for one criterion.
struct Checks {
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& s) { notes.push_back(s); }
  void info(const std::string& s) { std::printf("INFO %s\n", s.c_str()); }
};

int failed_criteria = 0;

void criterion(int id, const char* name, double limit_s, const std::function<void(Checks&)>& body) {
  Checks c;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.failures.push_back(std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (limit_s > 0 && secs >= limit_s) {
    c.failures.push_back("runtime " + std::to_string(secs) + " s exceeds " + std::to_string(limit_s) + " s");
  }
  std::string detail;
  for (const auto& n : c.notes) detail += (detail.empty() ? "" : "; ") + n;
  const bool pass = c.failures.empty();
  std::printf("%s criterion %d: %s [%.2f s]%s%s\n", pass ? "PASS" : "FAIL", id, name, secs,
              detail.empty() ? "" : " ", detail.c_str());
  for (std::size_t i = 0; i < c.failures.size() && i < 10; ++i) {
    std::printf("    failed: %s\n", c.failures[i].c_str());
  }
  if (!pass) ++failed_criteria;
  std::fflush(stdout);
}

std::string num(double v, int precision = 3) {
  std::ostringstream o;
  o.precision(precision);
  o << v;
  return o.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

template <typename Fn>
bool raises(ErrorCode code, Fn&& fn) {
  return test::code_of(fn) == code;
}

// ---- criterion bodies ----------------------------------------------------

void pca_oracle(Checks& c) {
  double worst = 0, worst_trace = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const RowMatrix x = test::gaussian(rng, 50, 8);
    const auto set = make_embedding_set(x);
    const DirectionSet d = pca_directions(set, 8);
    const oracle::Mat cov = oracle::covariance(x);
    const auto eig = oracle::jacobi_eigen(cov);
    for (Eigen::Index j = 0; j < 8; ++j) {
      const oracle::Vec expect = oracle::sign_normalized(eig.vectors.col(j));
      worst = std::max(worst, (d.directions[static_cast<std::size_t>(j)].vector - expect).cwiseAbs().maxCoeff());
    }
    worst_trace = std::max(worst_trace, std::abs(pca_spectrum(set).sum() - cov.trace()));
  }
  c.expect(worst < 1e-6, "max entry error " + num(worst));
  c.expect(worst_trace < 1e-6, "variance conservation error " + num(worst_trace));
  c.note("max entry error " + num(worst) + ", variance error " + num(worst_trace));
}

void ica_recovery(Checks& c) {
  int within = 0;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const double a = (10.0 + 3.5 * static_cast<double>(seed)) * kPi / 180.0;
    Matrix mix(2, 2);
    mix << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    RowMatrix x(5000, 2);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Vector s(2);
      s << (2 * rng.uniform() - 1) * std::sqrt(3.0), (2 * rng.uniform() - 1) * std::sqrt(3.0);
      x.row(i) = (mix * s).transpose();
    }
    const DirectionSet d = ica_directions(make_embedding_set(x), 2, IcaConfig{400, 1e-5, seed});
    // angle_deg is sign-invariant; take the better permutation.
    const double direct = std::max(oracle::angle_deg(d.directions[0].vector, mix.col(0)),
                                   oracle::angle_deg(d.directions[1].vector, mix.col(1)));
    const double swapped = std::max(oracle::angle_deg(d.directions[0].vector, mix.col(1)),
                                    oracle::angle_deg(d.directions[1].vector, mix.col(0)));
    const double err = std::min(direct, swapped);
    worst = std::max(worst, err);
    if (err < 5.0) ++within;
  }
  c.expect(within >= 18, std::to_string(within) + " of 20 within 5 degrees");
  c.note(std::to_string(within) + "/20 within 5 deg, worst " + num(worst) + " deg");
}

// Targets for the labeling trials: PCA directions sign-aligned to planted.
struct LabelTrial {
  SyntheticWorld world;
  DirectionSet pca;
  Vector mean;
};

LabelTrial label_world(std::uint64_t seed) {
  WorldConfig wc;
  wc.seed = seed;
  wc.d = 64;
  wc.k = 4;
  wc.m = 20;
  wc.noise_sigma = 0.05;
  LabelTrial t{generate_world(wc), {}, {}};
  t.pca = pca_directions(t.world.embeddings, 4);
  t.mean = mean_vector(t.world.embeddings);
  for (std::size_t j = 0; j < 4; ++j) {
    auto& v = t.pca.directions[j].vector;
    if (v.dot(t.world.planted.col(static_cast<Eigen::Index>(j))) < 0) v = -v;
  }
  return t;
}

void labeling_recovery(Checks& c) {
  const LabelingConfig defaults;
  int correct = 0, oracle_agree = 0, centroid_correct = 0, trials = 0;
  for (std::uint64_t seed = 0; trials < 50; ++seed) {
    const LabelTrial t = label_world(seed);
    const auto& w = t.world;
    auto enc = [&](const oracle::Vec& e) { return oracle::Vec(encode(w.encoder, 0, e)); };
    for (std::size_t j = 0; j < 4 && trials < 50; ++j, ++trials) {
      const Vector& target = t.pca.directions[j].vector;
      const LabelSet ls = optimize_labels(target, w.encoder, w.lexicon, {0}, defaults, j);
      const std::size_t brute = oracle::best_one_hot(enc, w.lexicon.embeddings, target);
      const std::size_t top = ls.entries.front().token;
      if (top == j) ++correct;
      if (top == brute) ++oracle_agree;
      const ExemplarSplit s = select_exemplars(w.embeddings, t.mean, t.pca.directions[j], 100);
      const LabelSet lc = optimize_labels(s.centroid, w.encoder, w.lexicon, {0}, defaults, j);
      if (lc.entries.front().token == j) ++centroid_correct;
    }
  }
  c.expect(correct >= 48, std::to_string(correct) + " of 50 correct (need 95%)");
  c.expect(oracle_agree >= 48, "one-hot oracle agrees on " + std::to_string(oracle_agree) + " of 50");
  c.note(std::to_string(correct) + "/50 correct top-1, oracle agreement " + std::to_string(oracle_agree) + "/50");
  c.info("criterion 3: with spherical-centroid targets at the same defaults, " +
         std::to_string(centroid_correct) + "/50 correct top-1");
}

// Target mixing four random token directions with weights in [0.5, 1.5].
Vector mixture_target(const SyntheticWorld& w, std::uint64_t seed) {
  Rng rng(seed + 1000);
  std::vector<std::size_t> ids(w.lexicon.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  rng.shuffle(ids.begin(), ids.end());
  Vector t = Vector::Zero(static_cast<Eigen::Index>(w.config.d));
  for (int i = 0; i < 4; ++i) {
    const Vector e = w.lexicon.embeddings.row(static_cast<Eigen::Index>(ids[static_cast<std::size_t>(i)])).transpose();
    t += (0.5 + rng.uniform()) * encode(w.encoder, 0, e);
  }
  return t.normalized();
}

std::size_t active(const Vector& z) { return static_cast<std::size_t>((sigmoid(z).array() > 0.1).count()); }

void sparsification(Checks& c) {
  auto run = [](std::size_t steps, double lr, double lambda, double& mean_on, double& mean_off, int& strict,
                double& min_sigma) {
    mean_on = mean_off = 0;
    strict = 0;
    min_sigma = 1;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      WorldConfig wc;
      wc.seed = seed;
      const SyntheticWorld w = generate_world(wc);
      const Vector target = mixture_target(w, seed);
      LabelingConfig cfg;
      cfg.max_iterations = steps;
      cfg.learning_rate = lr;
      cfg.lambda = lambda;
      const SelectionState on = run_selection(target, w.encoder, w.lexicon, 0, cfg);
      cfg.lambda = 0.0;
      const SelectionState off = run_selection(target, w.encoder, w.lexicon, 0, cfg);
      mean_on += static_cast<double>(active(on.z)) / 20;
      mean_off += static_cast<double>(active(off.z)) / 20;
      if (active(on.z) < active(off.z)) ++strict;
      min_sigma = std::min(min_sigma, sigmoid(on.z).minCoeff());
    }
  };
  double on, off, min_sigma;
  int strict;
  run(1000, 5e-2, 1.0, on, off, strict, min_sigma);
  c.expect(on <= off, "mean active count " + num(on) + " > " + num(off));
  c.expect(strict >= 15, "strictly smaller in " + std::to_string(strict) + " of 20");
  c.note("1000 steps, lr 5e-2: mean active " + num(on) + " (lambda 1) vs " + num(off) + " (lambda 0), strict " +
         std::to_string(strict) + "/20");
  run(150, 5e-3, 1.0, on, off, strict, min_sigma);
  c.info("criterion 4: at 150 steps, lr 5e-3: mean active " + num(on) + " vs " + num(off) + ", strict " +
         std::to_string(strict) + "/20, min sigma " + num(min_sigma) +
         " (ADAM moves each z_i at most ~lr per step, so |z_i| <= 0.75 and every sigma > 0.1)");
}

void disentanglement(Checks& c) {
  double worst_own = 1, worst_other = 0, worst_orth = 0, worst_cos = 1;
  double ent_lo = 1, ent_hi = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    DisentangleProblem p;
    Rng rng(seed);
    const Matrix q = Eigen::HouseholderQR<Matrix>(test::gaussian(rng, 16, 16)).householderQ();
    p.tokens = q.leftCols(2);
    p.u_hat = (p.tokens.col(0) + p.tokens.col(1)).normalized();
    p.weights = Vector::Constant(2, 0.5);
    p.seed = seed;
    const DisentangleResult r = disentangle(p);
    const auto prompts = make_embedding_set(RowMatrix(p.tokens.transpose()), {"word1", "word2"});
    const ZeroShotScore ent = zero_shot_scores(make_embedding_set(RowMatrix(p.u_hat.transpose())), prompts);
    ent_lo = std::min({ent_lo, ent.scores(0, 0), ent.scores(0, 1)});
    ent_hi = std::max({ent_hi, ent.scores(0, 0), ent.scores(0, 1)});
    const ZeroShotScore split = zero_shot_scores(make_embedding_set(RowMatrix(r.b.transpose())), prompts);
    for (Eigen::Index j = 0; j < 2; ++j) {
      worst_own = std::min(worst_own, split.scores(j, j));
      worst_other = std::max(worst_other, split.scores(j, 1 - j));
      worst_cos = std::min(worst_cos, oracle::cosine(r.b.col(j), p.tokens.col(j)));
    }
    worst_orth = std::max(worst_orth, (r.b.transpose() * r.b - Matrix::Identity(2, 2)).norm());
  }
  c.expect(ent_lo >= 0.25 && ent_hi <= 0.75, "entangled scores span [" + num(ent_lo) + ", " + num(ent_hi) + "]");
  c.expect(worst_own >= 0.9, "own-prompt score " + num(worst_own));
  c.expect(worst_other <= 0.1, "other-prompt score " + num(worst_other));
  c.expect(worst_orth < 0.1, "|B^T B - I|_F = " + num(worst_orth));
  c.expect(worst_cos >= 0.9, "column cosine " + num(worst_cos));
  c.note("entangled [" + num(ent_lo) + ", " + num(ent_hi) + "], own >= " + num(worst_own) + ", other <= " +
         num(worst_other) + ", |BtB-I| <= " + num(worst_orth) + ", cos >= " + num(worst_cos));
}

void wu_palmer_exactness(Checks& c) {
  const Taxonomy t = make_taxonomy({{"A", "root"}, {"B", "A"}, {"C", "root"}});
  c.expect(wu_palmer(t, "B", "C") == 0.4, "wup(B, C)");
  c.expect(wu_palmer(t, "A", "B") == 0.8, "wup(A, B)");
  c.expect(wu_palmer(t, "B", "B") == 1.0, "wup(B, B)");

  Rng rng(2);
  std::vector<int> parent(50, -1);
  std::vector<std::pair<std::string, std::string>> edges;
  for (int i = 1; i < 50; ++i) {
    parent[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(i)));
    edges.emplace_back("w" + std::to_string(i), "w" + std::to_string(parent[static_cast<std::size_t>(i)]));
  }
  const Taxonomy big = make_taxonomy(edges);
  int mismatches = 0;
  for (int a = 0; a < 50; ++a) {
    for (int b = 0; b < 50; ++b) {
      const double got = wu_palmer(big, "w" + std::to_string(a), "w" + std::to_string(b));
      if (std::abs(got - oracle::wu_palmer(parent, a, b)) > 1e-15) ++mismatches;
    }
  }
  c.expect(mismatches == 0, std::to_string(mismatches) + " oracle mismatches");
  int idempotent = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<LabelEntry> labels;
    const auto len = 1 + rng.below(10);
    for (std::size_t i = 0; i < len; ++i) {
      labels.push_back({i, "w" + std::to_string(rng.below(50)), 1.0 - 0.05 * static_cast<double>(i)});
    }
    const double thr = 0.3 + 0.6 * rng.uniform();
    const DedupResult once = dedup_labels(labels, big, thr);
    const DedupResult twice = dedup_labels(once.kept, big, thr);
    if (twice.kept == once.kept && twice.entangled == once.entangled) ++idempotent;
  }
  c.expect(idempotent == 100, "dedup idempotent on " + std::to_string(idempotent) + " of 100");
  c.note("hand values exact, 2500 oracle pairs exact, dedup idempotent " + std::to_string(idempotent) + "/100");
}

void svm_transfer(Checks& c) {
  int separable = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 100);
    const Vector g = rng.normal_vector(8).normalized();
    RowMatrix p = test::gaussian(rng, 60, 8), m = test::gaussian(rng, 60, 8);
    for (Eigen::Index i = 0; i < 60; ++i) {
      const Vector pi = p.row(i).transpose(), mi = m.row(i).transpose();
      p.row(i) += (1.0 + std::abs(pi.dot(g)) - pi.dot(g)) * g.transpose();
      m.row(i) -= (1.0 + std::abs(mi.dot(g)) + mi.dot(g)) * g.transpose();
    }
    if (svm_direction(make_latent_set(p), make_latent_set(m), SvmConfig{.seed = seed}).training_accuracy == 1.0) {
      ++separable;
    }
  }
  RowMatrix one_p(2, 1), one_n(2, 1);
  one_p << 2, 3;
  one_n << -2, -3;
  const SvmResult line = svm_direction(make_latent_set(one_p), make_latent_set(one_n));
  c.expect(line.training_accuracy == 1.0 && line.direction.vector[0] > 0.999, "1-D fixture");
  c.expect(separable == 10, "separable fixtures at 100%: " + std::to_string(separable) + "/10");

  auto clusters = [](double c_param, double& worst) {
    int within = 0;
    worst = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      const Vector g = rng.normal_vector(16).normalized();
      RowMatrix p = test::gaussian(rng, 500, 16), m = test::gaussian(rng, 500, 16);
      p.rowwise() += 2.0 * g.transpose();
      m.rowwise() -= 2.0 * g.transpose();
      const SvmResult r =
          svm_direction(make_latent_set(p), make_latent_set(m), SvmConfig{.c_param = c_param, .seed = seed});
      const double a = oracle::angle_deg(r.direction.vector, g);
      worst = std::max(worst, a);
      if (a < 5.0 && r.direction.vector.dot(g) > 0) ++within;
    }
    return within;
  };
  double worst_small, worst_default;
  const int small_c = clusters(1e-4, worst_small);
  c.expect(small_c >= 18, "clusters within 5 degrees: " + std::to_string(small_c) + "/20");

  Rng rng(6);
  double lin = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Vector code = rng.normal_vector(12);
    const EditDirection d{rng.normal_vector(12).normalized(), {}, 0.0};
    const double a = 4 * rng.normal(), b = 4 * rng.normal();
    const auto flat = LatentLayout::flat(12);
    lin = std::max(lin, (apply_edit(code, d, a + b, flat) - apply_edit(apply_edit(code, d, a, flat), d, b, flat))
                            .cwiseAbs()
                            .maxCoeff());
  }
  c.expect(lin <= 1e-9, "alpha linearity error " + num(lin));
  c.note("separable 10/10, clusters (c_param 1e-4) " + std::to_string(small_c) + "/20 worst " + num(worst_small) +
         " deg, linearity " + num(lin));
  const int default_c = clusters(1.0, worst_default);
  c.info("criterion 7: clusters at c_param 1.0: " + std::to_string(default_c) + "/20 within 5 deg, worst " +
         num(worst_default) + " deg (exact soft-margin optimum, hinge dominated by margin points)");
}

std::size_t pipeline_recovered(std::uint64_t seed, double lr, const std::string& tag, std::string* report) {
  const fs::path dir = test::scratch("accept_" + tag + "_" + std::to_string(seed));
  WorldConfig wc;
  wc.seed = seed;
  wc.d = 64;
  wc.k = 4;
  wc.n = 2000;
  wc.noise_sigma = 0.05;
  save_world(generate_world(wc), dir);
  PipelineConfig cfg = world_config(dir, dir / "run", 4);
  cfg.labeling.learning_rate = lr;
  const PipelineReport r = run_pipeline(cfg);
  if (report) *report = slurp(r.report_path);
  std::error_code ec;
  const std::size_t out = r.recovery ? r.recovery->attributes_recovered : 0;
  fs::remove_all(dir, ec);
  return out;
}

void end_to_end(Checks& c) {
  std::string summary;
  for (const std::uint64_t seed : {1, 2, 3}) {
    std::string first, second;
    const std::size_t a = pipeline_recovered(seed, 5e-2, "a", &first);
    const std::size_t b = pipeline_recovered(seed, 5e-2, "b", &second);
    c.expect(a >= 3, "seed " + std::to_string(seed) + ": " + std::to_string(a) + " of 4 recovered");
    c.expect(a == b && first == second, "seed " + std::to_string(seed) + ": rerun differs");
    summary += (summary.empty() ? "" : ", ") + std::string("seed ") + std::to_string(seed) + " " +
               std::to_string(a) + "/4";
  }
  c.note("labeling lr 5e-2: " + summary + ", reruns byte-identical");
  std::string defaults;
  for (const std::uint64_t seed : {1, 2, 3}) {
    defaults += (defaults.empty() ? "" : ", ") + std::string("seed ") + std::to_string(seed) + " " +
                std::to_string(pipeline_recovered(seed, 5e-3, "d", nullptr)) + "/4";
  }
  c.info("criterion 8: at the default labeling lr 5e-3: " + defaults);
}

void encoder_contract(Checks& c) {
  std::string names;
  for (const auto& reg : encoder_registry()) {
    const auto enc = reg.make(12, 7);
    const ContractReport r = check_encoder_contract(*enc, 100, 3);
    c.expect(r.passed && r.probes == 100 && r.max_relative_error < 1e-4,
             reg.name + ": relative VJP error " + num(r.max_relative_error));
    names += (names.empty() ? "" : ", ") + reg.name + " " + num(r.max_relative_error, 2);
  }
  c.expect(encoder_registry().size() >= 2, "registry has fewer than 2 encoders");
  Rng rng(9);
  double worst_sum = 0, worst_perm = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const RowMatrix img = test::gaussian(rng, 30, 10), pr = test::gaussian(rng, 5, 10);
    const ZeroShotScore s = zero_shot_scores(make_embedding_set(img), make_embedding_set(pr), 100.0);
    worst_sum = std::max(worst_sum, (s.scores.rowwise().sum().array() - 1.0).abs().maxCoeff());
    std::vector<Eigen::Index> perm{3, 1, 4, 0, 2};
    RowMatrix pp(5, 10);
    for (Eigen::Index j = 0; j < 5; ++j) pp.row(j) = pr.row(perm[static_cast<std::size_t>(j)]);
    const ZeroShotScore t = zero_shot_scores(make_embedding_set(img), make_embedding_set(pp), 100.0);
    for (Eigen::Index j = 0; j < 5; ++j) {
      worst_perm = std::max(worst_perm, (t.scores.col(j) - s.scores.col(perm[static_cast<std::size_t>(j)])).cwiseAbs().maxCoeff());
    }
  }
  c.expect(worst_sum <= 1e-6, "row sum error " + num(worst_sum));
  c.expect(worst_perm <= 1e-12, "permutation error " + num(worst_perm));
  c.note("VJP rel. error: " + names + "; row sums " + num(worst_sum) + ", permutation " + num(worst_perm));
}

void format_round_trips(Checks& c) {
  const fs::path dir = test::scratch("accept_formats");
  Rng rng(10);
  auto same_bytes = [&](const fs::path& a, const fs::path& b) { return slurp(a) == slurp(b) && !slurp(a).empty(); };

  const RowMatrix m = test::gaussian(rng, 7, 5).cast<float>().cast<double>();
  save_embedding_set(make_embedding_set(m), dir / "a.emb");
  const EmbeddingSet e = load_embedding_set(dir / "a.emb");
  save_embedding_set(e, dir / "b.emb");
  c.expect(e.data == m && same_bytes(dir / "a.emb", dir / "b.emb"), "embedding file");

  save_matrix(m, dir / "lex.emb");
  save_lines({"smile", "beard", "hat", "glasses", "old", "young", "bald"}, dir / "tok.txt");
  const Lexicon lex = load_lexicon(dir / "lex.emb", dir / "tok.txt");
  save_matrix(lex.embeddings, dir / "lex2.emb");
  save_lines(lex.tokens, dir / "tok2.txt");
  c.expect(lex.embeddings == m && same_bytes(dir / "lex.emb", dir / "lex2.emb") &&
               same_bytes(dir / "tok.txt", dir / "tok2.txt"),
           "lexicon files");

  const Taxonomy t = make_taxonomy({{"face", "entity"}, {"smile#1", "face"}, {"smile#2", "entity"}, {"hat", "entity"}});
  save_taxonomy(t, dir / "t.tsv");
  const Taxonomy tb = load_taxonomy(dir / "t.tsv");
  save_taxonomy(tb, dir / "t2.tsv");
  c.expect(tb.names == t.names && tb.parent == t.parent && same_bytes(dir / "t.tsv", dir / "t2.tsv"), "taxonomy file");

  DirectionSet d = hybrid_directions(make_embedding_set(test::gaussian(rng, 40, 6)), 2, 2, 0.5, 3);
  d.directions.push_back({d.directions[0].vector, {DirectionKind::Reseed, 1, 2, 0}, 0.0});
  d.directions.push_back({d.directions[1].vector, {DirectionKind::Atomic, 0, 1, 3}, 0.0});
  save_direction_set(d, dir / "d");
  save_direction_set(load_direction_set(dir / "d"), dir / "d2");
  for (const char* ext : {".emb", ".prov", ".mean.emb"}) {
    c.expect(same_bytes(dir / ("d" + std::string(ext)), dir / ("d2" + std::string(ext))),
             std::string("direction file ") + ext);
  }

  save_latent_set(make_latent_set(m.leftCols(4), LatentLayout::layered(2, 2)), dir / "w");
  const LatentCodeSet l = load_latent_set(dir / "w");
  save_latent_set(l, dir / "w2");
  c.expect(l.codes == m.leftCols(4) && l.layout.per_layer && same_bytes(dir / "w.emb", dir / "w2.emb") &&
               same_bytes(dir / "w.layout", dir / "w2.layout"),
           "latent files");

  // Crafted corrupt inputs.
  auto write = [&](const char* name, const std::string& bytes) {
    std::ofstream(dir / name, std::ios::binary) << bytes;
    return dir / name;
  };
  std::string good = slurp(dir / "a.emb");
  std::string magic = good;
  magic[0] = 'X';
  std::string truncated = good.substr(0, good.size() - 3);
  std::string nan = good;
  const float qnan = std::numeric_limits<float>::quiet_NaN();
  nan.replace(14 + 4 * 3, 4, reinterpret_cast<const char*>(&qnan), 4);
  std::vector<std::string> seen;
  auto check = [&](ErrorCode code, const char* label, auto&& fn) {
    const bool ok = raises(code, fn);
    c.expect(ok, std::string(label) + " not raised");
    if (ok) seen.emplace_back(label);
  };
  check(ErrorCode::BadMagic, "BadMagic", [&] { load_matrix(write("magic.emb", magic)); });
  check(ErrorCode::SizeMismatch, "SizeMismatch", [&] { load_matrix(write("short.emb", truncated)); });
  check(ErrorCode::NonFinite, "NonFinite", [&] { load_matrix(write("nan.emb", nan)); });
  check(ErrorCode::IoFailure, "IoFailure", [&] { load_matrix(dir / "absent.emb"); });
  check(ErrorCode::CycleDetected, "CycleDetected", [] { make_taxonomy({{"a", "b"}, {"b", "a"}}); });
  check(ErrorCode::MultipleRoots, "MultipleRoots", [] { make_taxonomy({{"a", "r1"}, {"b", "r2"}}); });
  check(ErrorCode::OrphanNode, "OrphanNode", [] { make_taxonomy({{"a", "root"}}, {"lonely"}); });
  check(ErrorCode::BadFormat, "BadFormat", [&] { load_taxonomy(write("bad.tsv", "a\tb\tc\n")); });
  check(ErrorCode::CountMismatch, "CountMismatch", [&] { load_lexicon(dir / "lex.emb", write("few.txt", "a\nb\n")); });
  check(ErrorCode::DuplicateToken, "DuplicateToken",
        [&] { load_lexicon(dir / "lex.emb", write("dup.txt", "a\nb\nc\nd\ne\nf\na\n")); });
  check(ErrorCode::BadFormat, "BadFormat(provenance)", [&] {
    double v;
    parse_provenance("bogus 1 2", v);
  });
  check(ErrorCode::BadFormat, "BadFormat(layout)", [&] {
    write("w.layout", "tensor 3\n");
    load_latent_set(dir / "w");
  });
  check(ErrorCode::DimensionMismatch, "DimensionMismatch(layout)", [&] {
    write("w.layout", "per_layer 3 3\n");
    load_latent_set(dir / "w");
  });
  c.note("5 formats bit-exact, " + std::to_string(seen.size()) + " error cases raised");
  std::error_code ec;
  fs::remove_all(dir, ec);
}

}  // namespace

int main() {
  criterion(1, "PCA matches the covariance eigendecomposition oracle", 5.0, pca_oracle);
  criterion(2, "ICA recovers rotated sources", 30.0, ica_recovery);
  criterion(3, "labeling returns the planted token", 120.0, labeling_recovery);
  criterion(4, "entropy regularization sparsifies the selection", 0.0, sparsification);
  criterion(5, "disentanglement separates the two-token fixture", 30.0, disentanglement);
  criterion(6, "Wu-Palmer exactness and dedup idempotence", 0.0, wu_palmer_exactness);
  criterion(7, "SVM transfer", 0.0, svm_transfer);
  criterion(8, "end-to-end pipeline recovery", 300.0, end_to_end);
  criterion(9, "encoder contract and zero-shot invariants", 0.0, encoder_contract);
  criterion(10, "file format round-trips and error cases", 0.0, format_round_trips);
  std::printf("%d of 10 criteria failed\n", failed_criteria);
  return failed_criteria == 0 ? 0 : 1;
}
