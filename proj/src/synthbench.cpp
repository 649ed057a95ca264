#include "diratlas/synthbench.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "diratlas/error.hpp"
#include "diratlas/rng.hpp"

namespace diratlas {
namespace {

// Attribute word, then its synonym.
constexpr const char* kPairs[][2] = {
    {"smile", "grin"},       {"beard", "whiskers"}, {"glasses", "spectacles"},
    {"hat", "cap"},          {"blond", "fair"},     {"old", "elderly"},
    {"curly", "wavy"},       {"makeup", "cosmetics"}, {"tan", "bronzed"},
    {"bald", "hairless"},    {"child", "kid"},      {"angry", "furious"},
};

constexpr const char* kDistractors[] = {
    "river",  "window", "violin", "pepper",  "ladder", "comet",  "marble", "tunnel",
    "basket", "anchor", "walnut", "lantern", "quartz", "meadow", "saddle", "pillow",
    "copper", "harbor", "feather", "thimble", "canyon", "orchid", "needle", "trumpet",
};

std::vector<std::string> token_names(std::size_t k, std::size_t m) {
  constexpr std::size_t n_pairs = std::size(kPairs);
  std::vector<std::string> out(m);
  for (std::size_t j = 0; j < k; ++j) {
    out[j] = j < n_pairs ? kPairs[j][0] : "attr" + std::to_string(j);
    out[k + j] = j < n_pairs ? kPairs[j][1] : "syn" + std::to_string(j);
  }
  for (std::size_t j = 2 * k; j < m; ++j) {
    const std::size_t i = j - 2 * k;
    out[j] = i < std::size(kDistractors) ? kDistractors[i] : "token" + std::to_string(j);
  }
  return out;
}

// Columns of a d x c matrix with orthonormal columns, from Gaussian draws,
// modified Gram-Schmidt applied twice.
Matrix orthonormal_columns(Rng& rng, std::size_t d, std::size_t c) {
  const auto dd = static_cast<Eigen::Index>(d);
  Matrix q(dd, static_cast<Eigen::Index>(c));
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    Vector v = rng.normal_vector(dd);
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index i = 0; i < j; ++i) v -= q.col(i).dot(v) * q.col(i);
    }
    q.col(j) = v / v.norm();
  }
  return q;
}

// Root, distractors directly under it, and for each attribute a chain of
// concept nodes deep enough that an attribute and its synonym (siblings at
// the bottom) score 10/11 under Wu-Palmer.
Taxonomy world_taxonomy(const std::vector<std::string>& names, std::size_t k) {
  constexpr int kChain = 9;
  std::vector<std::pair<std::string, std::string>> edges;
  const std::string root = "entity";
  for (std::size_t j = 0; j < k; ++j) {
    std::string parent = root;
    for (int level = 0; level < kChain; ++level) {
      std::string node = names[j] + "_concept" + std::to_string(level);
      edges.emplace_back(node, parent);
      parent = std::move(node);
    }
    edges.emplace_back(names[j], parent);
    edges.emplace_back(names[k + j], parent);
  }
  for (std::size_t j = 2 * k; j < names.size(); ++j) edges.emplace_back(names[j], root);
  return make_taxonomy(edges);
}

RowMatrix columns_as_rows(const Matrix& m) { return RowMatrix(m.transpose()); }

}  // namespace

std::string_view to_string(CoefficientLaw law) {
  return law == CoefficientLaw::Bimodal ? "bimodal" : "gaussian";
}

CoefficientLaw parse_coefficient_law(std::string_view name) {
  if (name == "bimodal") return CoefficientLaw::Bimodal;
  if (name == "gaussian") return CoefficientLaw::Gaussian;
  fail(ErrorCode::ConfigInvalid, "unknown coefficient law '" + std::string(name) + "'");
}

void validate(const WorldConfig& c) {
  auto bad = [](const std::string& what) { fail(ErrorCode::ConfigInvalid, what); };
  if (c.k < 1 || c.k > c.d) bad("need 1 <= k <= d");
  if (c.n < 10 * c.k) bad("need n >= 10 k");
  if (c.m < 2 * c.k) bad("need m >= 2 k lexicon tokens");
  if (c.m + 1 > c.d) bad("need m + 1 <= d");
  if (c.latent_dim < c.k) bad("need latent_dim >= k");
  if (!(c.noise_sigma >= 0) || !(c.latent_noise >= 0)) bad("noise levels must be >= 0");
  if (!(c.magnitude_scale > 0)) bad("magnitude_scale must be > 0");
  if (c.law == CoefficientLaw::Bimodal && c.k > 62) bad("bimodal law supports k <= 62");
}

SyntheticWorld generate_world(const WorldConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  const auto d = static_cast<Eigen::Index>(cfg.d);
  const auto k = static_cast<Eigen::Index>(cfg.k);
  const auto m = static_cast<Eigen::Index>(cfg.m);
  const auto n = static_cast<Eigen::Index>(cfg.n);

  // b_0..b_{m-1} for the tokens, then theta.
  Matrix basis = orthonormal_columns(rng, cfg.d, cfg.m + 1);
  for (Eigen::Index j = 0; j < m; ++j) {
    Vector c = basis.col(j);
    normalize_sign(c);
    basis.col(j) = c;
  }
  const Matrix planted = basis.leftCols(k);
  const Vector theme = 5.0 * basis.col(m);

  // Token embeddings: orthonormal rows in token space.
  const Matrix e = orthonormal_columns(rng, cfg.d, cfg.m);  // d x m, columns e_j
  RowMatrix a = basis.leftCols(m) * e.transpose();          // A e_j = b_j
  ToyEncoder encoder(std::move(a), RowMatrix::Zero(1, d), {"a picture of a {}"});
  const auto names = token_names(cfg.k, cfg.m);
  Lexicon lexicon = make_lexicon(names, columns_as_rows(e));

  Vector magnitudes(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    magnitudes[j] = cfg.magnitude_scale * (1.0 - static_cast<double>(j) / (2.0 * static_cast<double>(k)));
  }

  RowMatrix coeff(n, k);
  if (cfg.law == CoefficientLaw::Bimodal) {
    std::vector<std::uint64_t> code(cfg.n);
    std::iota(code.begin(), code.end(), std::uint64_t{0});
    rng.shuffle(code.begin(), code.end());
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) {
        const bool up = (code[static_cast<std::size_t>(i)] >> j) & 1U;
        coeff(i, j) = (up ? 1.0 : -1.0) * magnitudes[j];
      }
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) coeff(i, j) = magnitudes[j] * rng.normal();
    }
  }

  RowMatrix x = coeff * planted.transpose();
  x.rowwise() += theme.transpose();
  if (cfg.noise_sigma > 0) {
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += cfg.noise_sigma * rng.normal();
  }

  const Matrix latent_axes = orthonormal_columns(rng, cfg.latent_dim, cfg.k);
  RowMatrix codes = coeff * latent_axes.transpose();
  if (cfg.latent_noise > 0) {
    for (Eigen::Index i = 0; i < codes.size(); ++i) {
      codes.data()[i] += cfg.latent_noise * rng.normal();
    }
  }

  return SyntheticWorld{cfg,
                        make_embedding_set(std::move(x)),
                        planted,
                        std::move(coeff),
                        std::move(magnitudes),
                        theme,
                        std::move(lexicon),
                        std::move(encoder),
                        world_taxonomy(names, cfg.k),
                        make_latent_set(std::move(codes)),
                        latent_axes};
}

RecoveryReport recovery_report(const Matrix& planted, const DirectionSet& directions,
                               const std::vector<LabelSet>& labels) {
  const auto k = static_cast<std::size_t>(planted.cols());
  const std::size_t c = directions.size();
  Matrix cosine = Matrix::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < c; ++i) {
      const Vector& v = directions.directions[i].vector;
      if (v.size() != planted.rows()) {
        fail(ErrorCode::DimensionMismatch, "direction and planted dimensions differ");
      }
      cosine(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) =
          std::abs(planted.col(static_cast<Eigen::Index>(j)).dot(v)) / v.norm();
    }
  }
  RecoveryReport out;
  out.per_attribute.resize(k);
  std::vector<bool> attr_done(k, false), dir_used(c, false);
  for (std::size_t round = 0; round < std::min(k, c); ++round) {
    double best = -1.0;
    std::size_t bj = 0, bi = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (attr_done[j]) continue;
      for (std::size_t i = 0; i < c; ++i) {
        if (dir_used[i]) continue;
        const double v = cosine(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
        if (v > best) {
          best = v;
          bj = j;
          bi = i;
        }
      }
    }
    attr_done[bj] = true;
    dir_used[bi] = true;
    auto& r = out.per_attribute[bj];
    r.best_cosine = best;
    r.direction = bi;
    r.label_correct = bi < labels.size() && !labels[bi].entries.empty() &&
                      labels[bi].entries.front().token == bj;
  }
  for (const auto& r : out.per_attribute) {
    if (r.best_cosine >= kRecoveryCosine && r.label_correct) ++out.attributes_recovered;
  }
  return out;
}

RecoveryReport recovery_report(const SyntheticWorld& world, const DirectionSet& directions,
                               const std::vector<LabelSet>& labels) {
  return recovery_report(world.planted, directions, labels);
}

void save_world(const SyntheticWorld& w, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  save_embedding_set(w.embeddings, dir / "embeddings.emb");
  save_matrix(w.lexicon.embeddings, dir / "lexicon.emb");
  save_lines(w.lexicon.tokens, dir / "tokens.txt");
  save_taxonomy(w.taxonomy, dir / "taxonomy.tsv");
  save_toy_encoder(w.encoder, dir / "encoder");
  save_matrix(columns_as_rows(w.planted), dir / "planted.emb");
  save_matrix(w.coefficients, dir / "coefficients.emb");
  save_latent_set(w.latents, dir / "latents");
  save_matrix(columns_as_rows(w.latent_axes), dir / "latent_axes.emb");
  save_matrix(RowMatrix(w.theme.transpose()), dir / "theme.emb");

  nlohmann::ordered_json j;
  j["seed"] = w.config.seed;
  j["d"] = w.config.d;
  j["k"] = w.config.k;
  j["n"] = w.config.n;
  j["m"] = w.config.m;
  j["noise_sigma"] = w.config.noise_sigma;
  j["law"] = std::string(to_string(w.config.law));
  j["latent_dim"] = w.config.latent_dim;
  j["latent_noise"] = w.config.latent_noise;
  j["magnitude_scale"] = w.config.magnitude_scale;
  j["magnitudes"] = std::vector<double>(w.magnitudes.data(), w.magnitudes.data() + w.magnitudes.size());
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + (dir / "manifest.json").string());
}

SyntheticWorld load_world(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + (dir / "manifest.json").string());
  WorldConfig cfg;
  std::vector<double> mags;
  try {
    const auto j = nlohmann::json::parse(in);
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.d = j.at("d").get<std::size_t>();
    cfg.k = j.at("k").get<std::size_t>();
    cfg.n = j.at("n").get<std::size_t>();
    cfg.m = j.at("m").get<std::size_t>();
    cfg.noise_sigma = j.at("noise_sigma").get<double>();
    cfg.law = parse_coefficient_law(j.at("law").get<std::string>());
    cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
    cfg.latent_noise = j.at("latent_noise").get<double>();
    cfg.magnitude_scale = j.at("magnitude_scale").get<double>();
    mags = j.at("magnitudes").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadFormat, "manifest.json: " + std::string(e.what()));
  }
  EmbeddingSet emb = load_embedding_set(dir / "embeddings.emb");
  Lexicon lexicon = load_lexicon(dir / "lexicon.emb", dir / "tokens.txt");
  const RowMatrix planted_rows = load_matrix(dir / "planted.emb");
  const RowMatrix axes_rows = load_matrix(dir / "latent_axes.emb");
  Vector magnitudes = Eigen::Map<const Vector>(mags.data(), static_cast<Eigen::Index>(mags.size()));
  Vector theme = load_matrix(dir / "theme.emb").row(0).transpose();
  return SyntheticWorld{cfg,
                        std::move(emb),
                        Matrix(planted_rows.transpose()),
                        load_matrix(dir / "coefficients.emb"),
                        std::move(magnitudes),
                        std::move(theme),
                        std::move(lexicon),
                        load_toy_encoder(dir / "encoder"),
                        load_taxonomy(dir / "taxonomy.tsv"),
                        load_latent_set(dir / "latents"),
                        Matrix(axes_rows.transpose())};
}

}  // namespace diratlas
