#include "diratlas/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "diratlas/error.hpp"
#include "diratlas/exemplar.hpp"
#include "diratlas/parallel.hpp"
#include "diratlas/project.hpp"
#include "diratlas/refine.hpp"
#include "diratlas/zseval.hpp"

namespace diratlas {
namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    fail(ErrorCode::BadFormat, "bad number '" + s + "' in " + where);
  }
  return v;
}

std::size_t parse_index(const std::string& s, const std::string& where) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    fail(ErrorCode::BadFormat, "bad index '" + s + "' in " + where);
  }
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  if (v.empty()) return "-";
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::size_t> parse_list(const std::string& s, const std::string& where) {
  std::vector<std::size_t> out;
  if (s == "-") return out;
  for (const auto& part : split(s, ',')) out.push_back(parse_index(part, where));
  return out;
}

// ---- config ------------------------------------------------------------

[[noreturn]] void config_error(const std::string& what) { fail(ErrorCode::ConfigInvalid, what); }

void check_keys(const json& obj, const std::string& section, std::set<std::string> allowed) {
  if (!obj.is_object()) config_error("field '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      config_error("unknown field '" + (section.empty() ? key : section + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const std::string& section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    config_error("field '" + section + "." + key + "' has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

void read_path(const json& paths, const char* key, const fs::path& base, fs::path& out,
               bool required) {
  if (!paths.contains(key)) {
    if (required) config_error("missing required field 'paths." + std::string(key) + "'");
    return;
  }
  std::string s;
  read(paths, "paths", key, s);
  if (s.empty()) config_error("field 'paths." + std::string(key) + "' is empty");
  out = resolve(base, s);
}

void read_path(const json& paths, const char* key, const fs::path& base,
               std::optional<fs::path>& out) {
  if (!paths.contains(key) || paths.at(key).is_null()) return;
  fs::path p;
  read_path(paths, key, base, p, true);
  out = p;
}

// ---- stage plumbing -----------------------------------------------------

[[noreturn]] void rethrow_in(const std::string& where, const Error& e) {
  throw Error(e.code(), where + ": " + e.detail(), e.offset());
}

void set_status(const PipelineConfig& cfg, const std::string& stage, const std::string& value);

// Runs a stage body; failures are recorded in stages.txt and rethrown with
// the stage name attached.
template <typename Fn>
void in_stage(const PipelineConfig& cfg, const char* stage, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    const bool tagged = e.detail().rfind("stage ", 0) == 0;
    std::string note = tagged ? e.detail() : std::string("stage ") + stage + ": " + e.detail();
    std::replace_if(note.begin(), note.end(), [](char c) { return c == '\t' || c == '\n'; }, ' ');
    try {
      set_status(cfg, stage, "failed: " + note);
    } catch (const Error&) {
    }
    if (tagged) throw;
    rethrow_in(std::string("stage ") + stage, e);
  }
}

template <typename Fn>
void for_each_direction(const char* stage, std::size_t count, Fn&& fn) {
  parallel_for(count, [&](std::size_t i) {
    try {
      fn(i);
    } catch (const Error& e) {
      rethrow_in(std::string("stage ") + stage + ", direction " + std::to_string(i), e);
    }
  });
}

fs::path out_file(const PipelineConfig& cfg, const std::string& name) {
  return cfg.paths.output / name;
}

std::map<std::string, std::string> read_status(const PipelineConfig& cfg) {
  std::map<std::string, std::string> status;
  const fs::path p = out_file(cfg, "stages.txt");
  if (!fs::exists(p)) return status;
  for (const auto& line : load_lines(p)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    status[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return status;
}

void set_status(const PipelineConfig& cfg, const std::string& stage, const std::string& value) {
  auto status = read_status(cfg);
  status[stage] = value;
  std::vector<std::string> lines;
  for (const char* s : kStages) {
    if (status.count(s)) lines.push_back(std::string(s) + "\t" + status[s]);
  }
  save_lines(lines, out_file(cfg, "stages.txt"));
}

void clear_status_from(const PipelineConfig& cfg, const std::string& stage) {
  auto status = read_status(cfg);
  bool after = false;
  for (const char* s : kStages) {
    if (s == stage) after = true;
    if (after) status.erase(s);
  }
  std::vector<std::string> lines;
  for (const char* s : kStages) {
    if (status.count(s)) lines.push_back(std::string(s) + "\t" + status[s]);
  }
  save_lines(lines, out_file(cfg, "stages.txt"));
}

void ensure_output(const PipelineConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.paths.output, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + cfg.paths.output.string());
}

void require(const fs::path& p, const char* produced_by) {
  if (!fs::exists(p)) {
    fail(ErrorCode::IoFailure,
         p.string() + " is missing; run the " + std::string(produced_by) + " stage first");
  }
}

Lexicon load_lex(const PipelineConfig& cfg) {
  return load_lexicon(cfg.paths.lexicon, cfg.paths.tokens, cfg.paths.blocklist);
}

std::vector<std::size_t> prefixes_of(const PipelineConfig& cfg, const TextEncoder& enc) {
  if (!cfg.prefixes.empty()) {
    for (const auto p : cfg.prefixes) {
      if (p >= enc.prefix_count()) {
        fail(ErrorCode::ConfigInvalid, "prefix " + std::to_string(p) + " out of range (encoder has " +
                                           std::to_string(enc.prefix_count()) + ")");
      }
    }
    return cfg.prefixes;
  }
  std::vector<std::size_t> all(enc.prefix_count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

// Per-candidate refine record.
struct RefineRecord {
  std::size_t id = 0;
  std::string status = "kept";  // kept, abandoned, pending
  bool entangled = false;
  std::vector<std::size_t> kept;   // token indices surviving dedup
  std::vector<std::size_t> final;  // ids in the final set
};

void save_refine(const std::vector<RefineRecord>& records, const fs::path& path) {
  std::vector<std::string> lines;
  for (const auto& r : records) {
    lines.push_back("direction " + std::to_string(r.id) + "\tstatus " + r.status + "\tentangled " +
                    (r.entangled ? "1" : "0") + "\tkept " + join(r.kept) + "\tfinal " +
                    join(r.final));
  }
  save_lines(lines, path);
}

std::vector<RefineRecord> load_refine(const fs::path& path) {
  std::vector<RefineRecord> out;
  for (const auto& line : load_lines(path)) {
    if (line.empty()) continue;
    RefineRecord r;
    for (const auto& field : split(line, '\t')) {
      const auto sp = field.find(' ');
      if (sp == std::string::npos) fail(ErrorCode::BadFormat, "malformed refine line '" + line + "'");
      const std::string key = field.substr(0, sp), value = field.substr(sp + 1);
      if (key == "direction") r.id = parse_index(value, path.string());
      else if (key == "status") r.status = value;
      else if (key == "entangled") r.entangled = value == "1";
      else if (key == "kept") r.kept = parse_list(value, path.string());
      else if (key == "final") r.final = parse_list(value, path.string());
      else fail(ErrorCode::BadFormat, "unknown refine field '" + key + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

// The final set: kept candidates in order, abandoned ones replaced by
// their derived directions.
struct FinalSet {
  DirectionSet directions;
  std::vector<ExemplarRecord> exemplars;
  std::vector<LabelSet> labels;
};

void save_final(const PipelineConfig& cfg, const FinalSet& f) {
  save_direction_set(f.directions, out_file(cfg, "final"));
  save_exemplars(f.exemplars, out_file(cfg, "final_exemplars"));
  save_label_sets(f.labels, out_file(cfg, "final_labels.txt"));
}

FinalSet load_final(const PipelineConfig& cfg) {
  require(out_file(cfg, "final.emb"), "refine");
  FinalSet f;
  f.directions = load_direction_set(out_file(cfg, "final"));
  f.exemplars = load_exemplars(out_file(cfg, "final_exemplars"));
  f.labels = load_label_sets(out_file(cfg, "final_labels.txt"));
  return f;
}

struct Derived {
  Direction direction;
  LabelSet labels;
};

// Rebuilds the final set from the candidates and, per abandoned candidate,
// its derived directions. Exemplars of derived directions are selected anew.
FinalSet build_final(const PipelineConfig& cfg, const EmbeddingSet& emb,
                     const DirectionSet& candidates, const std::vector<ExemplarRecord>& exemplars,
                     const std::vector<LabelSet>& labels, std::vector<RefineRecord>& records,
                     const std::map<std::size_t, std::vector<Derived>>& derived) {
  FinalSet f;
  f.directions.mean = candidates.mean;
  for (auto& r : records) {
    r.final.clear();
    const auto it = derived.find(r.id);
    if (r.status != "abandoned" || it == derived.end()) {
      r.final.push_back(f.directions.size());
      f.directions.directions.push_back(candidates.directions[r.id]);
      ExemplarRecord ex = exemplars[r.id];
      ex.direction_id = r.final.back();
      f.exemplars.push_back(std::move(ex));
      LabelSet ls = labels[r.id];
      ls.direction_id = r.final.back();
      f.labels.push_back(std::move(ls));
      continue;
    }
    for (const auto& d : it->second) {
      const std::size_t id = f.directions.size();
      r.final.push_back(id);
      f.directions.directions.push_back(d.direction);
      ExemplarSplit split;
      try {
        split = select_exemplars(emb, candidates.mean, d.direction, cfg.exemplar.m_top);
      } catch (const Error& e) {
        rethrow_in("derived direction " + std::to_string(id), e);
      }
      f.exemplars.push_back({id, std::move(split)});
      LabelSet ls = d.labels;
      ls.direction_id = id;
      f.labels.push_back(std::move(ls));
    }
  }
  return f;
}

}  // namespace

// ---- config -------------------------------------------------------------

PipelineConfig parse_config(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "", {"paths", "extraction", "exemplar", "labeling", "refine", "disentangle",
                     "project", "eval", "seed"});
  PipelineConfig cfg;
  if (!j.contains("paths")) config_error("missing required field 'paths'");
  const json& p = j.at("paths");
  check_keys(p, "paths", {"embeddings", "lexicon", "tokens", "encoder", "output", "blocklist",
                          "taxonomy", "latents", "planted"});
  read_path(p, "embeddings", base_dir, cfg.paths.embeddings, true);
  read_path(p, "lexicon", base_dir, cfg.paths.lexicon, true);
  read_path(p, "tokens", base_dir, cfg.paths.tokens, true);
  read_path(p, "encoder", base_dir, cfg.paths.encoder, true);
  read_path(p, "output", base_dir, cfg.paths.output, true);
  read_path(p, "blocklist", base_dir, cfg.paths.blocklist);
  read_path(p, "taxonomy", base_dir, cfg.paths.taxonomy);
  read_path(p, "latents", base_dir, cfg.paths.latents);
  read_path(p, "planted", base_dir, cfg.paths.planted);

  read(j, "", "seed", cfg.extraction.seed);
  if (j.contains("extraction")) {
    const json& e = j.at("extraction");
    check_keys(e, "extraction", {"method", "k", "n_pca", "n_random", "corr_threshold", "seed",
                                 "ica_max_iter", "ica_tol"});
    read(e, "extraction", "method", cfg.extraction.method);
    read(e, "extraction", "k", cfg.extraction.k);
    read(e, "extraction", "n_pca", cfg.extraction.n_pca);
    read(e, "extraction", "n_random", cfg.extraction.n_random);
    read(e, "extraction", "corr_threshold", cfg.extraction.corr_threshold);
    read(e, "extraction", "seed", cfg.extraction.seed);
    read(e, "extraction", "ica_max_iter", cfg.extraction.ica_max_iter);
    read(e, "extraction", "ica_tol", cfg.extraction.ica_tol);
  }
  if (j.contains("exemplar")) {
    check_keys(j.at("exemplar"), "exemplar", {"m_top"});
    read(j.at("exemplar"), "exemplar", "m_top", cfg.exemplar.m_top);
  }
  if (j.contains("labeling")) {
    const json& l = j.at("labeling");
    check_keys(l, "labeling", {"max_iterations", "learning_rate", "lambda", "regularizer",
                               "l1_lambda", "top_k", "prefixes"});
    read(l, "labeling", "max_iterations", cfg.labeling.max_iterations);
    read(l, "labeling", "learning_rate", cfg.labeling.learning_rate);
    read(l, "labeling", "lambda", cfg.labeling.lambda);
    read(l, "labeling", "l1_lambda", cfg.labeling.l1_lambda);
    read(l, "labeling", "top_k", cfg.labeling.top_k);
    read(l, "labeling", "prefixes", cfg.prefixes);
    if (l.contains("regularizer")) {
      std::string r;
      read(l, "labeling", "regularizer", r);
      try {
        cfg.labeling.regularizer = parse_regularizer(r);
      } catch (const Error&) {
        config_error("field 'labeling.regularizer' must be entropy, binary_entropy or l1");
      }
    }
  }
  if (j.contains("refine")) {
    const json& r = j.at("refine");
    check_keys(r, "refine", {"threshold", "split_mode"});
    read(r, "refine", "threshold", cfg.refine.threshold);
    if (r.contains("split_mode")) {
      std::string mode;
      read(r, "refine", "split_mode", mode);
      if (mode == "reseed") cfg.refine.split_mode = SplitMode::Reseed;
      else if (mode == "optimize") cfg.refine.split_mode = SplitMode::Optimize;
      else config_error("field 'refine.split_mode' must be reseed or optimize");
    }
  }
  if (j.contains("disentangle")) {
    const json& d = j.at("disentangle");
    check_keys(d, "disentangle", {"beta", "learning_rate", "max_iterations", "init_noise"});
    read(d, "disentangle", "beta", cfg.disentangle.beta);
    read(d, "disentangle", "learning_rate", cfg.disentangle.learning_rate);
    read(d, "disentangle", "max_iterations", cfg.disentangle.max_iterations);
    read(d, "disentangle", "init_noise", cfg.disentangle.init_noise);
  }
  if (j.contains("project")) {
    const json& p2 = j.at("project");
    check_keys(p2, "project", {"c_param", "max_iter", "tol"});
    read(p2, "project", "c_param", cfg.project.c_param);
    read(p2, "project", "max_iter", cfg.project.max_iter);
    read(p2, "project", "tol", cfg.project.tol);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, "eval", {"temperature", "tolerance"});
    read(e, "eval", "temperature", cfg.eval.temperature);
    read(e, "eval", "tolerance", cfg.eval.tolerance);
  }
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

std::string dump_config(const PipelineConfig& cfg) {
  ojson j;
  auto& p = j["paths"];
  p["embeddings"] = cfg.paths.embeddings.string();
  p["lexicon"] = cfg.paths.lexicon.string();
  p["tokens"] = cfg.paths.tokens.string();
  p["encoder"] = cfg.paths.encoder.string();
  p["output"] = cfg.paths.output.string();
  if (cfg.paths.blocklist) p["blocklist"] = cfg.paths.blocklist->string();
  if (cfg.paths.taxonomy) p["taxonomy"] = cfg.paths.taxonomy->string();
  if (cfg.paths.latents) p["latents"] = cfg.paths.latents->string();
  if (cfg.paths.planted) p["planted"] = cfg.paths.planted->string();
  auto& e = j["extraction"];
  e["method"] = cfg.extraction.method;
  e["k"] = cfg.extraction.k;
  e["n_pca"] = cfg.extraction.n_pca;
  e["n_random"] = cfg.extraction.n_random;
  e["corr_threshold"] = cfg.extraction.corr_threshold;
  e["seed"] = cfg.extraction.seed;
  e["ica_max_iter"] = cfg.extraction.ica_max_iter;
  e["ica_tol"] = cfg.extraction.ica_tol;
  j["exemplar"]["m_top"] = cfg.exemplar.m_top;
  auto& l = j["labeling"];
  l["max_iterations"] = cfg.labeling.max_iterations;
  l["learning_rate"] = cfg.labeling.learning_rate;
  l["lambda"] = cfg.labeling.lambda;
  l["regularizer"] = std::string(to_string(cfg.labeling.regularizer));
  l["l1_lambda"] = cfg.labeling.l1_lambda;
  l["top_k"] = cfg.labeling.top_k;
  if (!cfg.prefixes.empty()) l["prefixes"] = cfg.prefixes;
  j["refine"]["threshold"] = cfg.refine.threshold;
  j["refine"]["split_mode"] = cfg.refine.split_mode == SplitMode::Reseed ? "reseed" : "optimize";
  auto& d = j["disentangle"];
  d["beta"] = cfg.disentangle.beta;
  d["learning_rate"] = cfg.disentangle.learning_rate;
  d["max_iterations"] = cfg.disentangle.max_iterations;
  d["init_noise"] = cfg.disentangle.init_noise;
  j["project"]["c_param"] = cfg.project.c_param;
  j["project"]["max_iter"] = cfg.project.max_iter;
  j["project"]["tol"] = cfg.project.tol;
  j["eval"]["temperature"] = cfg.eval.temperature;
  j["eval"]["tolerance"] = cfg.eval.tolerance;
  return j.dump(2) + "\n";
}

void validate(const PipelineConfig& cfg) {
  auto need = [](const fs::path& p, const char* field) {
    if (!fs::exists(p)) config_error("path '" + p.string() + "' for " + field + " does not exist");
  };
  need(cfg.paths.embeddings, "paths.embeddings");
  need(cfg.paths.lexicon, "paths.lexicon");
  need(cfg.paths.tokens, "paths.tokens");
  need(cfg.paths.encoder.string() + ".A.emb", "paths.encoder");
  if (cfg.paths.output.empty()) config_error("missing required field 'paths.output'");
  if (cfg.paths.blocklist) need(*cfg.paths.blocklist, "paths.blocklist");
  if (cfg.paths.taxonomy) need(*cfg.paths.taxonomy, "paths.taxonomy");
  if (cfg.paths.latents) need(cfg.paths.latents->string() + ".emb", "paths.latents");
  if (cfg.paths.planted) need(*cfg.paths.planted, "paths.planted");

  const auto& e = cfg.extraction;
  static const std::set<std::string> methods{"pca", "ica", "random", "hybrid"};
  if (!methods.count(e.method)) config_error("field 'extraction.method' must be pca, ica, random or hybrid");
  if (e.method != "hybrid" && e.k < 1) config_error("field 'extraction.k' must be >= 1");
  if (e.method == "hybrid" && e.n_pca + e.n_random < 1) {
    config_error("fields 'extraction.n_pca' + 'extraction.n_random' must be >= 1");
  }
  if (!(e.corr_threshold > 0 && e.corr_threshold <= 1)) {
    config_error("field 'extraction.corr_threshold' must be in (0, 1]");
  }
  if (e.ica_max_iter < 1 || !(e.ica_tol > 0)) config_error("ICA iteration limits must be positive");
  if (cfg.exemplar.m_top < 1) config_error("field 'exemplar.m_top' must be >= 1");
  try {
    validate(cfg.labeling);
  } catch (const Error& err) {
    config_error("labeling: " + err.detail());
  }
  if (!(cfg.refine.threshold >= 0 && cfg.refine.threshold <= 1)) {
    config_error("field 'refine.threshold' must be in [0, 1]");
  }
  const auto& d = cfg.disentangle;
  if (!(d.beta >= 0) || !(d.learning_rate > 0) || d.max_iterations < 1 || !(d.init_noise >= 0)) {
    config_error("disentangle fields out of range (beta >= 0, learning_rate > 0, max_iterations >= 1)");
  }
  if (!(cfg.project.c_param > 0) || cfg.project.max_iter < 1 || !(cfg.project.tol >= 0)) {
    config_error("project fields out of range (c_param > 0, max_iter >= 1, tol >= 0)");
  }
  if (!(cfg.eval.temperature > 0) || !std::isfinite(cfg.eval.temperature)) {
    config_error("field 'eval.temperature' must be a positive finite number");
  }
  if (!(cfg.eval.tolerance >= 0)) config_error("field 'eval.tolerance' must be >= 0");
}

PipelineConfig world_config(const fs::path& world_dir, const fs::path& output, std::size_t k) {
  PipelineConfig cfg;
  cfg.paths.embeddings = world_dir / "embeddings.emb";
  cfg.paths.lexicon = world_dir / "lexicon.emb";
  cfg.paths.tokens = world_dir / "tokens.txt";
  cfg.paths.encoder = world_dir / "encoder";
  cfg.paths.taxonomy = world_dir / "taxonomy.tsv";
  cfg.paths.latents = world_dir / "latents";
  cfg.paths.planted = world_dir / "planted.emb";
  cfg.paths.output = output;
  cfg.extraction.k = k;
  return cfg;
}

// ---- label set files ----------------------------------------------------

void save_label_sets(const std::vector<LabelSet>& sets, const fs::path& path) {
  std::vector<std::string> lines;
  Eigen::Index d = 0;
  for (const auto& s : sets) d = std::max(d, s.refined.size());
  RowMatrix refined = RowMatrix::Zero(static_cast<Eigen::Index>(sets.size()), std::max<Eigen::Index>(d, 1));
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto& s = sets[i];
    lines.push_back("direction " + std::to_string(s.direction_id) + "\tbest_prefix " +
                    std::to_string(s.best_prefix) + "\tinitial_loss " + fmt(s.initial_loss) +
                    "\tfinal_loss " + fmt(s.final_loss) + "\tno_progress " +
                    (s.no_progress ? "1" : "0") + "\tcount " + std::to_string(s.entries.size()));
    for (const auto& e : s.entries) {
      lines.push_back("label\t" + std::to_string(e.token) + "\t" + fmt(e.score) + "\t" + e.text);
    }
    if (s.refined.size() == d) refined.row(static_cast<Eigen::Index>(i)) = s.refined.transpose();
  }
  save_lines(lines, path);
  fs::path emb = path;
  emb.replace_extension(".refined.emb");
  if (!sets.empty()) save_matrix(refined, emb);
}

std::vector<LabelSet> load_label_sets(const fs::path& path) {
  const auto lines = load_lines(path);
  std::vector<LabelSet> out;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const auto& line = lines[li];
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields[0].rfind("direction ", 0) == 0) {
      LabelSet s;
      std::size_t count = 0;
      for (const auto& f : fields) {
        const auto sp = f.find(' ');
        if (sp == std::string::npos) fail(ErrorCode::BadFormat, "malformed label header '" + line + "'");
        const std::string key = f.substr(0, sp), value = f.substr(sp + 1);
        if (key == "direction") s.direction_id = parse_index(value, path.string());
        else if (key == "best_prefix") s.best_prefix = parse_index(value, path.string());
        else if (key == "initial_loss") s.initial_loss = parse_double(value, path.string());
        else if (key == "final_loss") s.final_loss = parse_double(value, path.string());
        else if (key == "no_progress") s.no_progress = value == "1";
        else if (key == "count") count = parse_index(value, path.string());
        else fail(ErrorCode::BadFormat, "unknown label header field '" + key + "'");
      }
      for (std::size_t c = 0; c < count; ++c) {
        if (++li >= lines.size()) fail(ErrorCode::BadFormat, path.string() + " is truncated");
        const auto lf = split(lines[li], '\t');
        if (lf.size() < 4 || lf[0] != "label") {
          fail(ErrorCode::BadFormat, "malformed label line '" + lines[li] + "'");
        }
        std::string text = lf[3];
        for (std::size_t k = 4; k < lf.size(); ++k) text += "\t" + lf[k];
        s.entries.push_back({parse_index(lf[1], path.string()), text,
                             parse_double(lf[2], path.string())});
      }
      out.push_back(std::move(s));
    } else {
      fail(ErrorCode::BadFormat, "unexpected line '" + line + "' in " + path.string());
    }
  }
  fs::path emb = path;
  emb.replace_extension(".refined.emb");
  if (!out.empty() && fs::exists(emb)) {
    const RowMatrix refined = load_matrix(emb);
    if (refined.rows() != static_cast<Eigen::Index>(out.size())) {
      fail(ErrorCode::CountMismatch, emb.string() + " does not have one row per label set");
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].refined = refined.row(static_cast<Eigen::Index>(i)).transpose();
    }
  }
  return out;
}

// ---- stages ---------------------------------------------------------------

void run_extract(const PipelineConfig& cfg) {
  in_stage(cfg, "extract", [&] {
    ensure_output(cfg);
    clear_status_from(cfg, "extract");
    const EmbeddingSet emb = load_embedding_set(cfg.paths.embeddings);
    const auto& e = cfg.extraction;
    DirectionSet set;
    if (e.method == "pca") {
      set = pca_directions(emb, e.k);
    } else if (e.method == "ica") {
      set = ica_directions(emb, e.k, IcaConfig{e.ica_max_iter, e.ica_tol, e.seed});
    } else if (e.method == "random") {
      set = random_directions(e.seed, e.k, static_cast<std::size_t>(emb.dim()));
      set.mean = mean_vector(emb);
    } else {
      set = hybrid_directions(emb, e.n_pca, e.n_random, e.corr_threshold, e.seed);
    }
    if (set.mean.size() == 0) set.mean = mean_vector(emb);
    save_direction_set(set, out_file(cfg, "candidates"));
    std::string status = "done";
    if (set.rank_deficient) status += " (rank deficient)";
    if (!set.converged) status += " (no convergence)";
    set_status(cfg, "extract", status);
  });
}

void run_select(const PipelineConfig& cfg) {
  in_stage(cfg, "select", [&] {
    require(out_file(cfg, "candidates.emb"), "extract");
    clear_status_from(cfg, "select");
    const EmbeddingSet emb = load_embedding_set(cfg.paths.embeddings);
    const DirectionSet set = load_direction_set(out_file(cfg, "candidates"));
    std::vector<ExemplarRecord> records(set.size());
    for_each_direction("select", set.size(), [&](std::size_t i) {
      records[i] = {i, select_exemplars(emb, set.mean, set.directions[i], cfg.exemplar.m_top)};
    });
    save_exemplars(records, out_file(cfg, "exemplars"));
    set_status(cfg, "select", "done");
  });
}

void run_label(const PipelineConfig& cfg) {
  in_stage(cfg, "label", [&] {
    require(out_file(cfg, "exemplars.txt"), "select");
    clear_status_from(cfg, "label");
    const Lexicon lex = load_lex(cfg);
    const ToyEncoder enc = load_toy_encoder(cfg.paths.encoder);
    const auto prefixes = prefixes_of(cfg, enc);
    const auto exemplars = load_exemplars(out_file(cfg, "exemplars"));
    std::vector<LabelSet> labels(exemplars.size());
    for_each_direction("label", exemplars.size(), [&](std::size_t i) {
      labels[i] = optimize_labels(exemplars[i].split.centroid, enc, lex, prefixes, cfg.labeling,
                                  exemplars[i].direction_id);
    });
    save_label_sets(labels, out_file(cfg, "labels.txt"));
    const auto stuck = std::count_if(labels.begin(), labels.end(),
                                     [](const LabelSet& l) { return l.no_progress; });
    set_status(cfg, "label", stuck ? "done (" + std::to_string(stuck) + " without progress)" : "done");
  });
}

void run_refine(const PipelineConfig& cfg) {
  in_stage(cfg, "refine", [&] {
    require(out_file(cfg, "labels.txt"), "label");
    clear_status_from(cfg, "refine");
    const EmbeddingSet emb = load_embedding_set(cfg.paths.embeddings);
    const DirectionSet candidates = load_direction_set(out_file(cfg, "candidates"));
    const auto exemplars = load_exemplars(out_file(cfg, "exemplars"));
    const auto labels = load_label_sets(out_file(cfg, "labels.txt"));
    std::vector<RefineRecord> records(candidates.size());
    for (std::size_t i = 0; i < records.size(); ++i) records[i].id = i;
    std::map<std::size_t, std::vector<Derived>> derived;

    std::string status = "skipped: no taxonomy";
    if (cfg.paths.taxonomy) {
      const Taxonomy tax = load_taxonomy(*cfg.paths.taxonomy);
      const Lexicon lex = load_lex(cfg);
      const ToyEncoder enc = load_toy_encoder(cfg.paths.encoder);
      std::size_t entangled = 0;
      for (std::size_t i = 0; i < records.size(); ++i) {
        auto& r = records[i];
        const DedupResult dd = dedup_labels(labels[i].entries, tax, cfg.refine.threshold);
        r.entangled = dd.entangled;
        for (const auto& k : dd.kept) r.kept.push_back(k.token);
        if (!dd.entangled) continue;
        ++entangled;
        if (cfg.refine.split_mode == SplitMode::Optimize) {
          r.status = "pending";
          continue;
        }
        r.status = "abandoned";
        std::vector<std::string> words;
        for (const auto& k : dd.kept) words.push_back(k.text);
        std::vector<Direction> dirs;
        try {
          dirs = split_by_reseed(words, lex, enc, labels[i].best_prefix);
        } catch (const Error& e) {
          rethrow_in("stage refine, direction " + std::to_string(i), e);
        }
        auto& list = derived[i];
        for (std::size_t w = 0; w < dirs.size(); ++w) {
          dirs[w].provenance.source = i;
          LabelSet ls;
          ls.entries = {dd.kept[w]};
          ls.refined = dirs[w].vector;
          ls.best_prefix = labels[i].best_prefix;
          list.push_back({dirs[w], std::move(ls)});
        }
      }
      status = "done (" + std::to_string(entangled) + " entangled)";
    }
    const FinalSet f = build_final(cfg, emb, candidates, exemplars, labels, records, derived);
    save_refine(records, out_file(cfg, "refine.txt"));
    save_final(cfg, f);
    set_status(cfg, "refine", status);
  });
}

void run_disentangle(const PipelineConfig& cfg) {
  in_stage(cfg, "disentangle", [&] {
    require(out_file(cfg, "refine.txt"), "refine");
    clear_status_from(cfg, "disentangle");
    auto records = load_refine(out_file(cfg, "refine.txt"));
    std::vector<std::size_t> pending;
    for (const auto& r : records) {
      if (r.status == "pending") pending.push_back(r.id);
    }
    if (cfg.refine.split_mode != SplitMode::Optimize) {
      set_status(cfg, "disentangle", "skipped: split_mode is reseed");
      return;
    }
    if (pending.empty()) {
      set_status(cfg, "disentangle", "skipped: no entangled directions");
      return;
    }
    const EmbeddingSet emb = load_embedding_set(cfg.paths.embeddings);
    const DirectionSet candidates = load_direction_set(out_file(cfg, "candidates"));
    const auto exemplars = load_exemplars(out_file(cfg, "exemplars"));
    const auto labels = load_label_sets(out_file(cfg, "labels.txt"));
    const Lexicon lex = load_lex(cfg);
    const ToyEncoder enc = load_toy_encoder(cfg.paths.encoder);

    std::vector<DisentangleResult> results(pending.size());
    std::vector<std::vector<LabelEntry>> kept(pending.size());
    for_each_direction("disentangle", pending.size(), [&](std::size_t p) {
      const std::size_t id = pending[p];
      for (const auto tok : records[id].kept) {
        const auto it = std::find_if(labels[id].entries.begin(), labels[id].entries.end(),
                                     [tok](const LabelEntry& e) { return e.token == tok; });
        kept[p].push_back(*it);
      }
      DisentangleProblem prob = make_disentangle_problem(
          candidates.directions[id].vector, kept[p], lex, enc, labels[id].best_prefix);
      prob.beta = cfg.disentangle.beta;
      prob.learning_rate = cfg.disentangle.learning_rate;
      prob.max_iterations = cfg.disentangle.max_iterations;
      prob.init_noise = cfg.disentangle.init_noise;
      prob.seed = cfg.extraction.seed + id;
      results[p] = disentangle(prob);
    });

    std::map<std::size_t, std::vector<Derived>> derived;
    for (std::size_t p = 0; p < pending.size(); ++p) {
      const std::size_t id = pending[p];
      save_disentangle_result(results[p], id, out_file(cfg, "disentangle_" + std::to_string(id)));
      records[id].status = "abandoned";
      auto& list = derived[id];
      for (Eigen::Index c = 0; c < results[p].b.cols(); ++c) {
        Vector v = results[p].b.col(c);
        const Provenance prov{DirectionKind::Atomic, static_cast<std::size_t>(c), 0, id};
        LabelSet ls;
        ls.entries = {kept[p][static_cast<std::size_t>(c)]};
        ls.refined = v;
        ls.best_prefix = labels[id].best_prefix;
        list.push_back({Direction{std::move(v), prov, 0.0}, std::move(ls)});
      }
    }
    const FinalSet f = build_final(cfg, emb, candidates, exemplars, labels, records, derived);
    save_refine(records, out_file(cfg, "refine.txt"));
    save_final(cfg, f);
    set_status(cfg, "disentangle", "done (" + std::to_string(pending.size()) + " split)");
  });
}

void run_project(const PipelineConfig& cfg) {
  in_stage(cfg, "project", [&] {
    require(out_file(cfg, "final.emb"), "refine");
    clear_status_from(cfg, "project");
    if (!cfg.paths.latents) {
      set_status(cfg, "project", "skipped: no latents");
      return;
    }
    const LatentCodeSet latents = load_latent_set(*cfg.paths.latents);
    const EmbeddingSet emb = load_embedding_set(cfg.paths.embeddings);
    if (latents.size() != emb.size()) {
      fail(ErrorCode::CountMismatch, "latents have " + std::to_string(latents.size()) +
                                         " rows, embeddings " + std::to_string(emb.size()));
    }
    const FinalSet f = load_final(cfg);
    std::vector<SvmResult> results(f.directions.size());
    for_each_direction("project", f.directions.size(), [&](std::size_t i) {
      const auto& split = f.exemplars[i].split;
      SvmConfig sc{cfg.project.c_param, cfg.project.max_iter, cfg.project.tol,
                   cfg.extraction.seed + i};
      results[i] = svm_direction(select_rows(latents, split.positive),
                                 select_rows(latents, split.negative), sc);
    });
    RowMatrix dirs(static_cast<Eigen::Index>(results.size()), latents.dim());
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      dirs.row(static_cast<Eigen::Index>(i)) = r.direction.vector.transpose();
      lines.push_back("direction " + std::to_string(i) + "\tmargin " + fmt(r.direction.margin) +
                      "\ttraining_accuracy " + fmt(r.training_accuracy) + "\tepochs " +
                      std::to_string(r.epochs) + "\tconverged " + (r.converged ? "1" : "0") +
                      "\tdegenerate " + (r.degenerate ? "1" : "0"));
    }
    save_matrix(dirs, out_file(cfg, "latent_directions.emb"));
    save_lines(lines, out_file(cfg, "project.txt"));
    set_status(cfg, "project", "done");
  });
}

void run_evaluate(const PipelineConfig& cfg) {
  in_stage(cfg, "evaluate", [&] {
    require(out_file(cfg, "final.emb"), "refine");
    clear_status_from(cfg, "evaluate");
    const FinalSet f = load_final(cfg);
    const EmbeddingSet emb = load_embedding_set(cfg.paths.embeddings);
    const Lexicon lex = load_lex(cfg);
    const ToyEncoder enc = load_toy_encoder(cfg.paths.encoder);

    // One prompt per labeled final direction: its top-1 word.
    std::vector<std::size_t> with_label;
    for (std::size_t i = 0; i < f.labels.size(); ++i) {
      if (!f.labels[i].entries.empty()) with_label.push_back(i);
    }
    std::ofstream out(out_file(cfg, "evaluation.jsonl"));
    if (with_label.size() >= 1) {
      RowMatrix prompts(static_cast<Eigen::Index>(with_label.size()), emb.dim());
      std::vector<std::string> names;
      for (std::size_t p = 0; p < with_label.size(); ++p) {
        const auto& ls = f.labels[with_label[p]];
        const Vector e = lex.embeddings.row(static_cast<Eigen::Index>(ls.entries.front().token)).transpose();
        prompts.row(static_cast<Eigen::Index>(p)) = enc.forward(ls.best_prefix, e).transpose();
        names.push_back(ls.entries.front().text);
      }
      const EmbeddingSet prompt_set = make_embedding_set(prompts, names);
      for (const auto i : with_label) {
        RowMatrix pos(static_cast<Eigen::Index>(f.exemplars[i].split.positive.size()), emb.dim());
        for (std::size_t r = 0; r < f.exemplars[i].split.positive.size(); ++r) {
          pos.row(static_cast<Eigen::Index>(r)) =
              emb.data.row(static_cast<Eigen::Index>(f.exemplars[i].split.positive[r]));
        }
        ZeroShotScore zs;
        try {
          zs = zero_shot_scores(make_embedding_set(std::move(pos)), prompt_set, cfg.eval.temperature);
        } catch (const Error& e) {
          rethrow_in("stage evaluate, direction " + std::to_string(i), e);
        }
        const Vector m = zs.column_means();
        ojson j;
        j["direction"] = i;
        j["scores"] = std::vector<double>(m.data(), m.data() + m.size());
        j["prompts"] = zs.prompt_labels;
        out << j.dump() << '\n';
      }
    }
    if (!out) fail(ErrorCode::IoFailure, "cannot write evaluation.jsonl");
    set_status(cfg, "evaluate", with_label.empty() ? "skipped: no labels" : "done");
  });
}

// ---- report -------------------------------------------------------------

PipelineReport write_report(const PipelineConfig& cfg) {
  PipelineReport rep;
  in_stage(cfg, "report", [&] {
    require(out_file(cfg, "candidates.emb"), "extract");
    const DirectionSet candidates = load_direction_set(out_file(cfg, "candidates"));
    rep.candidates = candidates.size();
    std::vector<ExemplarRecord> exemplars;
    std::vector<LabelSet> labels;
    if (fs::exists(out_file(cfg, "exemplars.txt"))) exemplars = load_exemplars(out_file(cfg, "exemplars"));
    if (fs::exists(out_file(cfg, "labels.txt"))) labels = load_label_sets(out_file(cfg, "labels.txt"));
    std::vector<RefineRecord> refine;
    if (fs::exists(out_file(cfg, "refine.txt"))) refine = load_refine(out_file(cfg, "refine.txt"));
    std::optional<FinalSet> fin;
    if (fs::exists(out_file(cfg, "final.emb"))) fin = load_final(cfg);
    std::vector<std::string> project_lines;
    std::optional<RowMatrix> latent_dirs;
    if (fs::exists(out_file(cfg, "project.txt"))) {
      project_lines = load_lines(out_file(cfg, "project.txt"));
      latent_dirs = load_matrix(out_file(cfg, "latent_directions.emb"));
    }
    std::map<std::size_t, json> evaluation;
    if (fs::exists(out_file(cfg, "evaluation.jsonl"))) {
      for (const auto& line : load_lines(out_file(cfg, "evaluation.jsonl"))) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        evaluation[j.at("direction").get<std::size_t>()] = j;
      }
    }

    auto labels_json = [](const LabelSet& ls) {
      ojson arr = ojson::array();
      for (const auto& e : ls.entries) {
        arr.push_back({{"token", e.token}, {"text", e.text}, {"score", e.score}});
      }
      return arr;
    };
    auto final_json = [&](std::size_t f) {
      ojson j;
      if (f < project_lines.size()) {
        ojson latent;
        for (const auto& field : split(project_lines[f], '\t')) {
          const auto sp = field.find(' ');
          const std::string key = field.substr(0, sp), value = field.substr(sp + 1);
          if (key == "direction") continue;
          if (key == "converged" || key == "degenerate") latent[key] = value == "1";
          else if (key == "epochs") latent[key] = parse_index(value, "project.txt");
          else latent[key] = parse_double(value, "project.txt");
        }
        const auto row = latent_dirs->row(static_cast<Eigen::Index>(f));
        latent["vector"] = std::vector<double>(row.data(), row.data() + row.size());
        j["latent"] = latent;
      } else {
        j["latent"] = "skipped";
      }
      if (evaluation.count(f)) {
        j["evaluation"] = {{"scores", evaluation[f].at("scores")},
                           {"prompts", evaluation[f].at("prompts")}};
      } else {
        j["evaluation"] = "skipped";
      }
      return j;
    };

    std::ofstream out(out_file(cfg, "report.jsonl"));
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto& d = candidates.directions[i];
      ojson j;
      j["record"] = "candidate";
      j["id"] = i;
      j["provenance"] = format_provenance(d);
      if (i < exemplars.size()) {
        j["exemplars"] = {{"positive", exemplars[i].split.positive},
                          {"negative", exemplars[i].split.negative}};
      }
      if (i < labels.size()) j["labels"] = labels_json(labels[i]);
      if (i < refine.size()) {
        const auto& r = refine[i];
        j["status"] = r.status;
        j["entangled"] = r.entangled;
        j["kept"] = r.kept;
        j["final"] = r.final;
        if (r.status == "kept" && !r.final.empty()) {
          const ojson extra = final_json(r.final.front());
          for (const auto& [k, v] : extra.items()) j[k] = v;
        }
      }
      out << j.dump() << '\n';
    }
    if (fin) {
      rep.final_directions = fin->directions.size();
      for (std::size_t f = 0; f < fin->directions.size(); ++f) {
        const auto& d = fin->directions.directions[f];
        if (d.provenance.kind != DirectionKind::Reseed && d.provenance.kind != DirectionKind::Atomic) {
          continue;
        }
        ojson j;
        j["record"] = "derived";
        j["id"] = f;
        j["provenance"] = format_provenance(d);
        j["source"] = d.provenance.source;
        j["labels"] = labels_json(fin->labels[f]);
        j["exemplars"] = {{"positive", fin->exemplars[f].split.positive},
                          {"negative", fin->exemplars[f].split.negative}};
        const ojson extra = final_json(f);
        for (const auto& [k, v] : extra.items()) j[k] = v;
        out << j.dump() << '\n';
      }
    }

    const auto status = read_status(cfg);
    ojson summary;
    summary["record"] = "summary";
    ojson stages;
    for (const char* s : kStages) {
      const std::string v = status.count(s) ? status.at(s) : "not run";
      stages[s] = v;
      rep.stages.emplace_back(s, v);
    }
    summary["stages"] = stages;
    summary["candidates"] = rep.candidates;
    summary["final_directions"] = rep.final_directions;
    if (cfg.paths.planted && !labels.empty()) {
      const RowMatrix planted = load_matrix(*cfg.paths.planted);
      rep.recovery = recovery_report(Matrix(planted.transpose()), candidates, labels);
      ojson per = ojson::array();
      for (const auto& a : rep.recovery->per_attribute) {
        per.push_back({{"best_cosine", a.best_cosine},
                       {"direction", a.direction},
                       {"label_correct", a.label_correct}});
      }
      summary["recovery"] = {{"per_attribute", per},
                             {"attributes_recovered", rep.recovery->attributes_recovered}};
    }
    out << summary.dump() << '\n';
    if (!out) fail(ErrorCode::IoFailure, "cannot write report.jsonl");
    rep.report_path = out_file(cfg, "report.jsonl");
  });
  return rep;
}

PipelineReport run_pipeline(const PipelineConfig& cfg) {
  validate(cfg);
  run_extract(cfg);
  run_select(cfg);
  run_label(cfg);
  run_refine(cfg);
  run_disentangle(cfg);
  run_project(cfg);
  run_evaluate(cfg);
  return write_report(cfg);
}

}  // namespace diratlas
