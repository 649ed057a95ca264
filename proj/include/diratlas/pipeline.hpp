#pragma once
// Config-driven orchestration of the labeling pipeline. Every stage reads
// the artifacts of the previous stages from the output directory and writes
// its own before returning, so stages can run one at a time.
//
// Artifacts in the output directory:
//   candidates.*         extracted direction set
//   exemplars.*          positive / negative exemplars per candidate
//   labels.txt           label sets per candidate, labels.refined.emb their t
//   refine.txt           dedup result and status per candidate
//   final.*              directions after splitting, final_exemplars.*,
//                        final_labels.txt
//   disentangle_<i>.*    solver output for candidate i
//   latent_directions.emb, project.txt
//   evaluation.jsonl
//   stages.txt           status of every stage
//   report.jsonl         one record per candidate and derived direction,
//                        then a summary record

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diratlas/labeler.hpp"
#include "diratlas/synthbench.hpp"

namespace diratlas {

enum class SplitMode { Reseed, Optimize };

struct PipelineConfig {
  struct Paths {
    std::filesystem::path embeddings;
    std::filesystem::path lexicon;  // token embedding matrix
    std::filesystem::path tokens;
    std::filesystem::path encoder;  // toy encoder stem
    std::filesystem::path output;
    std::optional<std::filesystem::path> blocklist;
    std::optional<std::filesystem::path> taxonomy;
    std::optional<std::filesystem::path> latents;  // latent set stem
    std::optional<std::filesystem::path> planted;  // rows are ground-truth attributes
  } paths;
  struct Extraction {
    std::string method = "pca";  // pca, ica, random, hybrid
    std::size_t k = 8;           // pca, ica, random
    std::size_t n_pca = 4;       // hybrid
    std::size_t n_random = 4;    // hybrid
    double corr_threshold = kDefaultCorrThreshold;
    std::uint64_t seed = 0;      // also seeds the solver and SVM shuffles
    std::size_t ica_max_iter = 400;
    double ica_tol = 1e-5;
  } extraction;
  struct Exemplar {
    std::size_t m_top = 100;
  } exemplar;
  LabelingConfig labeling;
  std::vector<std::size_t> prefixes;  // empty: every encoder prefix
  struct Refine {
    double threshold = 0.9;
    SplitMode split_mode = SplitMode::Reseed;
  } refine;
  struct Disentangle {
    double beta = 0.1;
    double learning_rate = 1e-3;
    std::size_t max_iterations = 500;
    double init_noise = 1e-2;
  } disentangle;
  struct Project {
    double c_param = 1.0;
    std::size_t max_iter = 300;
    double tol = 1e-6;
  } project;
  struct Eval {
    double temperature = 100.0;
    double tolerance = 0.6;
  } eval;
};

/// Parses a JSON config. Relative paths resolve against `base_dir`.
/// Missing required fields and unknown fields raise ConfigInvalid naming
/// the field ("paths.embeddings").
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);
/// Config as JSON text, paths written as given.
std::string dump_config(const PipelineConfig& cfg);

/// Numeric ranges and existence of every referenced input path.
void validate(const PipelineConfig& cfg);

/// A pipeline config for a world saved with save_world, writing to `output`.
PipelineConfig world_config(const std::filesystem::path& world_dir,
                            const std::filesystem::path& output, std::size_t k);

inline constexpr const char* kStages[] = {"extract", "select",  "label",    "refine",
                                          "disentangle", "project", "evaluate"};

void run_extract(const PipelineConfig& cfg);
void run_select(const PipelineConfig& cfg);
void run_label(const PipelineConfig& cfg);
void run_refine(const PipelineConfig& cfg);
void run_disentangle(const PipelineConfig& cfg);
void run_project(const PipelineConfig& cfg);
void run_evaluate(const PipelineConfig& cfg);

struct PipelineReport {
  std::vector<std::pair<std::string, std::string>> stages;  // name, status
  std::optional<RecoveryReport> recovery;                   // when planted is set
  std::size_t candidates = 0;
  std::size_t final_directions = 0;
  std::filesystem::path report_path;
};

/// Assembles report.jsonl from the artifacts present in the output directory.
PipelineReport write_report(const PipelineConfig& cfg);

/// validate, every stage in order, then write_report.
PipelineReport run_pipeline(const PipelineConfig& cfg);

/// Label sets as text: a header line per set, then one
/// "label<TAB>token<TAB>score<TAB>text" line per entry. Refined vectors are
/// the rows of `<path without extension>.refined.emb`.
void save_label_sets(const std::vector<LabelSet>& sets, const std::filesystem::path& path);
std::vector<LabelSet> load_label_sets(const std::filesystem::path& path);

}  // namespace diratlas
