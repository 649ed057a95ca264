// diratlas command line: one subcommand per pipeline stage, plus synth and
// pipeline.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "diratlas/error.hpp"
#include "diratlas/pipeline.hpp"
#include "diratlas/synthbench.hpp"
#include "diratlas/zseval.hpp"

namespace {

using namespace diratlas;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<std::size_t> k;
  std::optional<std::size_t> m_top;
  std::optional<double> lambda;
  std::optional<std::size_t> steps;
  std::optional<double> lr;
  std::optional<std::size_t> top_k;
  std::optional<double> threshold;
  std::optional<double> beta;
  std::optional<double> temperature;
  std::optional<std::string> out;
};

void add_overrides(CLI::App* app, Overrides& o) {
  app->add_option("--seed", o.seed, "Extraction, solver and SVM seed");
  app->add_option("--method", o.method, "Extraction method")
      ->check(CLI::IsMember({"pca", "ica", "random", "hybrid"}));
  app->add_option("--k", o.k, "Number of candidate directions");
  app->add_option("--m-top", o.m_top, "Exemplars per side");
  app->add_option("--lambda", o.lambda, "Sparsity weight");
  app->add_option("--steps", o.steps, "Labeling iterations");
  app->add_option("--lr", o.lr, "Labeling learning rate");
  app->add_option("--top-k", o.top_k, "Labels kept per direction");
  app->add_option("--threshold", o.threshold, "Wu-Palmer merge threshold");
  app->add_option("--beta", o.beta, "Reconstruction weight of the split solver");
  app->add_option("--temperature", o.temperature, "Zero-shot softmax temperature");
  app->add_option("--out", o.out, "Output directory");
}

PipelineConfig configure(const Overrides& o) {
  PipelineConfig cfg = load_config(o.config);
  if (o.seed) cfg.extraction.seed = *o.seed;
  if (o.method) cfg.extraction.method = *o.method;
  if (o.k) cfg.extraction.k = *o.k;
  if (o.m_top) cfg.exemplar.m_top = *o.m_top;
  if (o.lambda) cfg.labeling.lambda = *o.lambda;
  if (o.steps) cfg.labeling.max_iterations = *o.steps;
  if (o.lr) cfg.labeling.learning_rate = *o.lr;
  if (o.top_k) cfg.labeling.top_k = *o.top_k;
  if (o.threshold) cfg.refine.threshold = *o.threshold;
  if (o.beta) cfg.disentangle.beta = *o.beta;
  if (o.temperature) cfg.eval.temperature = *o.temperature;
  if (o.out) cfg.paths.output = *o.out;
  validate(cfg);
  return cfg;
}

void print_stage(const PipelineConfig& cfg, const std::string& stage) {
  const auto path = cfg.paths.output / "stages.txt";
  for (const auto& line : load_lines(path)) {
    if (line.rfind(stage + "\t", 0) == 0) std::cout << line << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discover, label and refine edit directions in embedding spaces"};
  app.require_subcommand(1);

  Overrides o;
  using StageFn = void (*)(const PipelineConfig&);
  const std::pair<const char*, StageFn> stages[] = {
      {"extract", run_extract}, {"select", run_select},           {"label", run_label},
      {"refine", run_refine},   {"disentangle", run_disentangle}, {"project", run_project}};
  const char* help[] = {"Extract candidate directions",      "Select exemplars per direction",
                        "Optimize labels per direction",     "Merge labels and split entangled directions",
                        "Run the split solver on entangled directions",
                        "Fit latent-space directions"};
  std::vector<std::pair<CLI::App*, StageFn>> stage_cmds;
  for (std::size_t i = 0; i < std::size(stages); ++i) {
    auto* cmd = app.add_subcommand(stages[i].first, help[i]);
    cmd->add_option("--config", o.config, "Pipeline config")->required()->check(CLI::ExistingFile);
    add_overrides(cmd, o);
    stage_cmds.emplace_back(cmd, stages[i].second);
  }

  auto* evaluate = app.add_subcommand("evaluate", "Zero-shot scores, or paired cosine of two embedding files");
  std::string original, edited;
  double tolerance = kDefaultTolerance;
  evaluate->add_option("--config", o.config, "Pipeline config")->check(CLI::ExistingFile);
  evaluate->add_option("--original", original, "Original embeddings")->check(CLI::ExistingFile);
  evaluate->add_option("--edited", edited, "Edited embeddings")->check(CLI::ExistingFile);
  evaluate->add_option("--tolerance", tolerance, "Paired distance tolerance");
  add_overrides(evaluate, o);

  auto* pipeline = app.add_subcommand("pipeline", "Run every stage and write report.jsonl");
  pipeline->add_option("--config", o.config, "Pipeline config")->required()->check(CLI::ExistingFile);
  add_overrides(pipeline, o);

  auto* synth = app.add_subcommand("synth", "Write a synthetic world and a pipeline config for it");
  WorldConfig world;
  std::string world_out;
  std::string law = "bimodal";
  synth->add_option("--out", world_out, "World directory")->required();
  synth->add_option("--seed", world.seed, "World seed");
  synth->add_option("--k", world.k, "Planted attributes");
  synth->add_option("--d", world.d, "Embedding dimension");
  synth->add_option("--n", world.n, "Samples");
  synth->add_option("--m", world.m, "Lexicon size");
  synth->add_option("--noise", world.noise_sigma, "Noise standard deviation");
  synth->add_option("--law", law, "Coefficient law")->check(CLI::IsMember({"bimodal", "gaussian"}));

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [cmd, fn] : stage_cmds) {
      if (!cmd->parsed()) continue;
      const PipelineConfig cfg = configure(o);
      fn(cfg);
      print_stage(cfg, cmd->get_name());
    }
    if (evaluate->parsed()) {
      if (!original.empty() || !edited.empty()) {
        if (original.empty() || edited.empty()) {
          std::cerr << "error: --original and --edited go together\n";
          return 2;
        }
        write_report_line(std::cout, paired_cosine(load_embedding_set(original),
                                                   load_embedding_set(edited), tolerance));
      } else {
        if (o.config.empty()) {
          std::cerr << "error: evaluate needs --config, or --original and --edited\n";
          return 2;
        }
        const PipelineConfig cfg = configure(o);
        run_evaluate(cfg);
        print_stage(cfg, "evaluate");
      }
    }
    if (pipeline->parsed()) {
      const PipelineReport rep = run_pipeline(configure(o));
      for (const auto& [name, status] : rep.stages) std::cout << name << '\t' << status << '\n';
      std::cout << "candidates\t" << rep.candidates << "\nfinal\t" << rep.final_directions << '\n';
      if (rep.recovery) {
        std::cout << "recovered\t" << rep.recovery->attributes_recovered << " of "
                  << rep.recovery->per_attribute.size() << '\n';
      }
      std::cout << "report\t" << rep.report_path.string() << '\n';
    }
    if (synth->parsed()) {
      world.law = parse_coefficient_law(law);
      const SyntheticWorld w = generate_world(world);
      save_world(w, world_out);
      const PipelineConfig cfg = world_config(".", "run", world.k);
      std::ofstream out(std::filesystem::path(world_out) / "pipeline.json");
      out << dump_config(cfg);
      if (!out) fail(ErrorCode::IoFailure, "cannot write pipeline.json");
      std::cout << "world\t" << world_out << "\nconfig\t"
                << (std::filesystem::path(world_out) / "pipeline.json").string() << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
