// cirf: command-line driver for the rationale -> schema -> kernel pipeline.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cirf/cirf.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 2;

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string cache_dir;
  std::vector<std::string> ablate;
  std::string labels;
  std::optional<int> threads;
  bool force = false;
  bool json = false;
};

cirf::RunConfig resolve_config(const GlobalFlags& f) {
  cirf::RunConfig c = f.config.empty() ? cirf::RunConfig{} : cirf::load_run_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (!f.mode.empty()) c.mode = cirf::mode_from_name(f.mode);
  if (!f.cache_dir.empty()) c.cache_dir = f.cache_dir;
  for (const auto& a : f.ablate) {
    if (a == "random-filters") c.random_filters = true;
    if (a == "skip-augmentation") c.skip_augmentation = true;
  }
  if (!f.labels.empty()) c.labels = cirf::label_set_from_name(f.labels);
  if (f.threads) c.threads = *f.threads;
  c.train.seed = c.seed;
  c.train.threads = c.threads;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Schema-guided stance detection: rationales, schema induction, graph-kernel training"};
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--config", g.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for every random choice in the run");
  app.add_option("--mode", g.mode, "LLM gateway mode")->check(CLI::IsMember({"live", "record", "replay"}));
  app.add_option("--cache-dir", g.cache_dir, "Directory of the LLM and embedding caches");
  app.add_option("--ablate", g.ablate, "Ablation variant(s)")
      ->check(CLI::IsMember({"random-filters", "skip-augmentation"}));
  app.add_option("--labels", g.labels, "Label set of the CSV data")
      ->check(CLI::IsMember({"favor-against-none", "pro-con-neutral"}));
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "Accept mismatched artifact fingerprints");
  app.add_flag("--json", g.json, "Machine-readable output");

  std::string data, out, train_path, dev_path, library, out_dir, text, target, log_path;
  std::vector<std::string> graphs, checkpoints;
  int preview = -1;
  cirf::synth::Options synth_opts;

  auto* gen = app.add_subcommand("generate-fol", "Produce rationales and FOL graphs for a CSV dataset");
  gen->add_option("--data", data, "Dataset CSV (text,target,label)")->required();
  gen->add_option("--out", out, "Graphs file to write (NDJSON)")->required();

  auto* induce = app.add_subcommand("induce", "Induce a schema library from graphs or datasets");
  induce->add_option("--graphs", graphs, "Graphs NDJSON or dataset CSV files")->required();
  induce->add_option("--out", out, "Schema library to write (JSON)")->required();

  auto* train = app.add_subcommand("train", "Train the graph-kernel classifier");
  train->add_option("--train", train_path, "Training graphs or CSV")->required();
  train->add_option("--dev", dev_path, "Development graphs or CSV (defaults to the training set)");
  train->add_option("--library", library, "Schema library");
  train->add_option("--out", out, "Checkpoint path; later trials get .trialN suffixes")->required();
  train->add_option("--log", log_path, "Training log (NDJSON)");

  auto* eval = app.add_subcommand("eval", "Score checkpoints on a labeled set");
  eval->add_option("--data", data, "Graphs or CSV to score")->required();
  eval->add_option("--checkpoint", checkpoints, "Checkpoint(s), one per trial")->required();
  eval->add_option("--library", library, "Schema library");
  eval->add_option("--out-dir", out_dir, "Directory for metrics.json and predictions.ndjson")->required();

  auto* predict = app.add_subcommand("predict", "Classify one text toward a target");
  predict->add_option("--text", text)->required();
  predict->add_option("--target", target)->required();
  predict->add_option("--checkpoint", out, "Checkpoint")->required();
  predict->add_option("--library", library, "Schema library");

  auto* inspect = app.add_subcommand("inspect", "Show a schema library");
  inspect->add_option("--library", library, "Schema library")->required();
  inspect->add_option("--filters", preview, "Number of filters to preview (default: model.n_filters)");

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with a canned LLM cache");
  synth->add_option("--out-dir", out_dir, "Output directory")->required();
  synth->add_option("--data-seed", synth_opts.seed, "Generator seed");
  synth->add_option("--train-size", synth_opts.train_size);
  synth->add_option("--dev-size", synth_opts.dev_size);
  synth->add_option("--test-size", synth_opts.test_size);

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    cirf::CommandContext ctx;
    ctx.config = resolve_config(g);
    ctx.force = g.force;
    ctx.json = g.json;
    auto opt_path = [](const std::string& s) {
      return s.empty() ? std::nullopt : std::optional<fs::path>(s);
    };
    if (*gen) return cirf::cmd_generate_fol(ctx, data, out);
    if (*induce) return cirf::cmd_induce(ctx, {graphs.begin(), graphs.end()}, out);
    if (*train) return cirf::cmd_train(ctx, train_path, opt_path(dev_path), opt_path(library), out, opt_path(log_path));
    if (*eval) return cirf::cmd_eval(ctx, data, {checkpoints.begin(), checkpoints.end()}, opt_path(library), out_dir);
    if (*predict) return cirf::cmd_predict(ctx, text, target, out, opt_path(library));
    if (*inspect) return cirf::cmd_inspect(ctx, library, preview);
    if (*synth) return cirf::cmd_synth(ctx, out_dir, synth_opts);
  } catch (const cirf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
