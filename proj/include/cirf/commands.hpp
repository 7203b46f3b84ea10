#pragma once

// Subcommand bodies. Each takes already-parsed arguments and writes its
// artifacts; the CLI front end only parses flags and maps errors to exit codes.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cirf/pipeline.hpp"
#include "cirf/synthetic.hpp"

namespace cirf {

struct CommandContext {
  RunConfig config;
  bool force = false;
  bool json = false;
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
  std::shared_ptr<CompletionBackend> backend;  // null: configured endpoint
  Gateway::Clock clock = Gateway::utc_now;
};

namespace detail {

inline bool is_csv(const std::filesystem::path& p) { return p.extension() == ".csv"; }

inline void report_partial(const CommandContext& ctx, const std::vector<GraphRecord>& records,
                           const std::string& what) {
  std::size_t failed = 0, fallback = 0, skipped = 0;
  for (const auto& r : records) {
    failed += r.error.empty() ? 0 : 1;
    fallback += r.fallback ? 1 : 0;
    skipped += r.skipped_lines;
  }
  if (failed || fallback || skipped)
    *ctx.err << what << ": " << failed << " failed row(s), " << fallback << " fallback graph(s), " << skipped
             << " unparsable FOL line(s)\n";
}

/// Rows from a CSV dataset (rationales produced through the gateway) or from a
/// graphs file written by generate-fol.
inline std::vector<GraphRecord> load_records(CommandContext& ctx, const std::filesystem::path& path) {
  if (is_csv(path)) {
    Runtime rt = make_runtime(ctx.config, ctx.backend, ctx.clock);
    auto rows = load_dataset(path, ctx.config.labels);
    auto records = generate_fol(rows, rt);
    report_partial(ctx, records, path.string());
    return records;
  }
  GraphFile gf = read_graphs(path, ctx.config.labels);
  check_fingerprint(path.string(), gf.fingerprint, ctx.config.fingerprint(), ctx.force);
  return std::move(gf.records);
}

inline SchemaLibrary load_checked_library(CommandContext& ctx, const std::filesystem::path& path) {
  SchemaLibrary lib = load_library(path);
  check_fingerprint(path.string(), lib.config_fingerprint, ctx.config.fingerprint(), ctx.force);
  return lib;
}

}  // namespace detail

inline int cmd_generate_fol(CommandContext& ctx, const std::filesystem::path& data,
                            const std::filesystem::path& out) {
  Runtime rt = make_runtime(ctx.config, ctx.backend, ctx.clock);
  const auto rows = load_dataset(data, ctx.config.labels);
  const auto records = generate_fol(rows, rt);
  write_graphs(out, records, ctx.config);
  detail::report_partial(ctx, records, data.string());
  *ctx.out << "wrote " << records.size() << " graph record(s) to " << out.string() << "\n";
  return 0;
}

inline int cmd_induce(CommandContext& ctx, const std::vector<std::filesystem::path>& graphs,
                      const std::filesystem::path& out) {
  std::vector<FolGraph> corpus;
  for (const auto& p : graphs)
    for (auto& r : detail::load_records(ctx, p)) corpus.push_back(std::move(r.graph));
  Runtime rt = make_runtime(ctx.config, ctx.backend, ctx.clock);
  const SchemaLibrary lib = induce_library(corpus, rt);
  save_library(lib, out);
  std::size_t fallback = 0;
  for (const auto& n : lib.graph.nodes) fallback += n.fallback ? 1 : 0;
  if (fallback) *ctx.err << fallback << " schema summar(ies) fell back to the nearest member\n";
  *ctx.out << "K*=" << lib.graph.nodes.size() << ", " << lib.graph.edges.size() << " schema edge(s); wrote "
           << out.string() << "\n";
  return 0;
}

inline int cmd_train(CommandContext& ctx, const std::filesystem::path& train_path,
                     const std::optional<std::filesystem::path>& dev_path,
                     const std::optional<std::filesystem::path>& library_path, const std::filesystem::path& out,
                     std::optional<std::filesystem::path> log_path = std::nullopt) {
  const auto train = detail::load_records(ctx, train_path);
  const auto dev = dev_path ? detail::load_records(ctx, *dev_path) : train;
  std::optional<SchemaLibrary> lib;
  if (!ctx.config.random_filters) {
    if (!library_path) throw PreconditionError("train needs --library unless --ablate random-filters");
    lib = detail::load_checked_library(ctx, *library_path);
  }
  const TrainedRun run = train_pipeline(train, dev, lib ? &*lib : nullptr, ctx.config,
                                        [&](int t, const ValidationRecord& r) {
                                          *ctx.err << "trial " << t << " step " << r.step << " train_loss "
                                                   << r.train_loss << " dev_loss " << r.dev_loss << " dev_f1 "
                                                   << r.dev_f1 << (r.improved ? " *" : "") << "\n";
                                        });
  for (std::size_t t = 0; t < run.checkpoints.size(); ++t)
    save_checkpoint(run.checkpoints[t], trial_checkpoint_path(out, static_cast<int>(t)));
  if (!log_path) log_path = std::filesystem::path(out.string() + ".log.ndjson");
  write_text_file(*log_path, training_log_ndjson(run));
  *ctx.out << "wrote " << run.checkpoints.size() << " checkpoint(s) starting at " << out.string() << "\n";
  return 0;
}

inline std::vector<Checkpoint> load_checkpoints(CommandContext& ctx, const std::vector<std::filesystem::path>& paths,
                                                const SchemaLibrary* lib) {
  std::vector<Checkpoint> cks;
  for (const auto& p : paths) {
    Checkpoint ck = load_checkpoint(p, lib, ctx.force);
    check_fingerprint(p.string(), ck.config_fingerprint, ctx.config.fingerprint(), ctx.force);
    cks.push_back(std::move(ck));
  }
  return cks;
}

inline int cmd_eval(CommandContext& ctx, const std::filesystem::path& data,
                    const std::vector<std::filesystem::path>& checkpoints,
                    const std::optional<std::filesystem::path>& library_path, const std::filesystem::path& out_dir) {
  std::optional<SchemaLibrary> lib;
  if (library_path) lib = detail::load_checked_library(ctx, *library_path);
  const auto cks = load_checkpoints(ctx, checkpoints, lib ? &*lib : nullptr);
  const auto records = detail::load_records(ctx, data);
  const EvalOutput ev = evaluate_checkpoints(records, cks, lib ? &*lib : nullptr, ctx.config.labels,
                                             ctx.config.threads);
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir / "metrics.json", ev.metrics.dump(2) + "\n");
  write_text_file(out_dir / "predictions.ndjson", ev.predictions_ndjson);
  if (ctx.json) {
    *ctx.out << ev.metrics.dump(2) << "\n";
  } else {
    const auto names = label_names(ctx.config.labels);
    const auto& r = ev.reports.front().primary;
    *ctx.out << f1_mode_name(r.mode) << " F_avg " << std::fixed << std::setprecision(4) << r.f_avg
             << "  accuracy " << r.accuracy << "\n";
    for (std::size_t c = 0; c < r.per_class.size(); ++c)
      *ctx.out << "  " << names.at(c) << " F1 " << r.per_class[c] << (r.absent[c] ? " (absent)" : "") << "\n";
    if (cks.size() > 1)
      *ctx.out << "trials " << cks.size() << " mean " << ev.metrics["mean"].get<double>() << " std "
               << ev.metrics["std"].get<double>() << "\n";
    *ctx.out << std::defaultfloat;
  }
  return 0;
}

inline int cmd_predict(CommandContext& ctx, const std::string& text, const std::string& target,
                       const std::filesystem::path& checkpoint,
                       const std::optional<std::filesystem::path>& library_path) {
  std::optional<SchemaLibrary> lib;
  if (library_path) lib = detail::load_checked_library(ctx, *library_path);
  const auto cks = load_checkpoints(ctx, {checkpoint}, lib ? &*lib : nullptr);
  Runtime rt = make_runtime(ctx.config, ctx.backend, ctx.clock);
  LabeledExample row;
  row.text = text;
  row.target = target;
  auto records = generate_fol({row}, rt);
  records[0].label.reset();
  const Checkpoint& ck = cks.front();
  const bool augment = !ck.random_filters && !ck.skip_augmentation;
  if (augment && !lib) throw PreconditionError("checkpoint expects schema augmentation; pass --library");
  const FolGraph g = augment ? augment_graph(records[0].graph, *lib) : records[0].graph;
  const ForwardState st = forward(g, ck.model);
  const auto names = label_names(ctx.config.labels);
  Eigen::Index arg = 0;
  st.probabilities.maxCoeff(&arg);
  nlohmann::json probs = nlohmann::json::object();
  for (Eigen::Index c = 0; c < st.probabilities.size(); ++c) probs[names.at(c)] = st.probabilities[c];
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : g.nodes) nodes.push_back(canonical_predicate_string(n.predicate));
  const nlohmann::json j{{"text", text},
                         {"target", target},
                         {"pred", names.at(arg)},
                         {"probabilities", probs},
                         {"nodes", nodes},
                         {"selected_filters", st.selected},
                         {"fallback", records[0].fallback}};
  if (ctx.json) {
    *ctx.out << j.dump() << "\n";
  } else {
    *ctx.out << names.at(arg) << "\n";
    for (const auto& [k, v] : probs.items()) *ctx.out << "  " << k << " " << v.get<double>() << "\n";
    *ctx.out << "nodes:";
    for (const auto& n : nodes) *ctx.out << " " << n.get<std::string>();
    *ctx.out << "\n";
  }
  return 0;
}

inline int cmd_inspect(CommandContext& ctx, const std::filesystem::path& library, int preview_filters = -1) {
  const SchemaLibrary lib = load_library(library);
  const auto& g = lib.graph;
  const int nf = std::min<int>(preview_filters < 0 ? ctx.config.model.n_filters : preview_filters,
                               static_cast<int>(g.nodes.size()));
  const auto filters = nf > 0 ? extract_filters(g, nf, ctx.config.filter_hop, std::min(ctx.config.size_cap,
                                                                                       ctx.config.model.n_filt))
                              : std::vector<SchemaFilter>{};
  if (ctx.json) {
    nlohmann::json j = library_to_json(lib);
    for (auto& n : j["nodes"]) {
      n.erase("centroid");
      n.erase("summary_embedding");
    }
    nlohmann::json fj = nlohmann::json::array();
    for (const auto& f : filters) fj.push_back({{"center", f.center}, {"nodes", f.node_ids}});
    j["filters"] = fj;
    j["fingerprint"] = library_fingerprint(lib);
    *ctx.out << j.dump(2) << "\n";
    return 0;
  }
  *ctx.out << "library d=" << lib.d << " K=" << g.nodes.size() << " edges=" << g.edges.size()
           << " fingerprint=" << library_fingerprint(lib).substr(0, 12) << "\n";
  for (const auto& n : g.nodes)
    *ctx.out << "[" << n.id << "] (" << n.member_count << ") " << n.summary << (n.fallback ? " [fallback]" : "")
             << "\n";
  *ctx.out << "edges:\n";
  for (const auto& e : g.edges)
    *ctx.out << "  " << e.src << " -" << relation_name(e.relation) << "-> " << e.dst << " w=" << e.weight << "\n";
  *ctx.out << "filters:\n";
  for (const auto& f : filters) {
    *ctx.out << "  center " << f.center << ":";
    for (int id : f.node_ids) *ctx.out << " " << id;
    *ctx.out << "\n";
  }
  return 0;
}

/// Writes a synthetic dataset (train/dev/test CSV), its config, and a canned
/// LLM cache recorded against the scripted backend.
inline int cmd_synth(CommandContext& ctx, const std::filesystem::path& out_dir, const synth::Options& opts = {}) {
  const synth::Corpus corpus = synth::generate(opts);
  std::filesystem::create_directories(out_dir);
  write_dataset(out_dir / "train.csv", synth::rows_of(corpus.train), ctx.config.labels);
  write_dataset(out_dir / "dev.csv", synth::rows_of(corpus.dev), ctx.config.labels);
  write_dataset(out_dir / "test.csv", synth::rows_of(corpus.test), ctx.config.labels);

  RunConfig rec = ctx.config;
  rec.mode = Mode::Record;
  rec.cache_dir = out_dir / "cache";
  std::filesystem::remove(rec.llm_cache_path());
  nlohmann::json cfg = ctx.config.to_json();
  cfg["mode"] = "replay";
  cfg["cache_dir"] = "cache";
  write_text_file(out_dir / "config.json", cfg.dump(2) + "\n");

  auto backend = std::make_shared<synth::ScriptedBackend>(corpus, rec.prompts);
  Runtime rt = make_runtime(rec, backend, [] { return std::string("2026-01-01T00:00:00Z"); });
  std::vector<FolGraph> pool;
  for (const auto* split : {&corpus.train, &corpus.dev, &corpus.test})
    for (auto& r : generate_fol(synth::rows_of(*split), rt)) pool.push_back(std::move(r.graph));
  const SchemaLibrary lib = induce_library(pool, rt);
  *ctx.out << "wrote synthetic corpus (" << corpus.train.size() << "/" << corpus.dev.size() << "/"
           << corpus.test.size() << ") and " << rt.gateway->requests() << " cached completion(s), K*="
           << lib.graph.nodes.size() << ", to " << out_dir.string() << "\n";
  return 0;
}

}  // namespace cirf
