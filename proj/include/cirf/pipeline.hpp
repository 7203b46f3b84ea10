#pragma once

// Stage functions behind the CLI: rationale generation, schema induction,
// training and evaluation, all driven by one RunConfig.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cirf/dataset.hpp"
#include "cirf/embeddings.hpp"
#include "cirf/error.hpp"
#include "cirf/fol.hpp"
#include "cirf/kernel.hpp"
#include "cirf/llm_gateway.hpp"
#include "cirf/metrics.hpp"
#include "cirf/schema.hpp"
#include "cirf/training.hpp"

namespace cirf {

struct RunConfig {
  std::uint64_t seed = 13;
  Mode mode = Mode::Replay;
  std::filesystem::path cache_dir = "cache";
  LabelSet labels = LabelSet::FavorAgainstNone;

  PromptSettings prompts;
  int max_in_flight = 4;
  int retry_attempts = 3;
  int timeout_s = 60;

  std::string embedding_provider = "hashed-bag";  // hash | hashed-bag | remote
  std::string embedding_model = "text-embedding-3-small";

  std::vector<int> k_grid = {4, 8, 16, 32, 64};
  int filter_hop = 1;
  int size_cap = 6;

  ModelConfig model;
  TrainConfig train;

  bool random_filters = false;
  bool skip_augmentation = false;
  int threads = 1;

  void validate() const {
    model.validate();
    train.validate();
    if (k_grid.empty()) throw ConfigError("k_grid is empty");
    for (int k : k_grid)
      if (k < 2) throw ConfigError("k_grid values must be >= 2");
    if (size_cap < 1 || filter_hop < 0) throw ConfigError("filter size_cap/hop must be positive");
    if (max_in_flight < 1 || threads < 1) throw ConfigError("concurrency limits must be positive");
    if (embedding_provider != "hash" && embedding_provider != "hashed-bag" &&
        embedding_provider != "remote")
      throw ConfigError("unknown embedding provider '" + embedding_provider + "'");
  }

  /// Everything that influences results. Operational settings (mode, cache
  /// location, concurrency) and ablation switches are excluded; ablations are
  /// recorded on the checkpoint instead.
  nlohmann::json result_json() const {
    return {{"seed", seed},
            {"labels", label_set_name(labels)},
            {"llm",
             {{"model", prompts.model},
              {"temperature", prompts.temperature},
              {"max_tokens", prompts.max_tokens},
              {"p2_max_lines", prompts.p2_max_lines}}},
            {"embeddings", {{"provider", embedding_provider}, {"model", embedding_model}}},
            {"induction", {{"k_grid", k_grid}, {"filter_hop", filter_hop}, {"size_cap", size_cap}}},
            {"model", model_config_to_json(model)},
            {"train",
             {{"batch_size", train.batch_size},
              {"lr", train.lr},
              {"weight_decay", train.weight_decay},
              {"max_epochs", train.max_epochs},
              {"patience", train.patience},
              {"val_interval", train.val_interval},
              {"trials", train.trials},
              {"clip_norm", train.clip_norm}}}};
  }

  nlohmann::json to_json() const {
    nlohmann::json j = result_json();
    j["mode"] = mode_name(mode);
    j["cache_dir"] = cache_dir.string();
    j["llm"]["max_in_flight"] = max_in_flight;
    j["llm"]["retry_attempts"] = retry_attempts;
    j["llm"]["timeout_s"] = timeout_s;
    j["threads"] = threads;
    j["ablate"] = {{"random_filters", random_filters}, {"skip_augmentation", skip_augmentation}};
    return j;
  }

  std::string fingerprint() const { return sha256_hex(result_json().dump()); }

  std::filesystem::path llm_cache_path() const { return cache_dir / "llm.ndjson"; }
  std::filesystem::path embedding_cache_path() const { return cache_dir / "embeddings.ndjson"; }
};

namespace detail {

template <typename T>
void take(const nlohmann::json& obj, const char* key, T& out, const std::string& path) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + "." + key + ": " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> known,
                           const std::string& path) {
  if (!obj.is_object()) throw ConfigError(path + " must be an object");
  for (const auto& [k, _] : obj.items()) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    if (!ok) throw ConfigError("unknown config key " + path + "." + k);
  }
}

}  // namespace detail

/// Overlays the keys present in `j` on the defaults. Unknown keys are errors so
/// that typos do not silently fall back to defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  using detail::reject_unknown;
  using detail::take;
  reject_unknown(j, {"seed", "mode", "cache_dir", "labels", "llm", "embeddings", "induction", "model",
                     "train", "ablate", "threads"},
                 "config");
  take(j, "seed", c.seed, "config");
  if (j.contains("mode")) c.mode = mode_from_name(j.at("mode").get<std::string>());
  if (j.contains("cache_dir")) c.cache_dir = j.at("cache_dir").get<std::string>();
  if (j.contains("labels")) c.labels = label_set_from_name(j.at("labels").get<std::string>());
  take(j, "threads", c.threads, "config");
  if (j.contains("llm")) {
    const auto& l = j.at("llm");
    reject_unknown(l, {"model", "temperature", "max_tokens", "p2_max_lines", "max_in_flight",
                       "retry_attempts", "timeout_s"},
                   "config.llm");
    take(l, "model", c.prompts.model, "config.llm");
    take(l, "temperature", c.prompts.temperature, "config.llm");
    take(l, "max_tokens", c.prompts.max_tokens, "config.llm");
    take(l, "p2_max_lines", c.prompts.p2_max_lines, "config.llm");
    take(l, "max_in_flight", c.max_in_flight, "config.llm");
    take(l, "retry_attempts", c.retry_attempts, "config.llm");
    take(l, "timeout_s", c.timeout_s, "config.llm");
  }
  if (j.contains("embeddings")) {
    const auto& e = j.at("embeddings");
    reject_unknown(e, {"provider", "model"}, "config.embeddings");
    take(e, "provider", c.embedding_provider, "config.embeddings");
    take(e, "model", c.embedding_model, "config.embeddings");
  }
  if (j.contains("induction")) {
    const auto& i = j.at("induction");
    reject_unknown(i, {"k_grid", "filter_hop", "size_cap"}, "config.induction");
    take(i, "k_grid", c.k_grid, "config.induction");
    take(i, "filter_hop", c.filter_hop, "config.induction");
    take(i, "size_cap", c.size_cap, "config.induction");
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m, {"d", "n_filters", "p", "g", "hop", "n_sub", "n_filt", "layers", "hidden",
                       "classes", "diagonal_w", "w_init", "relation_weights"},
                   "config.model");
    take(m, "d", c.model.d, "config.model");
    take(m, "n_filters", c.model.n_filters, "config.model");
    take(m, "p", c.model.p, "config.model");
    take(m, "g", c.model.g, "config.model");
    take(m, "hop", c.model.hop, "config.model");
    take(m, "n_sub", c.model.n_sub, "config.model");
    take(m, "n_filt", c.model.n_filt, "config.model");
    take(m, "layers", c.model.layers, "config.model");
    take(m, "hidden", c.model.hidden, "config.model");
    take(m, "classes", c.model.classes, "config.model");
    take(m, "diagonal_w", c.model.diagonal_w, "config.model");
    take(m, "w_init", c.model.w_init, "config.model");
    if (m.contains("relation_weights")) {
      const auto& r = m.at("relation_weights");
      reject_unknown(r, {"implies", "conjunction", "disjunction", "instance_of"},
                     "config.model.relation_weights");
      take(r, "implies", c.model.relations.implies, "config.model.relation_weights");
      take(r, "conjunction", c.model.relations.conjunction, "config.model.relation_weights");
      take(r, "disjunction", c.model.relations.disjunction, "config.model.relation_weights");
      take(r, "instance_of", c.model.relations.instance_of, "config.model.relation_weights");
    }
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown(t, {"batch_size", "lr", "weight_decay", "max_epochs", "patience", "val_interval",
                       "trials", "clip_norm"},
                   "config.train");
    take(t, "batch_size", c.train.batch_size, "config.train");
    take(t, "lr", c.train.lr, "config.train");
    take(t, "weight_decay", c.train.weight_decay, "config.train");
    take(t, "max_epochs", c.train.max_epochs, "config.train");
    take(t, "patience", c.train.patience, "config.train");
    take(t, "val_interval", c.train.val_interval, "config.train");
    take(t, "trials", c.train.trials, "config.train");
    take(t, "clip_norm", c.train.clip_norm, "config.train");
  }
  if (j.contains("ablate")) {
    const auto& a = j.at("ablate");
    reject_unknown(a, {"random_filters", "skip_augmentation"}, "config.ablate");
    take(a, "random_filters", c.random_filters, "config.ablate");
    take(a, "skip_augmentation", c.skip_augmentation, "config.ablate");
  }
  c.train.seed = c.seed;
  c.train.threads = c.threads;
  return c;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto j = nlohmann::json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
  return j;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig c = run_config_from_json(read_json_file(path));
  // A relative cache directory is resolved against the config file.
  if (c.cache_dir.is_relative()) c.cache_dir = path.parent_path() / c.cache_dir;
  return c;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Runtime services

struct Runtime {
  RunConfig config;
  std::unique_ptr<Gateway> gateway;
  std::unique_ptr<EmbeddingProvider> embedder;
};

inline std::unique_ptr<EmbeddingProvider> make_embedder(const RunConfig& c) {
  if (c.embedding_provider == "hash") return std::make_unique<HashEmbeddingProvider>(c.model.d);
  if (c.embedding_provider == "hashed-bag") return std::make_unique<HashedBagEmbeddingProvider>(c.model.d);
  RemoteEmbeddingOptions o;
  const char* base = std::getenv("LLM_BASE_URL");
  const char* key = std::getenv("LLM_API_KEY");
  o.base_url = base ? base : "";
  o.api_key = key ? key : "";
  o.model = c.embedding_model;
  o.dimension = c.model.d;
  o.cache_path = c.embedding_cache_path();
  o.max_in_flight = c.max_in_flight;
  o.replay_only = c.mode == Mode::Replay;
  return std::make_unique<RemoteEmbeddingProvider>(o);
}

/// Without an explicit backend, live and record modes talk to the
/// OpenAI-compatible endpoint named by LLM_BASE_URL / LLM_API_KEY.
inline Runtime make_runtime(const RunConfig& c, std::shared_ptr<CompletionBackend> backend = nullptr,
                            Gateway::Clock clock = Gateway::utc_now) {
  c.validate();
  Runtime rt;
  rt.config = c;
  if (!backend && c.mode != Mode::Replay) {
    const char* base = std::getenv("LLM_BASE_URL");
    const char* key = std::getenv("LLM_API_KEY");
    RetryPolicy retry;
    retry.attempts = c.retry_attempts;
    retry.timeout = std::chrono::seconds(c.timeout_s);
    backend = std::make_shared<HttpCompletionBackend>(base ? base : "", key ? key : "", retry);
  }
  rt.gateway = std::make_unique<Gateway>(std::move(backend), c.llm_cache_path(), c.mode, c.max_in_flight,
                                         std::move(clock));
  rt.embedder = make_embedder(c);
  return rt;
}

// ---------------------------------------------------------------------------
// Rationale stage

struct GraphRecord {
  std::size_t row = 0;
  std::string text;
  std::string target;
  std::optional<int> label;
  std::string rationale;
  std::optional<std::string> attitude;
  FolGraph graph;
  std::size_t fol_lines = 0;
  std::size_t skipped_lines = 0;
  std::size_t dropped_lines = 0;
  bool fallback = false;
  std::string error;  // non-empty when the LLM call failed for this row
};

/// Graph used when no FOL line survives parsing: one node Text(<target>)
/// whose features are the embedding of the raw sentence.
inline FolGraph fallback_graph(const std::string& text, const std::string& target, EmbeddingProvider& embedder) {
  FolGraph g;
  FolNode n;
  n.predicate.name = "Text";
  n.predicate.args = {target};
  n.predicate.surface = canonical_predicate_string(n.predicate);
  n.embedding = embedder.embed(text.empty() ? target : text);
  g.nodes.push_back(std::move(n));
  return g;
}

inline void embed_graph_nodes(FolGraph& g, EmbeddingProvider& embedder) {
  std::vector<std::string> texts;
  for (const auto& n : g.nodes) texts.push_back(canonical_predicate_string(n.predicate));
  const auto vecs = embedder.embed_batch(texts);
  for (std::size_t i = 0; i < g.nodes.size(); ++i) g.nodes[i].embedding = vecs[i];
}

/// Turns an LLM rationale into an embedded FOL graph. Lines that fail to parse
/// are skipped and counted.
inline void graph_from_rationale(GraphRecord& rec, EmbeddingProvider& embedder) {
  const FolBlock block = extract_fol_block(rec.rationale);
  rec.attitude = block.attitude;
  rec.dropped_lines = block.dropped;
  std::vector<FolExpr> exprs;
  for (const auto& line : block.lines) {
    try {
      exprs.push_back(parse_fol_line(line));
    } catch (const ParseError&) {
      ++rec.skipped_lines;
    }
  }
  rec.fol_lines = exprs.size();
  if (exprs.empty()) {
    rec.graph = fallback_graph(rec.text, rec.target, embedder);
    rec.fallback = true;
    return;
  }
  rec.graph = build_fol_graph(exprs);
  embed_graph_nodes(rec.graph, embedder);
}

/// P1 per example, parse, embed. Cache misses in replay mode abort the run;
/// other per-row failures are recorded on the row and the row falls back to
/// the sentence node.
inline std::vector<GraphRecord> generate_fol(const std::vector<LabeledExample>& rows, Runtime& rt) {
  std::vector<GraphRecord> out(rows.size());
  detail::parallel_for(rows.size(), rt.config.max_in_flight, [&](std::size_t i) {
    GraphRecord& rec = out[i];
    rec.row = i + 1;
    rec.text = rows[i].text;
    rec.target = rows[i].target;
    rec.label = rows[i].label;
    try {
      rec.rationale = rt.gateway->complete(render_p1(rec.text, rec.target, rt.config.prompts));
    } catch (const CacheMiss&) {
      throw;
    } catch (const Error& e) {
      rec.error = e.what();
    }
  });
  // Embedding runs in row order so remote caches are appended deterministically.
  for (auto& rec : out) {
    if (!rec.error.empty()) {
      rec.graph = fallback_graph(rec.text, rec.target, *rt.embedder);
      rec.fallback = true;
      continue;
    }
    graph_from_rationale(rec, *rt.embedder);
  }
  return out;
}

inline nlohmann::json graph_record_to_json(const GraphRecord& r, LabelSet labels,
                                           const std::string& fingerprint) {
  nlohmann::json j{{"row", r.row},
                   {"text", r.text},
                   {"target", r.target},
                   {"label", r.label ? nlohmann::json(label_names(labels).at(*r.label)) : nlohmann::json()},
                   {"rationale", r.rationale},
                   {"attitude", r.attitude ? nlohmann::json(*r.attitude) : nlohmann::json()},
                   {"fol_lines", r.fol_lines},
                   {"skipped_lines", r.skipped_lines},
                   {"dropped_lines", r.dropped_lines},
                   {"fallback", r.fallback},
                   {"graph", graph_to_json(r.graph)},
                   {"config_fingerprint", fingerprint}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

struct GraphFile {
  std::vector<GraphRecord> records;
  std::string fingerprint;
};

inline void write_graphs(const std::filesystem::path& path, const std::vector<GraphRecord>& records,
                         const RunConfig& c) {
  std::string out;
  const std::string fp = c.fingerprint();
  for (const auto& r : records) out += graph_record_to_json(r, c.labels, fp).dump() + "\n";
  write_text_file(path, out);
}

inline GraphFile read_graphs(const std::filesystem::path& path, LabelSet labels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read graphs file " + path.string());
  GraphFile gf;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw SchemaFormatError(path.string() + ":" + std::to_string(lineno), "invalid JSON");
    try {
      GraphRecord r;
      r.row = j.at("row");
      r.text = j.at("text");
      r.target = j.at("target");
      if (!j.at("label").is_null()) {
        const auto s = j.at("label").get<std::string>();
        const auto l = parse_label(labels, s);
        if (!l) throw BadLabel(r.row, s);
        r.label = *l;
      }
      r.rationale = j.at("rationale");
      if (!j.at("attitude").is_null()) r.attitude = j.at("attitude").get<std::string>();
      r.fol_lines = j.at("fol_lines");
      r.skipped_lines = j.at("skipped_lines");
      r.dropped_lines = j.at("dropped_lines");
      r.fallback = j.at("fallback");
      r.error = j.value("error", "");
      r.graph = graph_from_json(j.at("graph"));
      const std::string fp = j.at("config_fingerprint");
      if (gf.fingerprint.empty()) gf.fingerprint = fp;
      else if (gf.fingerprint != fp)
        throw FingerprintMismatch(path.string() + " mixes records from different configurations");
      gf.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaFormatError(path.string() + ":" + std::to_string(lineno), e.what());
    }
  }
  return gf;
}

// ---------------------------------------------------------------------------
// Induction

/// Pool -> select K -> k-means -> P2 summaries -> schema graph.
inline SchemaLibrary induce_library(std::span<const FolGraph> corpus, Runtime& rt) {
  const RunConfig& c = rt.config;
  const auto pool = collect_predicates(corpus);
  std::vector<EmbeddingVector> points;
  points.reserve(pool.size());
  for (const auto& p : pool) {
    if (p.embedding.size() != c.model.d)
      throw DimensionMismatch("predicate " + p.canonical + " has dimension " +
                              std::to_string(p.embedding.size()) + ", config d is " +
                              std::to_string(c.model.d));
    points.push_back(p.embedding);
  }
  // K must leave at least one point per cluster; larger grid values are skipped.
  std::vector<int> grid;
  for (int k : c.k_grid)
    if (k <= static_cast<int>(points.size()) && k >= 2) grid.push_back(k);
  if (grid.empty())
    throw InvalidK("no K in the grid fits " + std::to_string(points.size()) + " pooled predicates");
  const KSelection sel = select_k(points, grid, c.seed);
  const ClusteringResult& clusters = sel.best;
  auto nodes = abstract_clusters(clusters, pool, *rt.gateway, *rt.embedder, c.prompts, c.max_in_flight);
  std::map<std::string, int> cluster_of;
  for (std::size_t i = 0; i < pool.size(); ++i) cluster_of[pool[i].canonical] = clusters.assignments[i];

  SchemaLibrary lib;
  lib.d = c.model.d;
  lib.seed = c.seed;
  lib.graph = build_schema_graph(std::move(nodes), corpus, cluster_of);
  lib.k_scores = sel.scores;
  lib.sentence_provider = rt.embedder->name();
  lib.node_provider = rt.embedder->name();
  lib.config_fingerprint = c.fingerprint();
  return lib;
}

// ---------------------------------------------------------------------------
// Training / evaluation

/// Checks that an artifact was produced under the current configuration.
inline void check_fingerprint(const std::string& artifact, const std::string& found,
                              const std::string& expected, bool force) {
  if (force || found == expected) return;
  throw FingerprintMismatch(artifact + " was produced under config " + found.substr(0, 12) +
                            ", current config is " + expected.substr(0, 12) +
                            " (use --force to override)");
}

/// Augments (unless ablated) and prepares graphs for the kernel model.
inline std::vector<TrainingExample> make_examples(const std::vector<GraphRecord>& records,
                                                  const SchemaLibrary* lib, const ModelConfig& model,
                                                  bool augment, bool require_labels = true) {
  std::vector<TrainingExample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (require_labels && !r.label) throw PreconditionError("row " + std::to_string(r.row) + " has no label");
    TrainingExample ex;
    const FolGraph g = augment && lib ? augment_graph(r.graph, *lib) : r.graph;
    ex.graph = prepare_graph(g, model);
    ex.label = r.label.value_or(0);
    ex.target = r.target;
    out.push_back(std::move(ex));
  }
  return out;
}

struct TrainedRun {
  std::vector<Checkpoint> checkpoints;  // one per trial
  std::vector<TrainResult> results;
};

/// Runs `config.train.trials` independent trials (seed + t) of the full
/// early-stopping protocol.
inline TrainedRun train_pipeline(const std::vector<GraphRecord>& train_records,
                                 const std::vector<GraphRecord>& dev_records, const SchemaLibrary* lib,
                                 const RunConfig& c,
                                 const std::function<void(int, const ValidationRecord&)>& on_validation = {}) {
  c.validate();
  const bool use_schema = !c.random_filters;
  if (use_schema && !lib) throw PreconditionError("a schema library is required unless filters are random");
  if (use_schema && lib->d != c.model.d)
    throw DimensionMismatch("library d " + std::to_string(lib->d) + " vs config d " +
                            std::to_string(c.model.d));
  const bool augment = use_schema && !c.skip_augmentation;
  const auto train = make_examples(train_records, lib, c.model, augment);
  const auto dev = make_examples(dev_records, lib, c.model, augment);
  std::vector<SchemaFilter> filters;
  if (use_schema)
    filters = extract_filters(lib->graph, c.model.n_filters, c.filter_hop, std::min(c.size_cap, c.model.n_filt));

  TrainedRun run;
  for (int t = 0; t < c.train.trials; ++t) {
    TrainConfig tc = c.train;
    tc.seed = c.seed + static_cast<std::uint64_t>(t);
    const ModelParams init = init_model(c.model, filters, tc.seed);
    auto cb = [&](const ValidationRecord& r) {
      if (on_validation) on_validation(t, r);
    };
    TrainResult res = train_model(init, train, dev, tc, primary_mode(c.labels), cb);
    Checkpoint ck;
    ck.model = res.best;
    ck.library_fingerprint = use_schema ? library_fingerprint(*lib) : "";
    ck.config_fingerprint = c.fingerprint();
    ck.seed = tc.seed;
    ck.label_set = label_set_name(c.labels);
    ck.random_filters = c.random_filters;
    ck.skip_augmentation = c.skip_augmentation;
    run.checkpoints.push_back(std::move(ck));
    run.results.push_back(std::move(res));
  }
  return run;
}

/// `ckpt.json` for trial 0, `ckpt.trial<t>.json` for later trials.
inline std::filesystem::path trial_checkpoint_path(const std::filesystem::path& base, int trial) {
  if (trial == 0) return base;
  std::filesystem::path p = base;
  p.replace_extension();
  return p.string() + ".trial" + std::to_string(trial) + base.extension().string();
}

inline std::string training_log_ndjson(const TrainedRun& run) {
  std::string out;
  for (std::size_t t = 0; t < run.results.size(); ++t)
    for (const auto& r : run.results[t].log) {
      auto j = validation_to_json(r);
      j["trial"] = t;
      out += j.dump() + "\n";
    }
  return out;
}

struct EvalOutput {
  std::vector<EvalReport> reports;  // one per checkpoint
  nlohmann::json metrics;
  std::string predictions_ndjson;
};

inline EvalOutput evaluate_checkpoints(const std::vector<GraphRecord>& records,
                                       const std::vector<Checkpoint>& checkpoints, const SchemaLibrary* lib,
                                       LabelSet labels, int threads = 1) {
  if (records.empty()) throw EmptySet("evaluation set is empty");
  if (checkpoints.empty()) throw PreconditionError("no checkpoint to evaluate");
  const F1Mode mode = primary_mode(labels);
  const auto names = label_names(labels);
  EvalOutput out;
  std::vector<double> scores;
  nlohmann::json trials = nlohmann::json::array();
  for (std::size_t t = 0; t < checkpoints.size(); ++t) {
    const Checkpoint& ck = checkpoints[t];
    if (ck.label_set != label_set_name(labels))
      throw ConfigError("checkpoint label set " + ck.label_set + " differs from " + label_set_name(labels));
    const bool augment = !ck.random_filters && !ck.skip_augmentation;
    if (augment && !lib) throw PreconditionError("checkpoint expects schema augmentation; pass --library");
    const auto examples = make_examples(records, lib, ck.model.config, augment);
    EvalReport rep = evaluate(examples, ck.model, mode, threads);
    scores.push_back(rep.primary.f_avg);
    nlohmann::json per_target = nlohmann::json::object();
    for (const auto& [target, r] : rep.per_target) per_target[target] = f1_report_to_json(r, labels);
    trials.push_back({{"seed", ck.seed},
                      {"primary", f1_report_to_json(rep.primary, labels)},
                      {"favor_against_only", f1_report_to_json(rep.favor_against, labels)},
                      {"all_classes", f1_report_to_json(rep.all_classes, labels)},
                      {"per_target", per_target},
                      {"loss", rep.loss}});
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& p = rep.predictions[i];
      nlohmann::json probs = nlohmann::json::object();
      for (int c = 0; c < static_cast<int>(p.probabilities.size()); ++c) probs[names.at(c)] = p.probabilities[c];
      nlohmann::json j{{"trial", t},
                       {"text", records[i].text},
                       {"target", records[i].target},
                       {"gold", names.at(records[i].label.value_or(0))},
                       {"pred", names.at(p.pred)},
                       {"probabilities", probs},
                       {"selected_filters", p.selected}};
      out.predictions_ndjson += j.dump() + "\n";
    }
    out.reports.push_back(std::move(rep));
  }
  const TrialSummary summary = summarize_trials(scores);
  const auto& first = trials.at(0);
  out.metrics = {{"mode", f1_mode_name(mode)},
                 {"per_class_f1", first.at("primary").at("per_class_f1")},
                 {"f_avg", first.at("primary").at("f_avg")},
                 {"per_target", first.at("per_target")},
                 {"trials", trials},
                 {"mean", summary.mean},
                 {"std", summary.std}};
  return out;
}

}  // namespace cirf
