#pragma once

// Unsupervised schema induction: predicates pooled from a corpus of FOL
// graphs are clustered with K-means (K chosen by silhouette), each cluster is
// summarized into a schema phrase by the LLM, and cluster-level logical
// relations are aggregated into a weighted multi-relational schema graph from
// which local kernel filters are cut.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <exception>
#include <map>
#include <mutex>
#include <queue>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "cirf/embeddings.hpp"
#include "cirf/error.hpp"
#include "cirf/fol.hpp"
#include "cirf/hash.hpp"
#include "cirf/llm_gateway.hpp"

namespace cirf {

// ---------------------------------------------------------------------------
// Predicate pool

struct PooledPredicate {
  std::string canonical;
  EmbeddingVector embedding;
};

/// Distinct predicates across the corpus, sorted lexicographically by their
/// canonical string. Schema nodes introduced by augmentation are ignored.
inline std::vector<PooledPredicate> collect_predicates(std::span<const FolGraph> corpus) {
  if (corpus.empty()) throw EmptyCorpus("no graphs to pool predicates from");
  std::map<std::string, EmbeddingVector> pool;
  for (const auto& g : corpus)
    for (const auto& n : g.nodes) {
      if (n.schema) continue;
      if (n.embedding.size() == 0)
        throw PreconditionError("predicate " + canonical_predicate_string(n.predicate) +
                                " has no embedding");
      pool.try_emplace(canonical_predicate_string(n.predicate), n.embedding);
    }
  if (pool.empty()) throw EmptyCorpus("corpus contains no predicates");
  std::vector<PooledPredicate> out;
  out.reserve(pool.size());
  for (auto& [k, v] : pool) out.push_back({k, std::move(v)});
  return out;
}

// ---------------------------------------------------------------------------
// K-means

struct ClusteringResult {
  int k = 0;
  std::vector<int> assignments;
  std::vector<EmbeddingVector> centroids;
  double inertia = 0.0;
  std::uint64_t seed = 0;
  int iterations = 0;
  std::vector<double> inertia_history;  // after every update step
};

namespace detail {

inline int nearest_centroid(const EmbeddingVector& x, const std::vector<EmbeddingVector>& centroids,
                            double* best_d2 = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = (x - centroids[c]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (best_d2) *best_d2 = best_d;
  return best;
}

inline std::vector<EmbeddingVector> kmeanspp_init(std::span<const EmbeddingVector> points, int k,
                                                  Rng& rng) {
  const std::size_t n = points.size();
  std::vector<EmbeddingVector> centers;
  centers.reserve(k);
  centers.push_back(points[rng.index(n)]);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (points[i] - centers[0]).squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = rng.index(n);
    } else {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > r && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(points[pick]);
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (points[i] - centers.back()).squaredNorm());
  }
  return centers;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding (Euclidean). Stops when the
/// assignment is stable or after `max_iterations`. Empty clusters are
/// re-seeded with the point farthest from its centroid.
inline ClusteringResult kmeans(std::span<const EmbeddingVector> points, int k, std::uint64_t seed,
                               int max_iterations = 300) {
  const std::size_t n = points.size();
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw InvalidK("K=" + std::to_string(k) + " for " + std::to_string(n) + " points");
  const Eigen::Index dim = points[0].size();
  for (const auto& p : points)
    if (p.size() != dim) throw DimensionMismatch("points have differing dimensions");

  Rng rng(seed);
  ClusteringResult res;
  res.k = k;
  res.seed = seed;
  res.centroids = detail::kmeanspp_init(points, k, rng);
  res.assignments.assign(n, -1);

  auto recompute = [&] {
    std::vector<int> counts(k, 0);
    for (auto& c : res.centroids) c.setZero(dim);
    for (std::size_t i = 0; i < n; ++i) {
      res.centroids[res.assignments[i]] += points[i];
      ++counts[res.assignments[i]];
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) res.centroids[c] /= counts[c];
    return counts;
  };

  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = detail::nearest_centroid(points[i], res.centroids);
      if (c != res.assignments[i]) {
        res.assignments[i] = c;
        changed = true;
      }
    }
    res.iterations = it + 1;
    if (!changed) break;
    auto counts = recompute();
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[res.assignments[i]] < 2) continue;
        const double d = (points[i] - res.centroids[res.assignments[i]]).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far == n) break;  // cannot happen while k <= n
      res.assignments[far] = c;
      counts = recompute();
    }
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      inertia += (points[i] - res.centroids[res.assignments[i]]).squaredNorm();
    res.inertia_history.push_back(inertia);
  }
  res.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    res.inertia += (points[i] - res.centroids[res.assignments[i]]).squaredNorm();
  return res;
}

/// Mean silhouette with Euclidean distances. Points in singleton clusters
/// contribute 0, as do points with a = b = 0.
inline double silhouette(std::span<const EmbeddingVector> points, std::span<const int> assignments) {
  const std::size_t n = points.size();
  if (assignments.size() != n) throw LengthMismatch("points and assignments differ in length");
  int k = 0;
  for (int a : assignments) {
    if (a < 0) throw PreconditionError("negative cluster assignment");
    k = std::max(k, a + 1);
  }
  std::vector<int> sizes(k, 0);
  for (int a : assignments) ++sizes[a];
  const auto populated = std::count_if(sizes.begin(), sizes.end(), [](int s) { return s > 0; });
  if (populated < 2) throw SingleCluster("silhouette needs at least two populated clusters");

  double total = 0.0;
  std::vector<double> sums(k);
  for (std::size_t i = 0; i < n; ++i) {
    const int own = assignments[i];
    if (sizes[own] == 1) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sums[assignments[j]] += (points[i] - points[j]).norm();
    const double a = sums[own] / (sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c)
      if (c != own && sizes[c] > 0) b = std::min(b, sums[c] / sizes[c]);
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

struct KSelection {
  int best_k = 0;
  std::vector<std::pair<int, double>> scores;  // (K, silhouette) in grid order
  ClusteringResult best;
};

/// Runs K-means for every K in the grid and keeps the highest silhouette;
/// ties go to the smaller K.
inline KSelection select_k(std::span<const EmbeddingVector> points, std::span<const int> k_grid,
                           std::uint64_t seed) {
  if (k_grid.empty()) throw InvalidK("empty K grid");
  KSelection sel;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int k : k_grid) {
    ClusteringResult r = kmeans(points, k, seed);
    const double s = silhouette(points, r.assignments);
    sel.scores.emplace_back(k, s);
    if (s > best_score || (s == best_score && k < sel.best_k)) {
      best_score = s;
      sel.best_k = k;
      sel.best = std::move(r);
    }
  }
  return sel;
}

/// Nearest centroid by Euclidean distance; ties go to the smaller id.
inline int assign_to_cluster(const EmbeddingVector& embedding,
                             const std::vector<EmbeddingVector>& centroids) {
  if (centroids.empty()) throw PreconditionError("no centroids");
  if (embedding.size() != centroids.front().size())
    throw DimensionMismatch("embedding dimension " + std::to_string(embedding.size()) +
                            " vs centroid dimension " + std::to_string(centroids.front().size()));
  return detail::nearest_centroid(embedding, centroids);
}

// ---------------------------------------------------------------------------
// Schema abstraction

struct SchemaNode {
  int id = 0;
  std::string summary;
  EmbeddingVector centroid;
  EmbeddingVector summary_embedding;
  std::vector<std::string> members;
  int member_count = 0;
  bool fallback = false;  // summary came from the nearest member, not P2
};

namespace detail {
inline std::string squash_whitespace(std::string_view s) { return collapse_spaces(s); }
}  // namespace detail

/// One summary per cluster via the P2 prompt (clusters larger than the line cap
/// are split into several calls whose summaries are joined with "; "). A
/// failing cluster falls back to its member nearest the centroid instead of
/// aborting the whole induction.
inline std::vector<SchemaNode> abstract_clusters(const ClusteringResult& result,
                                                 std::span<const PooledPredicate> pool,
                                                 Gateway& gateway, EmbeddingProvider& embedder,
                                                 const PromptSettings& settings = {},
                                                 int max_in_flight = 4) {
  if (result.assignments.size() != pool.size())
    throw LengthMismatch("clustering does not cover the predicate pool");
  std::vector<SchemaNode> nodes(result.k);
  for (int c = 0; c < result.k; ++c) {
    nodes[c].id = c;
    nodes[c].centroid = result.centroids[c];
  }
  for (std::size_t i = 0; i < pool.size(); ++i)
    nodes[result.assignments[i]].members.push_back(pool[i].canonical);

  auto summarize = [&](SchemaNode& node) {
    node.member_count = static_cast<int>(node.members.size());
    if (node.members.empty()) {
      node.summary = "empty";
      node.fallback = true;
      return;
    }
    try {
      std::string joined;
      const std::size_t cap = std::max<std::size_t>(1, settings.p2_max_lines);
      for (std::size_t off = 0; off < node.members.size(); off += cap) {
        const std::size_t len = std::min(cap, node.members.size() - off);
        const PromptRequest req =
            render_p2(std::span<const std::string>(node.members).subspan(off, len), settings);
        const std::string text = detail::squash_whitespace(gateway.complete(req));
        if (text.empty()) throw ProviderError("empty P2 response");
        if (!joined.empty()) joined += "; ";
        joined += text;
      }
      node.summary = std::move(joined);
    } catch (const CacheMiss&) {
      throw;  // a replay run must not silently diverge from the recorded one
    } catch (const Error&) {
      // nearest member to the centroid
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < pool.size(); ++i) {
        if (result.assignments[i] != node.id) continue;
        const double d = (pool[i].embedding - node.centroid).squaredNorm();
        if (d < best) {
          best = d;
          node.summary = pool[i].canonical;
        }
      }
      node.fallback = true;
    }
  };

  const int workers = std::clamp(max_in_flight, 1, std::max(1, result.k));
  if (workers == 1) {
    for (auto& node : nodes) summarize(node);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    {
      std::vector<std::jthread> pool_threads;
      for (int w = 0; w < workers; ++w)
        pool_threads.emplace_back([&] {
          for (int c = next++; c < result.k; c = next++) {
            try {
              summarize(nodes[c]);
            } catch (...) {
              std::lock_guard lock(failure_mu);
              if (!failure) failure = std::current_exception();
            }
          }
        });
    }
    if (failure) std::rethrow_exception(failure);
  }

  std::vector<std::string> summaries;
  summaries.reserve(nodes.size());
  for (const auto& n : nodes) summaries.push_back(n.summary);
  auto embedded = embedder.embed_batch(summaries);
  for (std::size_t c = 0; c < nodes.size(); ++c) nodes[c].summary_embedding = std::move(embedded[c]);
  return nodes;
}

// ---------------------------------------------------------------------------
// Schema graph

struct SchemaEdge {
  int src = 0;
  int dst = 0;
  Relation relation = Relation::Implies;
  double weight = 0.0;
  int count = 0;
};

struct SchemaGraph {
  std::vector<SchemaNode> nodes;
  std::vector<SchemaEdge> edges;  // sorted by (src, dst, relation)

  /// Relation-summed weight between a and b, taking the heavier direction per
  /// relation.
  Eigen::MatrixXd symmetric_weights() const {
    const auto k = static_cast<Eigen::Index>(nodes.size());
    std::map<std::tuple<int, int, Relation>, double> directed;
    for (const auto& e : edges) directed[{e.src, e.dst, e.relation}] = e.weight;
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(k, k);
    for (const auto& [key, weight] : directed) {
      const auto [a, b, r] = key;
      auto rev = directed.find({b, a, r});
      if (rev != directed.end() && a > b) continue;  // pair handled from (b, a)
      const double m = std::max(weight, rev == directed.end() ? 0.0 : rev->second);
      w(a, b) += m;
      w(b, a) += m;
    }
    return w;
  }
};

/// Cluster-level co-occurrence of instance edges between distinct clusters,
/// normalized by the largest count.
inline SchemaGraph build_schema_graph(std::vector<SchemaNode> nodes, std::span<const FolGraph> corpus,
                                      const std::map<std::string, int>& cluster_of) {
  std::map<std::tuple<int, int, Relation>, int> counts;
  for (const auto& g : corpus)
    for (const auto& e : g.edges) {
      if (e.relation == Relation::InstanceOf) continue;
      const auto& a = g.nodes[e.src];
      const auto& b = g.nodes[e.dst];
      if (a.schema || b.schema) continue;
      auto ia = cluster_of.find(canonical_predicate_string(a.predicate));
      auto ib = cluster_of.find(canonical_predicate_string(b.predicate));
      if (ia == cluster_of.end() || ib == cluster_of.end())
        throw UnassignedPredicate("no cluster for " +
                                  canonical_predicate_string((ia == cluster_of.end() ? a : b).predicate));
      if (ia->second == ib->second) continue;
      ++counts[{ia->second, ib->second, e.relation}];
    }
  int max_count = 0;
  for (const auto& [_, c] : counts) max_count = std::max(max_count, c);
  SchemaGraph g;
  g.nodes = std::move(nodes);
  for (const auto& [key, c] : counts) {
    const auto [s, d, r] = key;
    g.edges.push_back({s, d, r, static_cast<double>(c) / max_count, c});
  }
  return g;
}

// ---------------------------------------------------------------------------
// Filters

struct SchemaFilter {
  int center = 0;
  std::vector<int> node_ids;  // center first
  Eigen::MatrixXd features;   // rows follow node_ids
  Eigen::MatrixXd adjacency;  // relation-collapsed, symmetric, >= 0
};

/// Filter centers are the `n_filters` schema nodes with the most members (ties
/// by id). Each filter is the `hop`-neighborhood of its center, truncated to
/// `size_cap` nodes by descending edge weight to the center.
inline std::vector<SchemaFilter> extract_filters(const SchemaGraph& graph, int n_filters, int hop,
                                                 int size_cap) {
  const int k = static_cast<int>(graph.nodes.size());
  if (n_filters < 1 || n_filters > k)
    throw InvalidFilterCount(std::to_string(n_filters) + " filters requested from " +
                             std::to_string(k) + " schema nodes");
  if (size_cap < 1) throw PreconditionError("size_cap must be >= 1");
  std::vector<int> order(k);
  for (int i = 0; i < k; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (graph.nodes[a].member_count != graph.nodes[b].member_count)
      return graph.nodes[a].member_count > graph.nodes[b].member_count;
    return graph.nodes[a].id < graph.nodes[b].id;
  });

  const Eigen::MatrixXd w = graph.symmetric_weights();
  std::vector<SchemaFilter> filters;
  for (int f = 0; f < n_filters; ++f) {
    const int center = order[f];
    std::vector<int> dist(k, -1);
    std::vector<int> bfs{center};
    dist[center] = 0;
    for (std::size_t q = 0; q < bfs.size(); ++q) {
      const int u = bfs[q];
      if (dist[u] >= hop) continue;
      for (int v = 0; v < k; ++v)
        if (dist[v] < 0 && w(u, v) > 0.0) {
          dist[v] = dist[u] + 1;
          bfs.push_back(v);
        }
    }
    std::vector<int> rest(bfs.begin() + 1, bfs.end());
    std::stable_sort(rest.begin(), rest.end(),
                     [&](int a, int b) { return w(center, a) > w(center, b); });
    if (static_cast<int>(rest.size()) > size_cap - 1) rest.resize(size_cap - 1);

    SchemaFilter filter;
    filter.center = center;
    filter.node_ids.push_back(center);
    filter.node_ids.insert(filter.node_ids.end(), rest.begin(), rest.end());
    const auto m = static_cast<Eigen::Index>(filter.node_ids.size());
    const auto& first = graph.nodes[center];
    const Eigen::Index d =
        first.summary_embedding.size() > 0 ? first.summary_embedding.size() : first.centroid.size();
    filter.features.resize(m, d);
    filter.adjacency.resize(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& node = graph.nodes[filter.node_ids[i]];
      filter.features.row(i) =
          (node.summary_embedding.size() == d ? node.summary_embedding : node.centroid).transpose();
      for (Eigen::Index j = 0; j < m; ++j)
        filter.adjacency(i, j) = w(filter.node_ids[i], filter.node_ids[j]);
    }
    filters.push_back(std::move(filter));
  }
  return filters;
}

// ---------------------------------------------------------------------------
// Library persistence

inline constexpr int kSchemaLibraryVersion = 1;

struct SchemaLibrary {
  int version = kSchemaLibraryVersion;
  int d = 0;
  std::uint64_t seed = 0;
  SchemaGraph graph;
  std::vector<std::pair<int, double>> k_scores;
  std::string sentence_provider;
  std::string node_provider;
  std::string config_fingerprint;

  std::vector<EmbeddingVector> centroids() const {
    std::vector<EmbeddingVector> c;
    c.reserve(graph.nodes.size());
    for (const auto& n : graph.nodes) c.push_back(n.centroid);
    return c;
  }
};

inline nlohmann::json library_to_json(const SchemaLibrary& lib) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : lib.graph.nodes)
    nodes.push_back({{"id", n.id},
                     {"summary", n.summary},
                     {"centroid", vector_to_json(n.centroid)},
                     {"summary_embedding", vector_to_json(n.summary_embedding)},
                     {"members", n.members},
                     {"member_count", n.member_count},
                     {"fallback", n.fallback}});
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : lib.graph.edges)
    edges.push_back({{"src", e.src},
                     {"dst", e.dst},
                     {"relation", relation_name(e.relation)},
                     {"weight", e.weight},
                     {"count", e.count}});
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& [k, s] : lib.k_scores) scores.push_back({{"k", k}, {"silhouette", s}});
  return {{"version", lib.version},
          {"d", lib.d},
          {"seed", lib.seed},
          {"k", lib.graph.nodes.size()},
          {"k_scores", scores},
          {"providers", {{"sentence", lib.sentence_provider}, {"node", lib.node_provider}}},
          {"config_fingerprint", lib.config_fingerprint},
          {"nodes", nodes},
          {"edges", edges}};
}

namespace detail {

template <typename T>
T field(const nlohmann::json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw SchemaFormatError(path + key, "missing field");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaFormatError(path + key, e.what());
  }
}

inline EmbeddingVector vec_field(const nlohmann::json& j, const std::string& key,
                                 const std::string& path, int d) {
  const auto v = field<std::vector<double>>(j, key, path);
  if (static_cast<int>(v.size()) != d)
    throw SchemaFormatError(path + key, "expected dimension " + std::to_string(d) + ", got " +
                                            std::to_string(v.size()));
  return Eigen::Map<const EmbeddingVector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

inline SchemaLibrary library_from_json(const nlohmann::json& j) {
  using detail::field;
  SchemaLibrary lib;
  lib.version = field<int>(j, "version", "");
  if (lib.version != kSchemaLibraryVersion)
    throw SchemaFormatError("version", "file has version " + std::to_string(lib.version) +
                                           ", this build reads version " +
                                           std::to_string(kSchemaLibraryVersion));
  lib.d = field<int>(j, "d", "");
  lib.seed = field<std::uint64_t>(j, "seed", "");
  lib.config_fingerprint = field<std::string>(j, "config_fingerprint", "");
  if (j.contains("providers")) {
    lib.sentence_provider = j["providers"].value("sentence", "");
    lib.node_provider = j["providers"].value("node", "");
  }
  if (j.contains("k_scores"))
    for (const auto& s : j["k_scores"])
      lib.k_scores.emplace_back(s.value("k", 0), s.value("silhouette", 0.0));
  const auto nodes = field<nlohmann::json>(j, "nodes", "");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string p = "nodes[" + std::to_string(i) + "].";
    const auto& jn = nodes[i];
    SchemaNode n;
    n.id = field<int>(jn, "id", p);
    if (n.id != static_cast<int>(i)) throw SchemaFormatError(p + "id", "ids must be 0..K-1 in order");
    n.summary = field<std::string>(jn, "summary", p);
    n.centroid = detail::vec_field(jn, "centroid", p, lib.d);
    n.summary_embedding = detail::vec_field(jn, "summary_embedding", p, lib.d);
    n.members = field<std::vector<std::string>>(jn, "members", p);
    n.member_count = field<int>(jn, "member_count", p);
    if (n.member_count != static_cast<int>(n.members.size()))
      throw SchemaFormatError(p + "member_count", "does not match members");
    n.fallback = jn.value("fallback", false);
    lib.graph.nodes.push_back(std::move(n));
  }
  const auto edges = field<nlohmann::json>(j, "edges", "");
  const int k = static_cast<int>(lib.graph.nodes.size());
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::string p = "edges[" + std::to_string(i) + "].";
    SchemaEdge e;
    e.src = field<int>(edges[i], "src", p);
    e.dst = field<int>(edges[i], "dst", p);
    if (e.src < 0 || e.src >= k || e.dst < 0 || e.dst >= k || e.src == e.dst)
      throw SchemaFormatError(p + "src", "endpoint out of range or self-loop");
    try {
      e.relation = relation_from_name(field<std::string>(edges[i], "relation", p));
    } catch (const SchemaFormatError&) {
      throw SchemaFormatError(p + "relation", "unknown relation");
    }
    e.weight = field<double>(edges[i], "weight", p);
    if (!(e.weight > 0.0 && e.weight <= 1.0)) throw SchemaFormatError(p + "weight", "outside (0,1]");
    e.count = edges[i].value("count", 0);
    lib.graph.edges.push_back(e);
  }
  return lib;
}

inline std::string library_fingerprint(const SchemaLibrary& lib) {
  return sha256_hex(library_to_json(lib).dump());
}

inline void save_library(const SchemaLibrary& lib, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << library_to_json(lib).dump(1) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

inline SchemaLibrary load_library(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto j = nlohmann::json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw SchemaFormatError("<document>", "not valid JSON (truncated?)");
  return library_from_json(j);
}

}  // namespace cirf
