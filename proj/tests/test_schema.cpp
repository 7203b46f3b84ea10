#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "cirf/schema.hpp"

using namespace cirf;
namespace fs = std::filesystem;

namespace {

std::vector<EmbeddingVector> points_1d(std::initializer_list<double> xs) {
  std::vector<EmbeddingVector> out;
  for (double x : xs) out.push_back(EmbeddingVector::Constant(1, x));
  return out;
}

double partition_inertia(const std::vector<EmbeddingVector>& pts, const std::vector<int>& a, int k) {
  double total = 0.0;
  for (int c = 0; c < k; ++c) {
    EmbeddingVector mean = EmbeddingVector::Zero(pts[0].size());
    int n = 0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (a[i] == c) {
        mean += pts[i];
        ++n;
      }
    if (n == 0) return std::numeric_limits<double>::infinity();
    mean /= n;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (a[i] == c) total += (pts[i] - mean).squaredNorm();
  }
  return total;
}

// Direct evaluation of the silhouette formula, written independently of the
// library (explicit per-cluster loops, no shared helpers).
double silhouette_oracle(const std::vector<EmbeddingVector>& pts, const std::vector<int>& a) {
  const int k = *std::max_element(a.begin(), a.end()) + 1;
  double sum = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<double> dist(k, 0.0);
    std::vector<int> cnt(k, 0);
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i == j) continue;
      dist[a[j]] += (pts[i] - pts[j]).norm();
      ++cnt[a[j]];
    }
    if (cnt[a[i]] == 0) continue;
    const double ai = dist[a[i]] / cnt[a[i]];
    double bi = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c)
      if (c != a[i] && cnt[c] > 0) bi = std::min(bi, dist[c] / cnt[c]);
    if (std::max(ai, bi) > 0) sum += (bi - ai) / std::max(ai, bi);
  }
  return sum / static_cast<double>(pts.size());
}

class ScriptedSummaries final : public CompletionBackend {
 public:
  std::string complete(const PromptRequest& req) override {
    if (req.prompt.find("Broken(") != std::string::npos) throw ProviderError("refused");
    ++calls;
    return "summary " + std::to_string(req.prompt.size());
  }
  std::atomic<int> calls{0};
};

FolGraph embedded_graph(std::initializer_list<std::pair<std::string, double>> nodes) {
  FolGraph g;
  for (const auto& [name, x] : nodes)
    g.nodes.push_back(FolNode{Predicate{name, {"x"}, false, ""}, EmbeddingVector::Constant(1, x), {}, false});
  return g;
}

SchemaNode node_with(int id, int members) {
  SchemaNode n;
  n.id = id;
  n.summary = "s" + std::to_string(id);
  n.centroid = EmbeddingVector::Constant(2, id);
  n.summary_embedding = EmbeddingVector::Constant(2, id + 0.5);
  for (int i = 0; i < members; ++i) n.members.push_back("M" + std::to_string(id) + "_" + std::to_string(i) + "()");
  n.member_count = members;
  return n;
}

}  // namespace

TEST(CollectPredicates, DedupAndOrder) {
  std::vector<FolGraph> corpus = {embedded_graph({{"B", 1.0}, {"A", 2.0}}), embedded_graph({{"A", 3.0}})};
  const auto pool = collect_predicates(corpus);
  ASSERT_EQ(pool.size(), 2u);
  EXPECT_EQ(pool[0].canonical, "A(x)");
  EXPECT_EQ(pool[1].canonical, "B(x)");
  std::vector<FolGraph> one = {embedded_graph({{"A", 1}, {"B", 2}, {"C", 3}})};
  EXPECT_EQ(collect_predicates(one).size(), 3u);
  EXPECT_THROW(collect_predicates(std::vector<FolGraph>{}), EmptyCorpus);
}

TEST(KMeans, SymmetricOptimum) {
  const auto pts = points_1d({0, 1, 10, 11});
  for (std::uint64_t seed : {1u, 2u, 3u, 42u}) {
    const auto r = kmeans(pts, 2, seed);
    std::vector<double> c = {r.centroids[0][0], r.centroids[1][0]};
    std::sort(c.begin(), c.end());
    EXPECT_EQ(c[0], 0.5);
    EXPECT_EQ(c[1], 10.5);
  }
}

TEST(KMeans, KEqualsNIsZeroInertia) {
  const auto pts = points_1d({3, 1, 4, 1.5, 9});
  const auto r = kmeans(pts, 5, 7);
  EXPECT_EQ(r.inertia, 0.0);
  std::set<int> distinct(r.assignments.begin(), r.assignments.end());
  EXPECT_EQ(distinct.size(), 5u);
}

TEST(KMeans, LocalOptimumAgainstExhaustivePartitions) {
  const auto pts = points_1d({0, 0.1, 10, 10.1, 20, 20.1});
  double global = std::numeric_limits<double>::infinity();
  for (int mask = 1; mask < (1 << 6) - 1; ++mask) {
    std::vector<int> a(6);
    for (int i = 0; i < 6; ++i) a[i] = (mask >> i) & 1;
    global = std::min(global, partition_inertia(pts, a, 2));
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = kmeans(pts, 2, seed);
    EXPECT_NEAR(r.inertia, partition_inertia(pts, r.assignments, 2), 1e-9);
    EXPECT_GE(r.inertia, global - 1e-9);
    // Lloyd fixed point: every point is nearest to its own centroid.
    for (std::size_t i = 0; i < pts.size(); ++i)
      EXPECT_EQ(assign_to_cluster(pts[i], r.centroids), r.assignments[i]);
    // In 1-D a Lloyd fixed point splits the sorted points into two intervals.
    int switches = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) switches += r.assignments[i] != r.assignments[i - 1];
    EXPECT_EQ(switches, 1);
  }
  EXPECT_NEAR(global, 100.015, 1e-9);
}

TEST(KMeans, PartitionInvariantsAndMonotoneInertia) {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<EmbeddingVector> pts;
    for (int i = 0; i < 40; ++i) {
      EmbeddingVector v(3);
      for (int d = 0; d < 3; ++d) v[d] = rng.normal() + (i % 4) * 3.0;
      pts.push_back(v);
    }
    const int k = 2 + trial % 6;
    const auto r = kmeans(pts, k, trial);
    ASSERT_EQ(r.assignments.size(), pts.size());
    std::vector<int> sizes(k, 0);
    for (int a : r.assignments) {
      ASSERT_GE(a, 0);
      ASSERT_LT(a, k);
      ++sizes[a];
    }
    int total = 0;
    for (int c = 0; c < k; ++c) {
      EXPECT_GT(sizes[c], 0);
      total += sizes[c];
      EmbeddingVector mean = EmbeddingVector::Zero(3);
      for (std::size_t i = 0; i < pts.size(); ++i)
        if (r.assignments[i] == c) mean += pts[i];
      mean /= sizes[c];
      EXPECT_LT((mean - r.centroids[c]).norm(), 1e-6);
    }
    EXPECT_EQ(total, 40);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
      EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] + 1e-9);
  }
}

TEST(KMeans, EmptyClusterRepaired) {
  // Duplicated points make k-means++ fall back to uniform picks.
  const auto pts = points_1d({1, 1, 1, 1, 5});
  const auto r = kmeans(pts, 3, 3);
  std::vector<int> sizes(3, 0);
  for (int a : r.assignments) ++sizes[a];
  for (int s : sizes) EXPECT_GT(s, 0);
}

TEST(KMeans, InvalidK) {
  const auto pts = points_1d({1, 2});
  EXPECT_THROW(kmeans(pts, 0, 1), InvalidK);
  EXPECT_THROW(kmeans(pts, 3, 1), InvalidK);
}

TEST(KMeans, SeedDeterminism) {
  Rng rng(5);
  std::vector<EmbeddingVector> pts;
  for (int i = 0; i < 30; ++i) pts.push_back(EmbeddingVector::NullaryExpr(4, [&](Eigen::Index) { return rng.normal(); }));
  const auto a = kmeans(pts, 4, 11);
  const auto b = kmeans(pts, 4, 11);
  EXPECT_EQ(a.assignments, b.assignments);
  EXPECT_EQ(a.inertia, b.inertia);
}

TEST(Silhouette, TwoBlobValue) {
  const auto pts = points_1d({0.0, 0.1, 10.0, 10.1});
  const std::vector<int> a = {0, 0, 1, 1};
  // Hand evaluation: s(0) = (10.05 - 0.1) / 10.05, s(0.1) = (9.95 - 0.1) / 9.95, mirrored.
  const double hand = ((10.05 - 0.1) / 10.05 + (9.95 - 0.1) / 9.95) / 2.0;
  EXPECT_NEAR(silhouette(pts, a), hand, 1e-12);
  EXPECT_NEAR(silhouette(pts, a), silhouette_oracle(pts, a), 1e-12);
  EXPECT_NEAR(silhouette(pts, a), 0.99, 1e-3);
}

TEST(Silhouette, DegenerateZeroDistance) {
  const auto pts = points_1d({2.0, 2.0, 2.0, 2.0});
  EXPECT_EQ(silhouette(pts, std::vector<int>{0, 0, 1, 1}), 0.0);
}

TEST(Silhouette, TrueAssignmentBeatsRandom) {
  Rng rng(8);
  std::vector<EmbeddingVector> pts;
  std::vector<int> truth;
  for (int i = 0; i < 30; ++i) {
    pts.push_back(EmbeddingVector::Constant(2, (i % 3) * 20.0) + EmbeddingVector::NullaryExpr(2, [&](Eigen::Index) { return rng.normal(); }));
    truth.push_back(i % 3);
  }
  const double good = silhouette(pts, truth);
  EXPECT_NEAR(good, silhouette_oracle(pts, truth), 1e-12);
  for (int t = 0; t < 10; ++t) {
    std::vector<int> random(30);
    for (auto& r : random) r = static_cast<int>(rng.index(3));
    random[0] = 0;
    random[1] = 1;
    EXPECT_LT(silhouette(pts, random), good);
    EXPECT_NEAR(silhouette(pts, random), silhouette_oracle(pts, random), 1e-12);
  }
}

TEST(Silhouette, SingleClusterRejected) {
  const auto pts = points_1d({1, 2, 3});
  EXPECT_THROW(silhouette(pts, std::vector<int>{0, 0, 0}), SingleCluster);
}

TEST(SelectK, TwoBlobs) {
  const auto pts = points_1d({0.0, 0.1, 0.2, 10.0, 10.1, 10.2});
  const std::vector<int> grid = {2, 3, 4};
  const auto sel = select_k(pts, grid, 13);
  EXPECT_EQ(sel.best_k, 2);
  ASSERT_EQ(sel.scores.size(), 3u);
  for (const auto& [k, s] : sel.scores) {
    const auto r = kmeans(pts, k, 13);
    EXPECT_NEAR(s, silhouette_oracle(pts, r.assignments), 1e-12);
  }
  const std::vector<int> only = {2};
  EXPECT_EQ(select_k(pts, only, 1).best_k, 2);
}

TEST(AssignToCluster, NearestWithTieToSmallerId) {
  const auto c = points_1d({0, 10});
  EXPECT_EQ(assign_to_cluster(EmbeddingVector::Constant(1, 4), c), 0);
  EXPECT_EQ(assign_to_cluster(EmbeddingVector::Constant(1, 10), c), 1);
  const auto tie = points_1d({0, 1, 2, 3, 4, 6});
  EXPECT_EQ(assign_to_cluster(EmbeddingVector::Constant(1, 5), tie), 4);
  EXPECT_THROW(assign_to_cluster(EmbeddingVector::Zero(2), c), DimensionMismatch);
}

TEST(AbstractClusters, SummariesAndFallback) {
  const fs::path cache = fs::temp_directory_path() / ("cirf_abstract_" + std::to_string(::getpid()) + ".ndjson");
  fs::remove(cache);
  std::vector<PooledPredicate> pool = {{"Broken(x)", EmbeddingVector::Constant(1, 0.0)},
                                       {"Lower(Y,Harm)", EmbeddingVector::Constant(1, 10.0)},
                                       {"Reduce(X,Risk)", EmbeddingVector::Constant(1, 10.2)},
                                       {"Zeta(x)", EmbeddingVector::Constant(1, 0.4)}};
  ClusteringResult r;
  r.k = 2;
  r.assignments = {0, 1, 1, 0};
  r.centroids = {EmbeddingVector::Constant(1, 0.1), EmbeddingVector::Constant(1, 10.1)};
  auto backend = std::make_shared<ScriptedSummaries>();
  Gateway gw(backend, cache, Mode::Record, 2, [] { return std::string("t"); });
  HashEmbeddingProvider embedder(8);
  const auto nodes = abstract_clusters(r, pool, gw, embedder);
  ASSERT_EQ(nodes.size(), 2u);
  EXPECT_TRUE(nodes[0].fallback);
  EXPECT_EQ(nodes[0].summary, "Broken(x)");  // nearest member to centroid 0.1
  EXPECT_FALSE(nodes[1].fallback);
  const std::vector<std::string> members = {"Lower(Y,Harm)", "Reduce(X,Risk)"};
  EXPECT_EQ(nodes[1].summary, "summary " + std::to_string(render_p2(members).prompt.size()));
  EXPECT_EQ(nodes[1].member_count, 2);
  EXPECT_EQ(nodes[1].summary_embedding, test_embed(nodes[1].summary, 8));

  // Replay reproduces the recorded summaries; the failed cluster misses.
  Gateway replay(nullptr, cache, Mode::Replay);
  ClusteringResult ok = r;
  ok.assignments = {1, 1, 1, 0};
  std::vector<PooledPredicate> pool2 = pool;
  pool2[0].canonical = "Another(x)";
  EXPECT_THROW(abstract_clusters(ok, pool2, replay, embedder), CacheMiss);
}

TEST(AbstractClusters, LargeClusterSplitIntoBatches) {
  std::vector<PooledPredicate> pool;
  ClusteringResult r;
  r.k = 1;
  r.centroids = {EmbeddingVector::Zero(1)};
  for (int i = 0; i < 7; ++i) {
    pool.push_back({"P" + std::to_string(i) + "(x)", EmbeddingVector::Zero(1)});
    r.assignments.push_back(0);
  }
  auto backend = std::make_shared<ScriptedSummaries>();
  Gateway gw(backend, {}, Mode::Live);
  HashEmbeddingProvider embedder(4);
  PromptSettings s;
  s.p2_max_lines = 3;
  const auto nodes = abstract_clusters(r, pool, gw, embedder, s, 1);
  EXPECT_EQ(backend->calls, 3);
  EXPECT_EQ(std::count(nodes[0].summary.begin(), nodes[0].summary.end(), ';'), 2);
}

TEST(BuildSchemaGraph, CountsAndNormalization) {
  FolGraph g = embedded_graph({{"A", 0}, {"B", 0}, {"C", 0}});
  g.add_edge(0, 1, Relation::Implies);
  g.add_edge(0, 2, Relation::Implies);  // same cluster as B below
  g.add_edge(0, 1, Relation::Conjunction);
  g.add_edge(1, 2, Relation::Implies);  // intra-cluster, ignored
  const std::map<std::string, int> cluster_of = {{"A(x)", 3}, {"B(x)", 7}, {"C(x)", 7}};
  std::vector<SchemaNode> nodes;
  for (int i = 0; i < 8; ++i) nodes.push_back(node_with(i, 1));
  const auto sg = build_schema_graph(nodes, std::vector<FolGraph>{g}, cluster_of);
  ASSERT_EQ(sg.edges.size(), 2u);
  EXPECT_EQ(sg.edges[0].src, 3);
  EXPECT_EQ(sg.edges[0].dst, 7);
  EXPECT_EQ(sg.edges[0].relation, Relation::Implies);
  EXPECT_EQ(sg.edges[0].weight, 1.0);
  EXPECT_EQ(sg.edges[1].relation, Relation::Conjunction);
  EXPECT_EQ(sg.edges[1].weight, 0.5);

  const std::map<std::string, int> partial = {{"A(x)", 3}};
  EXPECT_THROW(build_schema_graph(nodes, std::vector<FolGraph>{g}, partial), UnassignedPredicate);
}

TEST(BuildSchemaGraph, SingleEdgeHasUnitWeight) {
  FolGraph g = embedded_graph({{"A", 0}, {"B", 0}});
  g.add_edge(0, 1, Relation::Implies);
  std::vector<SchemaNode> nodes;
  for (int i = 0; i < 8; ++i) nodes.push_back(node_with(i, 1));
  const auto sg = build_schema_graph(nodes, std::vector<FolGraph>{g}, {{"A(x)", 3}, {"B(x)", 7}});
  ASSERT_EQ(sg.edges.size(), 1u);
  EXPECT_EQ(sg.edges[0].weight, 1.0);
}

TEST(ExtractFilters, CentersByMemberCount) {
  SchemaGraph sg;
  const int counts[] = {5, 9, 9, 1};
  for (int i = 0; i < 4; ++i) sg.nodes.push_back(node_with(i, counts[i]));
  const auto f = extract_filters(sg, 2, 1, 6);
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0].center, 1);
  EXPECT_EQ(f[1].center, 2);
  EXPECT_EQ(f[0].node_ids, std::vector<int>{1});  // isolated
  EXPECT_EQ(f[0].adjacency.size(), 1);
  EXPECT_EQ(f[0].adjacency(0, 0), 0.0);
  EXPECT_EQ(f[0].features.row(0).transpose(), sg.nodes[1].summary_embedding);
  EXPECT_THROW(extract_filters(sg, 5, 1, 6), InvalidFilterCount);
  EXPECT_THROW(extract_filters(sg, 0, 1, 6), InvalidFilterCount);
}

TEST(ExtractFilters, StarTruncatedByWeight) {
  SchemaGraph sg;
  sg.nodes.push_back(node_with(0, 100));
  for (int i = 1; i <= 10; ++i) {
    sg.nodes.push_back(node_with(i, 1));
    sg.edges.push_back({0, i, Relation::Implies, i / 10.0, i});
  }
  const auto f = extract_filters(sg, 1, 1, 6);
  EXPECT_EQ(f[0].node_ids, (std::vector<int>{0, 10, 9, 8, 7, 6}));
  EXPECT_DOUBLE_EQ(f[0].adjacency(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(f[0].adjacency(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(f[0].adjacency(1, 2), 0.0);
  EXPECT_TRUE((f[0].adjacency.array() >= 0).all());
  EXPECT_TRUE(f[0].adjacency.isApprox(f[0].adjacency.transpose()));
  // Determinism.
  const auto again = extract_filters(sg, 1, 1, 6);
  EXPECT_EQ(again[0].node_ids, f[0].node_ids);
  EXPECT_EQ(again[0].adjacency, f[0].adjacency);
}

TEST(SymmetricWeights, SumsRelationChannels) {
  SchemaGraph sg;
  for (int i = 0; i < 2; ++i) sg.nodes.push_back(node_with(i, 1));
  sg.edges = {{0, 1, Relation::Implies, 0.5, 1}, {0, 1, Relation::Conjunction, 1.0, 2}, {1, 0, Relation::Conjunction, 1.0, 2}};
  const auto w = sg.symmetric_weights();
  EXPECT_DOUBLE_EQ(w(0, 1), 1.5);
  EXPECT_DOUBLE_EQ(w(1, 0), 1.5);
}

TEST(Library, SaveLoadRoundTrip) {
  SchemaLibrary lib;
  lib.d = 2;
  lib.seed = 13;
  lib.sentence_provider = "hash";
  lib.node_provider = "hash";
  lib.config_fingerprint = "abc";
  lib.k_scores = {{2, 0.5}, {4, 0.25}};
  for (int i = 0; i < 3; ++i) lib.graph.nodes.push_back(node_with(i, i + 1));
  lib.graph.edges = {{0, 2, Relation::Disjunction, 1.0, 4}, {1, 2, Relation::Implies, 0.25, 1}};
  const fs::path p = fs::temp_directory_path() / ("cirf_lib_" + std::to_string(::getpid()) + ".json");
  save_library(lib, p);
  const auto back = load_library(p);
  EXPECT_EQ(library_to_json(back), library_to_json(lib));
  EXPECT_EQ(library_fingerprint(back), library_fingerprint(lib));

  std::ifstream in(p);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ofstream(p, std::ios::trunc) << text.substr(0, text.size() / 2);
  EXPECT_THROW(load_library(p), SchemaFormatError);

  auto j = library_to_json(lib);
  j["version"] = 99;
  std::ofstream(p, std::ios::trunc) << j.dump();
  try {
    load_library(p);
    FAIL();
  } catch (const SchemaFormatError& e) {
    EXPECT_EQ(e.field_path(), "version");
    EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
  }
  EXPECT_THROW(load_library(p.string() + ".missing"), IoError);
}
