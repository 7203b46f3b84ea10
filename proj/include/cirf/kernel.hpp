#pragma once

// Schema-enhanced graph kernel model.
//
// Every node v of an instance graph is described by its k-hop subgraph G_v.
// For a filter H with adjacency B and node features Y, and a subgraph with
// adjacency A and features X, the p-step random-walk kernel is
//
//   S = X Yᵀ,  s = vec(S)  (column-major, n_sub x n_filt)
//   K = sᵀ W (B ⊗ A)^p s
//
// (B ⊗ A) vec(S) = vec(A S Bᵀ), so the product graph is never materialized:
// p applications of S -> A S Bᵀ replace the Kronecker power. Per layer, each
// node keeps the g largest kernel values (in filter-index order) as its new
// feature vector; the readout concatenates column sums of all layer outputs,
// including the raw node embeddings, and a ReLU layer plus softmax head
// produces stance probabilities.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cirf/error.hpp"
#include "cirf/fol.hpp"
#include "cirf/hash.hpp"
#include "cirf/schema.hpp"

namespace cirf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct RelationWeights {
  double implies = 1.0;
  double conjunction = 0.5;
  double disjunction = 0.5;
  double instance_of = 1.0;

  double of(Relation r) const {
    switch (r) {
      case Relation::Implies: return implies;
      case Relation::Conjunction: return conjunction;
      case Relation::Disjunction: return disjunction;
      case Relation::InstanceOf: return instance_of;
    }
    return 0.0;
  }
};

// ---------------------------------------------------------------------------
// Subgraphs

struct PaddedSubgraph {
  std::vector<int> nodes;  // graph indices of the valid rows, center first
  Matrix adjacency;        // n_sub x n_sub, zero outside the valid block
  Matrix features;         // n_sub x f, zero rows beyond valid_count
  int valid_count = 0;
  int center = 0;          // row of the center (always 0)
};

/// Symmetric relation-collapsed adjacency: entry (u, v) is the sum of the
/// weights of the distinct relations linking u and v in either direction.
inline Matrix collapsed_adjacency(const FolGraph& g, const RelationWeights& rw) {
  const auto n = static_cast<Eigen::Index>(g.size());
  std::map<std::tuple<int, int, Relation>, bool> seen;
  Matrix a = Matrix::Zero(n, n);
  for (const auto& e : g.edges) {
    const int lo = std::min(e.src, e.dst);
    const int hi = std::max(e.src, e.dst);
    if (!seen.emplace(std::make_tuple(lo, hi, e.relation), true).second) continue;
    a(lo, hi) += rw.of(e.relation);
    a(hi, lo) += rw.of(e.relation);
  }
  return a;
}

/// BFS order: center first, then by hop distance, then by node index.
inline std::vector<int> khop_nodes(const FolGraph& g, int v, int hop) {
  const int n = static_cast<int>(g.size());
  if (v < 0 || v >= n) throw IndexOutOfRange("node " + std::to_string(v) + " of " + std::to_string(n));
  std::vector<std::vector<int>> nbr(n);
  for (const auto& e : g.edges) {
    nbr[e.src].push_back(e.dst);
    nbr[e.dst].push_back(e.src);
  }
  std::vector<int> dist(n, -1);
  dist[v] = 0;
  std::vector<int> order{v};
  std::vector<int> frontier{v};
  for (int h = 0; h < hop && !frontier.empty(); ++h) {
    std::vector<int> next;
    for (int u : frontier)
      for (int w : nbr[u])
        if (dist[w] < 0) {
          dist[w] = h + 1;
          next.push_back(w);
        }
    std::sort(next.begin(), next.end());
    order.insert(order.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return order;
}

inline PaddedSubgraph khop_subgraph(const FolGraph& g, int v, int hop, int n_sub,
                                    const RelationWeights& rw = {}) {
  if (n_sub < 1) throw PreconditionError("n_sub must be >= 1");
  std::vector<int> nodes = khop_nodes(g, v, hop);
  if (static_cast<int>(nodes.size()) > n_sub) nodes.resize(n_sub);
  const Matrix full = collapsed_adjacency(g, rw);
  PaddedSubgraph sub;
  sub.valid_count = static_cast<int>(nodes.size());
  sub.adjacency = Matrix::Zero(n_sub, n_sub);
  for (int i = 0; i < sub.valid_count; ++i)
    for (int j = 0; j < sub.valid_count; ++j) sub.adjacency(i, j) = full(nodes[i], nodes[j]);
  Eigen::Index f = 0;
  for (const auto& node : g.nodes) f = std::max<Eigen::Index>(f, node.embedding.size());
  sub.features = Matrix::Zero(n_sub, f);
  for (int i = 0; i < sub.valid_count; ++i) {
    const auto& emb = g.nodes[nodes[i]].embedding;
    if (emb.size() == f) sub.features.row(i) = emb.transpose();
  }
  sub.nodes = std::move(nodes);
  return sub;
}

// ---------------------------------------------------------------------------
// Random-walk kernel

/// W is either dense (N x N, N = n_sub * n_filt) or diagonal (N x 1).
inline bool is_diagonal_weight(const Matrix& w, Eigen::Index n) { return w.cols() == 1 && n != 1; }

namespace detail {

inline void check_kernel_shapes(const Matrix& a, const Matrix& x, const Matrix& b, const Matrix& y,
                                const Matrix& w) {
  const Eigen::Index n_sub = a.rows();
  const Eigen::Index n_filt = b.rows();
  const Eigen::Index n = n_sub * n_filt;
  if (a.cols() != n_sub || b.cols() != n_filt) throw ShapeMismatch("adjacency must be square");
  if (x.rows() != n_sub || y.rows() != n_filt)
    throw ShapeMismatch("feature rows must match adjacency sizes");
  if (x.cols() != y.cols())
    throw ShapeMismatch("feature dimensions differ: " + std::to_string(x.cols()) + " vs " +
                        std::to_string(y.cols()));
  const bool dense = w.rows() == n && w.cols() == n;
  const bool diag = w.rows() == n && w.cols() == 1;
  if (!dense && !diag)
    throw ShapeMismatch("W is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                        ", product dimension is " + std::to_string(n));
}

inline Vector apply_w(const Matrix& w, const Eigen::Ref<const Vector>& t) {
  if (is_diagonal_weight(w, t.size())) return w.col(0).cwiseProduct(t);
  return w * t;
}

inline Vector apply_w_transpose(const Matrix& w, const Eigen::Ref<const Vector>& s) {
  if (is_diagonal_weight(w, s.size())) return w.col(0).cwiseProduct(s);
  return w.transpose() * s;
}

inline Eigen::Map<const Vector> vec(const Matrix& m) { return {m.data(), m.size()}; }

}  // namespace detail

/// sᵀ W (B ⊗ A)^p s with S = X Yᵀ, via p applications of S -> A S Bᵀ.
inline double rw_kernel(const Matrix& sub_adj, const Matrix& sub_features, const Matrix& filt_adj,
                        const Matrix& filt_features, const Matrix& w, int p) {
  detail::check_kernel_shapes(sub_adj, sub_features, filt_adj, filt_features, w);
  if (p < 1) throw PreconditionError("walk length p must be >= 1");
  const Matrix s = sub_features * filt_features.transpose();
  Matrix t = s;
  for (int k = 0; k < p; ++k) t = sub_adj * t * filt_adj.transpose();
  return detail::vec(s).dot(detail::apply_w(w, detail::vec(t)));
}

inline double rw_kernel(const PaddedSubgraph& sub, const Matrix& filt_adj, const Matrix& filt_features,
                        const Matrix& w, int p) {
  return rw_kernel(sub.adjacency, sub.features, filt_adj, filt_features, w, p);
}

struct KernelGrad {
  Matrix w;         // same shape as W
  Matrix filt_adj;  // n_filt x n_filt
  Matrix filt_features;
  Matrix sub_features;  // n_sub x f
};

/// Accumulates upstream * dK into `grad` for W, the filter adjacency, the filter
/// features and the subgraph features (the subgraph adjacency is data).
inline void rw_kernel_backward(const Matrix& a, const Matrix& x, const Matrix& b, const Matrix& y,
                               const Matrix& w, int p, double upstream, KernelGrad& grad,
                               bool want_sub_features) {
  const Matrix s = x * y.transpose();
  std::vector<Matrix> t(p + 1);
  t[0] = s;
  for (int k = 1; k <= p; ++k) t[k] = a * t[k - 1] * b.transpose();
  const auto sv = detail::vec(s);
  const auto tv = detail::vec(t[p]);
  const Eigen::Index n = sv.size();

  if (is_diagonal_weight(w, n))
    grad.w.col(0) += upstream * sv.cwiseProduct(tv);
  else
    grad.w.noalias() += upstream * sv * tv.transpose();

  // Adjoint of S -> A S Bᵀ is G -> Aᵀ G B.
  const Vector u = upstream * detail::apply_w_transpose(w, sv);
  Matrix g = Eigen::Map<const Matrix>(u.data(), s.rows(), s.cols());
  for (int k = p; k >= 1; --k) {
    const Matrix at = a * t[k - 1];
    grad.filt_adj.noalias() += g.transpose() * at;
    g = a.transpose() * g * b;
  }
  const Vector direct = upstream * detail::apply_w(w, tv);
  Matrix ds = g + Eigen::Map<const Matrix>(direct.data(), s.rows(), s.cols());
  grad.filt_features.noalias() += ds.transpose() * x;
  if (want_sub_features) grad.sub_features.noalias() += ds * y;
}

/// Indices of the g largest scores (ties to the smaller index), ascending.
inline std::vector<int> topg_select(std::span<const double> scores, int g) {
  if (g < 1 || static_cast<std::size_t>(g) > scores.size())
    throw InvalidG("g=" + std::to_string(g) + " with " + std::to_string(scores.size()) + " scores");
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int i, int j) { return scores[i] > scores[j]; });
  idx.resize(g);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// ---------------------------------------------------------------------------
// Model

struct ModelConfig {
  int d = kDefaultDimension;
  int n_filters = 16;
  int p = 2;
  int g = 4;
  int hop = 1;
  int n_sub = 8;
  int n_filt = 6;
  int layers = 2;
  int hidden = 32;
  int classes = 3;
  bool diagonal_w = false;
  double w_init = 1.0;  // W starts as (w_init / (n_sub * n_filt)) * I
  RelationWeights relations;

  int product_dim() const { return n_sub * n_filt; }
  int feature_dim(int layer) const { return layer == 0 ? d : g; }
  int readout_dim() const { return d + layers * g; }

  void validate() const {
    if (d < 1 || n_filters < 1 || p < 1 || hop < 0 || n_sub < 1 || n_filt < 1 || layers < 1 ||
        hidden < 1 || classes < 2 || !(w_init > 0))
      throw ConfigError("model hyperparameters must be positive");
    if (g < 1 || g > n_filters) throw InvalidG("g must lie in [1, n_filters]");
  }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"d", c.d},
          {"n_filters", c.n_filters},
          {"p", c.p},
          {"g", c.g},
          {"hop", c.hop},
          {"n_sub", c.n_sub},
          {"n_filt", c.n_filt},
          {"layers", c.layers},
          {"hidden", c.hidden},
          {"classes", c.classes},
          {"diagonal_w", c.diagonal_w},
          {"w_init", c.w_init},
          {"relation_weights",
           {{"implies", c.relations.implies},
            {"conjunction", c.relations.conjunction},
            {"disjunction", c.relations.disjunction},
            {"instance_of", c.relations.instance_of}}}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d = j.at("d");
  c.n_filters = j.at("n_filters");
  c.p = j.at("p");
  c.g = j.at("g");
  c.hop = j.at("hop");
  c.n_sub = j.at("n_sub");
  c.n_filt = j.at("n_filt");
  c.layers = j.at("layers");
  c.hidden = j.at("hidden");
  c.classes = j.at("classes");
  c.diagonal_w = j.at("diagonal_w");
  c.w_init = j.value("w_init", 1.0);
  const auto& r = j.at("relation_weights");
  c.relations = {r.at("implies"), r.at("conjunction"), r.at("disjunction"), r.at("instance_of")};
  return c;
}

struct KernelFilterParams {
  Matrix adjacency;  // n_filt x n_filt
  Matrix features;   // n_filt x f_layer
  int valid = 0;     // rows/cols beyond this are padding and stay zero
  int center = -1;   // schema node id, -1 for random filters
};

struct KernelLayerParams {
  std::vector<KernelFilterParams> filters;
  Matrix w;
};

struct ModelParams {
  ModelConfig config;
  std::vector<KernelLayerParams> layers;
  Matrix hidden_w;  // h x readout_dim
  Matrix hidden_b;  // h x 1
  Matrix out_w;     // C x h
  Matrix out_b;     // C x 1

  /// Visits every trainable tensor with a stable name, in a fixed order.
  template <typename Self, typename F>
  static void visit(Self& self, F&& fn) {
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      for (std::size_t i = 0; i < self.layers[l].filters.size(); ++i) {
        const std::string fp = pre + "filter" + std::to_string(i) + ".";
        fn(fp + "adjacency", self.layers[l].filters[i].adjacency);
        fn(fp + "features", self.layers[l].filters[i].features);
      }
      fn(pre + "w", self.layers[l].w);
    }
    fn("hidden.w", self.hidden_w);
    fn("hidden.b", self.hidden_b);
    fn("out.w", self.out_w);
    fn("out.b", self.out_b);
  }
  template <typename F>
  void for_each_tensor(F&& fn) { visit(*this, std::forward<F>(fn)); }
  template <typename F>
  void for_each_tensor(F&& fn) const { visit(*this, std::forward<F>(fn)); }

  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.for_each_tensor([](const std::string&, Matrix& m) { m.setZero(); });
    return z;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
  }
};

namespace detail {

inline Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
  return m;
}

inline Matrix identity_weight(const ModelConfig& c) {
  const int n = c.product_dim();
  const double scale = c.w_init / n;
  return c.diagonal_w ? Matrix(scale * Matrix::Ones(n, 1)) : Matrix(scale * Matrix::Identity(n, n));
}

}  // namespace detail

/// Builds a model. Layer-0 filters come from the schema filters unless
/// `schema_filters` is empty, in which case they are random (features drawn
/// N(0, 1/d), random symmetric weighted adjacency over all n_filt nodes).
/// Filters of later layers reuse the layer-0 structure with N(0, 0.1²)
/// features. Every W starts at (w_init / (n_sub * n_filt)) times the identity.
inline ModelParams init_model(const ModelConfig& config, std::span<const SchemaFilter> schema_filters,
                              std::uint64_t seed) {
  config.validate();
  Rng rng(seed ^ 0x5eed5eed5eedULL);
  ModelParams m;
  m.config = config;
  m.layers.resize(config.layers);
  const bool random = schema_filters.empty();
  if (!random && static_cast<int>(schema_filters.size()) < config.n_filters)
    throw InvalidFilterCount("model needs " + std::to_string(config.n_filters) +
                             " filters, library provided " + std::to_string(schema_filters.size()));

  auto& first = m.layers[0];
  for (int i = 0; i < config.n_filters; ++i) {
    KernelFilterParams f;
    f.adjacency = Matrix::Zero(config.n_filt, config.n_filt);
    f.features = Matrix::Zero(config.n_filt, config.d);
    if (random) {
      f.valid = config.n_filt;
      f.features = detail::random_normal(config.n_filt, config.d, 1.0 / std::sqrt(config.d), rng);
      for (int a = 0; a < config.n_filt; ++a)
        for (int b = a + 1; b < config.n_filt; ++b)
          if (rng.uniform() < 0.5) f.adjacency(a, b) = f.adjacency(b, a) = rng.uniform();
    } else {
      const SchemaFilter& sf = schema_filters[i];
      if (sf.features.cols() != config.d)
        throw DimensionMismatch("schema filter features have dimension " +
                                std::to_string(sf.features.cols()) + ", model d is " +
                                std::to_string(config.d));
      f.valid = static_cast<int>(std::min<Eigen::Index>(sf.node_ids.size(), config.n_filt));
      f.center = sf.center;
      f.features.topRows(f.valid) = sf.features.topRows(f.valid);
      f.adjacency.topLeftCorner(f.valid, f.valid) = sf.adjacency.topLeftCorner(f.valid, f.valid);
    }
    first.filters.push_back(std::move(f));
  }
  first.w = detail::identity_weight(config);

  for (int l = 1; l < config.layers; ++l) {
    auto& layer = m.layers[l];
    for (int i = 0; i < config.n_filters; ++i) {
      KernelFilterParams f;
      const auto& base = first.filters[i];
      f.valid = base.valid;
      f.center = base.center;
      f.adjacency = base.adjacency;
      f.features = Matrix::Zero(config.n_filt, config.g);
      f.features.topRows(f.valid) = detail::random_normal(f.valid, config.g, 0.1, rng);
      layer.filters.push_back(std::move(f));
    }
    layer.w = detail::identity_weight(config);
  }

  const int in = config.readout_dim();
  m.hidden_w = detail::random_normal(config.hidden, in, std::sqrt(2.0 / in), rng);
  m.hidden_b = Matrix::Zero(config.hidden, 1);
  m.out_w = detail::random_normal(config.classes, config.hidden, std::sqrt(1.0 / config.hidden), rng);
  m.out_b = Matrix::Zero(config.classes, 1);
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward

/// Per-graph structure that does not change during training.
struct PreparedGraph {
  Matrix features;                       // |V| x d
  std::vector<PaddedSubgraph> subgraphs;  // one per node; features hold layer-0 rows
};

inline PreparedGraph prepare_graph(const FolGraph& g, const ModelConfig& c) {
  if (g.size() == 0) throw EmptyGraph("graph has no nodes");
  PreparedGraph pg;
  pg.features.resize(static_cast<Eigen::Index>(g.size()), c.d);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.nodes[i].embedding.size() != c.d)
      throw DimensionMismatch("node " + std::to_string(i) + " has embedding dimension " +
                              std::to_string(g.nodes[i].embedding.size()) + ", model d is " +
                              std::to_string(c.d));
    pg.features.row(static_cast<Eigen::Index>(i)) = g.nodes[i].embedding.transpose();
  }
  const Matrix full = collapsed_adjacency(g, c.relations);
  pg.subgraphs.reserve(g.size());
  for (std::size_t v = 0; v < g.size(); ++v) {
    PaddedSubgraph sub;
    sub.nodes = khop_nodes(g, static_cast<int>(v), c.hop);
    if (static_cast<int>(sub.nodes.size()) > c.n_sub) sub.nodes.resize(c.n_sub);
    sub.valid_count = static_cast<int>(sub.nodes.size());
    sub.adjacency = Matrix::Zero(c.n_sub, c.n_sub);
    for (int i = 0; i < sub.valid_count; ++i)
      for (int j = 0; j < sub.valid_count; ++j) sub.adjacency(i, j) = full(sub.nodes[i], sub.nodes[j]);
    sub.features = Matrix::Zero(c.n_sub, c.d);
    for (int i = 0; i < sub.valid_count; ++i) sub.features.row(i) = pg.features.row(sub.nodes[i]);
    pg.subgraphs.push_back(std::move(sub));
  }
  return pg;
}

inline Matrix gather_rows(const PaddedSubgraph& sub, const Matrix& node_features, int n_sub) {
  Matrix x = Matrix::Zero(n_sub, node_features.cols());
  for (int i = 0; i < sub.valid_count; ++i) x.row(i) = node_features.row(sub.nodes[i]);
  return x;
}

struct LayerOutput {
  Matrix features;                         // |V| x g
  Matrix scores;                           // |V| x n_filters
  std::vector<std::vector<int>> selected;  // per node, g filter indices
};

/// One kernel layer: all filters are scored for every node, the top g are
/// kept and their kernel values (in filter-index order) form the output row.
inline LayerOutput layer_forward(const PreparedGraph& pg, const Matrix& node_features,
                                 const KernelLayerParams& layer, const ModelConfig& c) {
  const auto n = static_cast<Eigen::Index>(pg.subgraphs.size());
  const auto nf = static_cast<Eigen::Index>(layer.filters.size());
  if (node_features.rows() != n) throw ShapeMismatch("feature rows do not match node count");
  if (c.g > nf) throw InvalidG("g exceeds the filter count");
  const Eigen::Index f = node_features.cols();
  // Filters stacked so that one GEMM yields S for all of them.
  Matrix stacked(nf * c.n_filt, f);
  for (Eigen::Index i = 0; i < nf; ++i) {
    const auto& flt = layer.filters[i];
    if (flt.features.cols() != f || flt.features.rows() != c.n_filt)
      throw ShapeMismatch("filter feature shape does not match layer input");
    stacked.middleRows(i * c.n_filt, c.n_filt) = flt.features;
  }
  const Eigen::Index pd = c.product_dim();
  if (layer.w.rows() != pd) throw ShapeMismatch("W does not match n_sub * n_filt");

  LayerOutput out;
  out.features.resize(n, c.g);
  out.scores.resize(n, nf);
  out.selected.resize(n);
  for (Eigen::Index v = 0; v < n; ++v) {
    const PaddedSubgraph& sub = pg.subgraphs[v];
    const Matrix x = gather_rows(sub, node_features, c.n_sub);
    const Matrix s_all = x * stacked.transpose();  // n_sub x (nf * n_filt)
    Matrix t_all = s_all;
    for (int k = 0; k < c.p; ++k) t_all = sub.adjacency * t_all;  // left factor, all filters at once
    for (Eigen::Index i = 0; i < nf; ++i) {
      const Matrix s = s_all.middleCols(i * c.n_filt, c.n_filt);
      // A^p S (Bᵀ)^p is the p-fold application of S -> A S Bᵀ.
      Matrix t = t_all.middleCols(i * c.n_filt, c.n_filt);
      for (int k = 0; k < c.p; ++k) t = t * layer.filters[i].adjacency.transpose();
      out.scores(v, i) = detail::vec(s).dot(detail::apply_w(layer.w, detail::vec(t)));
    }
    const Vector row = out.scores.row(v).transpose();
    if (!row.allFinite()) throw Error("NonFiniteKernel", "kernel score is not finite");
    out.selected[v] = topg_select(std::span<const double>(row.data(), row.size()), c.g);
    for (int j = 0; j < c.g; ++j) out.features(v, j) = out.scores(v, out.selected[v][j]);
  }
  return out;
}

/// Concatenated column sums of every layer's node features (layer 0 = raw
/// embeddings).
inline Vector readout(std::span<const Matrix> layer_features) {
  if (layer_features.size() < 2) throw ShapeMismatch("readout needs layer 0 and at least one kernel layer");
  Eigen::Index dim = 0;
  for (const auto& f : layer_features) dim += f.cols();
  Vector phi(dim);
  Eigen::Index off = 0;
  for (const auto& f : layer_features) {
    if (f.rows() != layer_features[0].rows()) throw ShapeMismatch("layers disagree on node count");
    phi.segment(off, f.cols()) = f.colwise().sum().transpose();
    off += f.cols();
  }
  return phi;
}

inline Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

struct ForwardState {
  std::vector<Matrix> layer_features;            // F_0 .. F_L
  std::vector<Matrix> scores;                    // per kernel layer, |V| x n_filters
  std::vector<std::vector<std::vector<int>>> selected;  // [layer][node] -> filter indices
  Vector phi;
  Vector hidden_pre;
  Vector hidden;
  Vector logits;
  Vector probabilities;
  bool valid = false;
};

inline ForwardState forward(const PreparedGraph& pg, const ModelParams& model) {
  const ModelConfig& c = model.config;
  ForwardState st;
  st.layer_features.push_back(pg.features);
  for (int l = 0; l < c.layers; ++l) {
    LayerOutput out = layer_forward(pg, st.layer_features.back(), model.layers[l], c);
    st.layer_features.push_back(std::move(out.features));
    st.scores.push_back(std::move(out.scores));
    st.selected.push_back(std::move(out.selected));
  }
  st.phi = readout(st.layer_features);
  if (st.phi.size() != model.hidden_w.cols()) throw ShapeMismatch("readout dimension mismatch");
  st.hidden_pre = model.hidden_w * st.phi + model.hidden_b.col(0);
  st.hidden = st.hidden_pre.cwiseMax(0.0);
  st.logits = model.out_w * st.hidden + model.out_b.col(0);
  st.probabilities = softmax(st.logits);
  st.valid = true;
  return st;
}

inline ForwardState forward(const FolGraph& g, const ModelParams& model) {
  return forward(prepare_graph(g, model.config), model);
}

/// Cross-entropy of the gold class, computed from logits.
inline double cross_entropy(const ForwardState& st, int gold) {
  const double m = st.logits.maxCoeff();
  const double lse = m + std::log((st.logits.array() - m).exp().sum());
  return lse - st.logits[gold];
}

/// Exact reverse-mode gradients of the cross-entropy loss. Top-g selection is
/// treated as fixed: only the selected filters receive gradient. Padding rows
/// and columns of filters are masked.
inline ModelParams backward(const PreparedGraph& pg, const ModelParams& model, const ForwardState& st,
                            int gold) {
  const ModelConfig& c = model.config;
  if (!st.valid || st.layer_features.size() != static_cast<std::size_t>(c.layers + 1) ||
      st.layer_features[0].rows() != pg.features.rows())
    throw StaleCache("backward called without a matching forward pass");
  if (gold < 0 || gold >= c.classes) throw PreconditionError("gold label out of range");

  ModelParams grad = model.zeros_like();
  Vector dlogits = st.probabilities;
  dlogits[gold] -= 1.0;
  grad.out_w = dlogits * st.hidden.transpose();
  grad.out_b.col(0) = dlogits;
  const Vector dhidden = model.out_w.transpose() * dlogits;
  const Vector dpre = dhidden.cwiseProduct((st.hidden_pre.array() > 0.0).cast<double>().matrix());
  grad.hidden_w = dpre * st.phi.transpose();
  grad.hidden_b.col(0) = dpre;
  const Vector dphi = model.hidden_w.transpose() * dpre;

  const auto n = pg.features.rows();
  // Gradient w.r.t. the output of layer l (l >= 1), seeded by the readout.
  auto readout_grad = [&](int l) {
    const Eigen::Index off = c.d + (l - 1) * c.g;
    Matrix d(n, c.g);
    for (Eigen::Index v = 0; v < n; ++v) d.row(v) = dphi.segment(off, c.g).transpose();
    return d;
  };

  Matrix dfeat = readout_grad(c.layers);
  for (int l = c.layers; l >= 1; --l) {
    const auto& layer = model.layers[l - 1];
    auto& glayer = grad.layers[l - 1];
    const Matrix& input = st.layer_features[l - 1];
    const bool propagate = l - 1 >= 1;
    Matrix dinput = propagate ? readout_grad(l - 1) : Matrix();
    for (Eigen::Index v = 0; v < n; ++v) {
      const PaddedSubgraph& sub = pg.subgraphs[v];
      const Matrix x = gather_rows(sub, input, c.n_sub);
      KernelGrad kg;
      kg.w = Matrix::Zero(glayer.w.rows(), glayer.w.cols());
      kg.sub_features = Matrix::Zero(c.n_sub, input.cols());
      for (int j = 0; j < c.g; ++j) {
        const double up = dfeat(v, j);
        if (up == 0.0) continue;
        const int fi = st.selected[l - 1][v][j];
        const auto& flt = layer.filters[fi];
        kg.filt_adj = Matrix::Zero(c.n_filt, c.n_filt);
        kg.filt_features = Matrix::Zero(c.n_filt, input.cols());
        rw_kernel_backward(sub.adjacency, x, flt.adjacency, flt.features, layer.w, c.p, up, kg,
                           propagate);
        auto& gf = glayer.filters[fi];
        gf.adjacency.topLeftCorner(flt.valid, flt.valid) +=
            kg.filt_adj.topLeftCorner(flt.valid, flt.valid);
        gf.features.topRows(flt.valid) += kg.filt_features.topRows(flt.valid);
      }
      glayer.w += kg.w;
      if (propagate)
        for (int i = 0; i < sub.valid_count; ++i) dinput.row(sub.nodes[i]) += kg.sub_features.row(i);
    }
    if (propagate) dfeat = std::move(dinput);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Schema augmentation

/// Links every predicate node to the schema node of its nearest centroid with
/// an InstanceOf edge, materializing each schema node once (features are the
/// schema summary embedding). Nodes that already carry an InstanceOf edge are
/// left alone, so augmenting twice is a no-op.
inline FolGraph augment_graph(const FolGraph& graph, const SchemaLibrary& lib) {
  FolGraph g = graph;
  const auto centroids = lib.centroids();
  if (centroids.empty()) throw PreconditionError("schema library has no nodes");
  std::map<int, int> schema_node;  // cluster id -> node index
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (g.nodes[i].schema && g.nodes[i].cluster) schema_node[*g.nodes[i].cluster] = static_cast<int>(i);
  std::vector<bool> linked(g.nodes.size(), false);
  for (const auto& e : g.edges)
    if (e.relation == Relation::InstanceOf) linked[e.src] = true;

  const std::size_t original = g.nodes.size();
  for (std::size_t i = 0; i < original; ++i) {
    if (g.nodes[i].schema || linked[i]) continue;
    const auto& emb = g.nodes[i].embedding;
    if (emb.size() != lib.d)
      throw DimensionMismatch("node embedding dimension " + std::to_string(emb.size()) +
                              " vs library d " + std::to_string(lib.d));
    const int cluster = assign_to_cluster(emb, centroids);
    auto it = schema_node.find(cluster);
    if (it == schema_node.end()) {
      FolNode sn;
      sn.predicate.name = "Schema";
      sn.predicate.args = {std::to_string(cluster)};
      sn.predicate.surface = canonical_predicate_string(sn.predicate);
      sn.embedding = lib.graph.nodes[cluster].summary_embedding;
      sn.cluster = cluster;
      sn.schema = true;
      g.nodes.push_back(std::move(sn));
      it = schema_node.emplace(cluster, static_cast<int>(g.nodes.size() - 1)).first;
    }
    g.nodes[i].cluster = cluster;
    g.add_edge(static_cast<int>(i), it->second, Relation::InstanceOf);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams model;
  std::string library_fingerprint;  // empty when trained without a library
  std::string config_fingerprint;
  std::uint64_t seed = 0;
  std::string label_set;
  bool random_filters = false;
  bool skip_augmentation = false;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
  nlohmann::json tensors = nlohmann::json::object();
  ck.model.for_each_tensor([&](const std::string& name, const Matrix& m) {
    tensors[name] = {{"rows", m.rows()},
                     {"cols", m.cols()},
                     {"data", std::vector<double>(m.data(), m.data() + m.size())}};
  });
  nlohmann::json filters = nlohmann::json::array();
  for (const auto& layer : ck.model.layers) {
    nlohmann::json lf = nlohmann::json::array();
    for (const auto& f : layer.filters) lf.push_back({{"valid", f.valid}, {"center", f.center}});
    filters.push_back(std::move(lf));
  }
  return {{"version", kCheckpointVersion},
          {"config", model_config_to_json(ck.model.config)},
          {"library_fingerprint", ck.library_fingerprint},
          {"config_fingerprint", ck.config_fingerprint},
          {"seed", ck.seed},
          {"label_set", ck.label_set},
          {"ablation", {{"random_filters", ck.random_filters}, {"skip_augmentation", ck.skip_augmentation}}},
          {"filters", filters},
          {"tensors", tensors}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ck;
  try {
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw SchemaFormatError("version", "unsupported checkpoint version " +
                                             std::to_string(j.at("version").get<int>()));
    ck.model.config = model_config_from_json(j.at("config"));
    ck.library_fingerprint = j.at("library_fingerprint");
    ck.config_fingerprint = j.at("config_fingerprint");
    ck.seed = j.at("seed");
    ck.label_set = j.at("label_set");
    ck.random_filters = j.at("ablation").at("random_filters");
    ck.skip_augmentation = j.at("ablation").at("skip_augmentation");
    const auto& c = ck.model.config;
    ck.model.layers.resize(c.layers);
    const auto& meta = j.at("filters");
    for (int l = 0; l < c.layers; ++l) {
      ck.model.layers[l].filters.resize(meta.at(l).size());
      for (std::size_t i = 0; i < meta.at(l).size(); ++i) {
        ck.model.layers[l].filters[i].valid = meta.at(l).at(i).at("valid");
        ck.model.layers[l].filters[i].center = meta.at(l).at(i).at("center");
      }
    }
    const auto& tensors = j.at("tensors");
    ck.model.for_each_tensor([&](const std::string& name, Matrix& m) {
      if (!tensors.contains(name)) throw SchemaFormatError("tensors." + name, "missing tensor");
      const auto& t = tensors.at(name);
      const auto data = t.at("data").get<std::vector<double>>();
      const Eigen::Index rows = t.at("rows");
      const Eigen::Index cols = t.at("cols");
      if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw SchemaFormatError("tensors." + name, "data size does not match shape");
      m = Eigen::Map<const Matrix>(data.data(), rows, cols);
    });
  } catch (const nlohmann::json::exception& e) {
    throw SchemaFormatError("checkpoint", e.what());
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << checkpoint_to_json(ck).dump() << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

/// Loads a checkpoint; when `library` is given its fingerprint must match the
/// one recorded at training time unless `force` is set.
inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const SchemaLibrary* library = nullptr, bool force = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto j = nlohmann::json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw SchemaFormatError("<document>", "checkpoint is not valid JSON");
  Checkpoint ck = checkpoint_from_json(j);
  if (library && !force && !ck.library_fingerprint.empty()) {
    const std::string fp = library_fingerprint(*library);
    if (fp != ck.library_fingerprint)
      throw FingerprintMismatch("checkpoint was trained against library " +
                                ck.library_fingerprint.substr(0, 12) + ", supplied library is " +
                                fp.substr(0, 12) + " (use --force to override)");
  }
  return ck;
}

}  // namespace cirf
