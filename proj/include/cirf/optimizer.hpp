#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cirf/error.hpp"
#include "cirf/kernel.hpp"

namespace cirf {

struct AdamWConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Collects pointers to every tensor of `m` in visiting order.
inline std::vector<Matrix*> tensor_list(ModelParams& m) {
  std::vector<Matrix*> out;
  m.for_each_tensor([&](const std::string&, Matrix& t) { out.push_back(&t); });
  return out;
}

inline std::vector<const Matrix*> tensor_list(const ModelParams& m) {
  std::vector<const Matrix*> out;
  m.for_each_tensor([&](const std::string&, const Matrix& t) { out.push_back(&t); });
  return out;
}

/// acc += scale * g, tensor by tensor.
inline void add_scaled(ModelParams& acc, const ModelParams& g, double scale) {
  auto a = tensor_list(acc);
  const auto b = tensor_list(g);
  if (a.size() != b.size()) throw ShapeMismatch("parameter sets differ");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols())
      throw ShapeMismatch("parameter tensor " + std::to_string(i) + " differs in shape");
    *a[i] += scale * *b[i];
  }
}

inline double global_norm(const ModelParams& g) {
  double sq = 0.0;
  for (const Matrix* t : tensor_list(g)) sq += t->squaredNorm();
  return std::sqrt(sq);
}

/// Adam with decoupled weight decay:
///   m ← β1 m + (1-β1) g,  v ← β2 v + (1-β2) g²
///   θ ← θ - lr·wd·θ - lr · m̂ / (√v̂ + ε)
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void step(ModelParams& params, const ModelParams& grad) {
    auto p = tensor_list(params);
    const auto g = tensor_list(grad);
    if (p.size() != g.size()) throw ShapeMismatch("gradient does not mirror the parameters");
    if (m_.empty()) {
      for (const Matrix* t : p) {
        m_.push_back(Matrix::Zero(t->rows(), t->cols()));
        v_.push_back(Matrix::Zero(t->rows(), t->cols()));
      }
    }
    if (m_.size() != p.size()) throw ShapeMismatch("optimizer state does not mirror the parameters");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
      Matrix& theta = *p[i];
      const Matrix& gi = *g[i];
      if (gi.rows() != theta.rows() || gi.cols() != theta.cols() || m_[i].rows() != theta.rows() ||
          m_[i].cols() != theta.cols())
        throw ShapeMismatch("tensor " + std::to_string(i) + " changed shape");
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * gi;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * gi.cwiseAbs2();
      if (cfg_.weight_decay != 0.0) theta *= 1.0 - cfg_.lr * cfg_.weight_decay;
      theta.array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
  }

  std::uint64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

 private:
  AdamWConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::uint64_t t_ = 0;
};

}  // namespace cirf
