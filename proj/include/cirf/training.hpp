#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "cirf/dataset.hpp"
#include "cirf/error.hpp"
#include "cirf/hash.hpp"
#include "cirf/kernel.hpp"
#include "cirf/metrics.hpp"
#include "cirf/optimizer.hpp"

namespace cirf {

struct TrainConfig {
  int batch_size = 32;
  double lr = 5e-4;
  double weight_decay = 0.01;
  int max_epochs = 20;
  int patience = 10;  // consecutive non-improving validations; 0 disables early stopping
  double val_interval = 0.2;
  std::uint64_t seed = 13;
  int trials = 3;
  double clip_norm = 0.0;  // 0 = off
  int threads = 1;

  void validate() const {
    if (batch_size < 1 || lr <= 0 || max_epochs < 1 || patience < 0 || trials < 1 || threads < 1 ||
        weight_decay < 0 || clip_norm < 0)
      throw ConfigError("training hyperparameters must be positive");
    if (!(val_interval > 0.0 && val_interval <= 1.0))
      throw ConfigError("validation interval must lie in (0, 1]");
  }
};

struct TrainingExample {
  PreparedGraph graph;
  int label = 0;
  std::string target;
};

struct ValidationRecord {
  int step = 0;
  int epoch = 0;
  double train_loss = 0.0;  // mean loss of the batches since the previous validation
  double dev_loss = 0.0;
  double dev_f1 = 0.0;
  double dev_accuracy = 0.0;
  bool improved = false;
};

inline nlohmann::json validation_to_json(const ValidationRecord& r) {
  return {{"step", r.step},         {"epoch", r.epoch},       {"train_loss", r.train_loss},
          {"dev_loss", r.dev_loss}, {"dev_f1", r.dev_f1},     {"dev_accuracy", r.dev_accuracy},
          {"improved", r.improved}};
}

struct TrainResult {
  ModelParams best;
  std::vector<ValidationRecord> log;
  int best_step = 0;
  double best_dev_loss = 0.0;
  int steps = 0;
  int epochs = 0;
  bool stopped_early = false;
};

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers; results must be
/// written to per-index slots so ordering never depends on scheduling.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

struct Prediction {
  int pred = 0;
  Vector probabilities;
  double loss = 0.0;
  std::vector<std::vector<std::vector<int>>> selected;  // [layer][node] -> filter indices
};

inline std::vector<Prediction> predict_all(std::span<const TrainingExample> examples,
                                           const ModelParams& model, int threads = 1) {
  std::vector<Prediction> out(examples.size());
  detail::parallel_for(examples.size(), threads, [&](std::size_t i) {
    const ForwardState st = forward(examples[i].graph, model);
    Prediction& p = out[i];
    p.probabilities = st.probabilities;
    Eigen::Index arg = 0;
    st.probabilities.maxCoeff(&arg);
    p.pred = static_cast<int>(arg);
    p.loss = cross_entropy(st, examples[i].label);
    p.selected = st.selected;
  });
  return out;
}

struct DevScore {
  double loss = 0.0;
  F1Report report;
};

inline DevScore score_examples(std::span<const TrainingExample> examples, const ModelParams& model,
                               F1Mode mode, int threads) {
  if (examples.empty()) throw EmptySet("no examples to score");
  const auto preds = predict_all(examples, model, threads);
  std::vector<int> p, g;
  DevScore s;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p.push_back(preds[i].pred);
    g.push_back(examples[i].label);
    s.loss += preds[i].loss;
  }
  s.loss /= static_cast<double>(preds.size());
  s.report = macro_f1(p, g, mode, model.config.classes);
  return s;
}

/// Mini-batch AdamW on the cross-entropy loss. Validates every
/// ⌈val_interval · steps_per_epoch⌉ steps, keeps the parameters with the lowest
/// dev loss, and stops after `patience` consecutive validations without
/// improvement (or after max_epochs).
inline TrainResult train_model(ModelParams model, std::span<const TrainingExample> train,
                               std::span<const TrainingExample> dev, const TrainConfig& cfg, F1Mode mode,
                               const std::function<void(const ValidationRecord&)>& on_validation = {}) {
  cfg.validate();
  if (train.empty()) throw EmptySet("training set is empty");
  if (dev.empty()) throw EmptySet("dev set is empty");
  for (const auto& ex : train)
    if (ex.label < 0 || ex.label >= model.config.classes) throw PreconditionError("label out of range");

  AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  Rng rng(cfg.seed ^ 0x7a11u);
  const std::size_t n = train.size();
  const int steps_per_epoch = static_cast<int>((n + cfg.batch_size - 1) / cfg.batch_size);
  const int interval =
      std::max(1, static_cast<int>(std::ceil(cfg.val_interval * steps_per_epoch - 1e-12)));

  TrainResult res;
  res.best = model;
  res.best_dev_loss = std::numeric_limits<double>::infinity();
  int bad = 0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::vector<std::size_t> order(n);
  std::size_t batch_index = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    res.epochs = epoch + 1;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const std::size_t bs = end - start;
      std::vector<ModelParams> grads(bs);
      std::vector<double> losses(bs);
      detail::parallel_for(bs, cfg.threads, [&](std::size_t k) {
        const TrainingExample& ex = train[order[start + k]];
        const ForwardState st = forward(ex.graph, model);
        losses[k] = cross_entropy(st, ex.label);
        grads[k] = backward(ex.graph, model, st, ex.label);
      });
      ModelParams total = model.zeros_like();
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < bs; ++k) {
        batch_loss += losses[k];
        add_scaled(total, grads[k], 1.0 / static_cast<double>(bs));
      }
      batch_loss /= static_cast<double>(bs);
      if (!std::isfinite(batch_loss)) throw NonFiniteLoss(batch_index);
      if (cfg.clip_norm > 0) {
        const double norm = global_norm(total);
        if (norm > cfg.clip_norm) add_scaled(total, total, cfg.clip_norm / norm - 1.0);
      }
      opt.step(model, total);
      if (!model.all_finite()) throw NonFiniteLoss(batch_index);
      ++res.steps;
      loss_sum += batch_loss;
      ++loss_count;

      if (res.steps % interval == 0) {
        const DevScore ds = score_examples(dev, model, mode, cfg.threads);
        ValidationRecord rec;
        rec.step = res.steps;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(loss_count);
        rec.dev_loss = ds.loss;
        rec.dev_f1 = ds.report.f_avg;
        rec.dev_accuracy = ds.report.accuracy;
        loss_sum = 0.0;
        loss_count = 0;
        if (ds.loss < res.best_dev_loss) {
          res.best_dev_loss = ds.loss;
          res.best = model;
          res.best_step = res.steps;
          rec.improved = true;
          bad = 0;
        } else {
          ++bad;
        }
        res.log.push_back(rec);
        if (on_validation) on_validation(rec);
        if (cfg.patience > 0 && bad >= cfg.patience) {
          res.stopped_early = true;
          return res;
        }
      }
    }
  }
  return res;
}

struct EvalReport {
  F1Report primary;
  F1Report favor_against;
  F1Report all_classes;
  std::map<std::string, F1Report> per_target;  // scored with the primary mode
  std::vector<Prediction> predictions;
  double loss = 0.0;
};

inline EvalReport evaluate(std::span<const TrainingExample> examples, const ModelParams& model, F1Mode mode,
                           int threads = 1) {
  if (examples.empty()) throw EmptySet("evaluation set is empty");
  EvalReport r;
  r.predictions = predict_all(examples, model, threads);
  std::vector<int> p, g;
  std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> by_target;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    p.push_back(r.predictions[i].pred);
    g.push_back(examples[i].label);
    by_target[examples[i].target].first.push_back(r.predictions[i].pred);
    by_target[examples[i].target].second.push_back(examples[i].label);
    r.loss += r.predictions[i].loss;
  }
  r.loss /= static_cast<double>(examples.size());
  const int c = model.config.classes;
  r.favor_against = macro_f1(p, g, F1Mode::FavorAgainstOnly, c);
  r.all_classes = macro_f1(p, g, F1Mode::AllClasses, c);
  r.primary = mode == F1Mode::FavorAgainstOnly ? r.favor_against : r.all_classes;
  for (const auto& [target, pg] : by_target) r.per_target[target] = macro_f1(pg.first, pg.second, mode, c);
  return r;
}

inline nlohmann::json f1_report_to_json(const F1Report& r, LabelSet labels) {
  const auto names = label_names(labels);
  nlohmann::json per = nlohmann::json::object();
  nlohmann::json absent = nlohmann::json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    per[names.at(c)] = r.per_class[c];
    if (r.absent[c]) absent.push_back(names.at(c));
  }
  return {{"mode", f1_mode_name(r.mode)},
          {"per_class_f1", per},
          {"f_avg", r.f_avg},
          {"accuracy", r.accuracy},
          {"absent_classes", absent}};
}

}  // namespace cirf
