#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cirf/dataset.hpp"
#include "cirf/error.hpp"

namespace cirf {

enum class F1Mode { FavorAgainstOnly, AllClasses };

inline const char* f1_mode_name(F1Mode m) {
  return m == F1Mode::FavorAgainstOnly ? "favor_against_only" : "all_classes";
}

/// The averaging convention used for each dataset family: stance-only F_avg
/// for Favor/Against/None data, all-class macro-F1 for Pro/Con/Neutral data.
inline F1Mode primary_mode(LabelSet s) {
  return s == LabelSet::FavorAgainstNone ? F1Mode::FavorAgainstOnly : F1Mode::AllClasses;
}

struct F1Report {
  F1Mode mode = F1Mode::FavorAgainstOnly;
  std::vector<double> per_class;  // F1 of every class, index-aligned with labels
  std::vector<bool> absent;       // class missing from both golds and preds
  double f_avg = 0.0;
  double accuracy = 0.0;
};

/// Per-class F1 = 2PR / (P + R), 0 when P + R = 0. FavorAgainstOnly averages
/// classes 0 and 1; AllClasses averages every class.
inline F1Report macro_f1(std::span<const int> preds, std::span<const int> golds, F1Mode mode,
                         int classes = 3) {
  if (preds.size() != golds.size())
    throw LengthMismatch(std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(golds.size()) + " golds");
  std::vector<double> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  std::vector<int> seen(classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i];
    const int g = golds[i];
    if (p < 0 || p >= classes || g < 0 || g >= classes)
      throw PreconditionError("label index outside the declared label set");
    ++seen[p];
    ++seen[g];
    if (p == g) {
      ++tp[p];
      ++correct;
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  F1Report r;
  r.mode = mode;
  r.per_class.resize(classes);
  r.absent.resize(classes);
  for (int c = 0; c < classes; ++c) {
    const double precision = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
    const double recall = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
    r.per_class[c] = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    r.absent[c] = seen[c] == 0;
  }
  const int averaged = mode == F1Mode::FavorAgainstOnly ? 2 : classes;
  double sum = 0.0;
  for (int c = 0; c < averaged; ++c) sum += r.per_class[c];
  r.f_avg = sum / averaged;
  r.accuracy = preds.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(preds.size());
  return r;
}

struct TrialSummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

inline TrialSummary summarize_trials(std::span<const double> scores) {
  TrialSummary s;
  if (scores.empty()) return s;
  for (double v : scores) s.mean += v;
  s.mean /= static_cast<double>(scores.size());
  for (double v : scores) s.std += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(scores.size()));
  return s;
}

}  // namespace cirf
