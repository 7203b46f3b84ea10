#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "cirf/training.hpp"

using namespace cirf;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(int d = 6) {
  ModelConfig c;
  c.d = d;
  c.n_filters = 4;
  c.p = 1;
  c.g = 2;
  c.n_sub = 3;
  c.n_filt = 3;
  c.layers = 2;
  c.hidden = 8;
  return c;
}

/// Two-node graphs whose node embeddings point along the class axis plus noise.
std::vector<TrainingExample> separable_set(const ModelConfig& c, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.2);
  std::vector<TrainingExample> out;
  for (int i = 0; i < n; ++i) {
    const int label = i % 3;
    FolGraph g;
    for (int k = 0; k < 2; ++k) {
      FolNode node;
      node.predicate = {"N" + std::to_string(k), {"x"}, false, "N(x)"};
      node.embedding = Vector::Zero(c.d);
      for (int j = 0; j < c.d; ++j) node.embedding[j] = nd(rng);
      node.embedding[label] += 1.0;
      g.nodes.push_back(node);
    }
    g.add_edge(0, 1, Relation::Implies);
    out.push_back({prepare_graph(g, c), label, "t" + std::to_string(i % 2)});
  }
  return out;
}

double accuracy(std::span<const TrainingExample> set, const ModelParams& m) {
  const auto preds = predict_all(set, m);
  int ok = 0;
  for (std::size_t i = 0; i < set.size(); ++i) ok += preds[i].pred == set[i].label;
  return static_cast<double>(ok) / static_cast<double>(set.size());
}

fs::path temp_file(const std::string& name, const std::string& content) {
  const fs::path dir = fs::temp_directory_path() / ("cirf_training_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::ofstream(dir / name, std::ios::binary | std::ios::trunc) << content;
  return dir / name;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

TEST(MacroF1, HandComputedFixture) {
  // golds F,A,F,A; preds F,A,A,A: F1(F) = 2/3, F1(A) = 4/5.
  const std::vector<int> gold = {0, 1, 0, 1}, pred = {0, 1, 1, 1};
  const auto r = macro_f1(pred, gold, F1Mode::FavorAgainstOnly);
  EXPECT_NEAR(r.per_class[0], 2.0 / 3, 1e-12);
  EXPECT_NEAR(r.per_class[1], 4.0 / 5, 1e-12);
  EXPECT_NEAR(r.f_avg, (2.0 / 3 + 4.0 / 5) / 2, 1e-12);
  EXPECT_NEAR(r.f_avg, 0.7333, 1e-4);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
  EXPECT_TRUE(r.absent[2]);
  EXPECT_NEAR(macro_f1(pred, gold, F1Mode::AllClasses).f_avg, (2.0 / 3 + 4.0 / 5) / 3, 1e-12);
}

TEST(MacroF1, PerfectPredictions) {
  const std::vector<int> y = {0, 1, 2, 2, 1, 0};
  EXPECT_DOUBLE_EQ(macro_f1(y, y, F1Mode::FavorAgainstOnly).f_avg, 1.0);
  EXPECT_DOUBLE_EQ(macro_f1(y, y, F1Mode::AllClasses).f_avg, 1.0);
}

TEST(MacroF1, InvariantToExampleOrder) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<int> p(20), g(20);
    for (int i = 0; i < 20; ++i) p[i] = rng() % 3, g[i] = rng() % 3;
    const double base = macro_f1(p, g, F1Mode::AllClasses).f_avg;
    std::vector<int> idx(20);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<int> p2, g2;
    for (int i : idx) p2.push_back(p[i]), g2.push_back(g[i]);
    EXPECT_DOUBLE_EQ(macro_f1(p2, g2, F1Mode::AllClasses).f_avg, base);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 1.0);
  }
}

TEST(MacroF1, Errors) {
  const std::vector<int> a = {0, 1}, b = {0};
  EXPECT_THROW(macro_f1(a, b, F1Mode::AllClasses), LengthMismatch);
  const std::vector<int> bad = {0, 5};
  EXPECT_THROW(macro_f1(bad, a, F1Mode::AllClasses), PreconditionError);
}

TEST(TrialSummary, MeanAndPopulationStd) {
  const std::vector<double> s = {0.7, 0.8, 0.9};
  const auto r = summarize_trials(s);
  EXPECT_NEAR(r.mean, (0.7 + 0.8 + 0.9) / 3, 1e-9);
  EXPECT_NEAR(r.std, std::sqrt(0.02 / 3), 1e-12);
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(AdamW, FirstStepOracle) {
  ModelParams p = init_model(tiny_config(), {}, 1);
  const ModelParams before = p;
  ModelParams g = p.zeros_like();
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  g.for_each_tensor([&](const std::string&, Matrix& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = nd(rng);
  });
  AdamW opt({0.01, 0.9, 0.999, 1e-8, 0.1});
  opt.step(p, g);
  // Bias-corrected moments equal g and g² after one step.
  const auto pt = tensor_list(p);
  const auto bt = tensor_list(before);
  const auto gt = tensor_list(g);
  for (std::size_t k = 0; k < pt.size(); ++k)
    for (Eigen::Index i = 0; i < pt[k]->size(); ++i) {
      const double th = bt[k]->data()[i], gi = gt[k]->data()[i];
      const double expect = th * (1 - 0.01 * 0.1) - 0.01 * gi / (std::abs(gi) + 1e-8);
      EXPECT_NEAR(pt[k]->data()[i], expect, 1e-12);
    }
}

TEST(AdamW, ZeroGradientZeroDecayIsNoOp) {
  ModelParams p = init_model(tiny_config(), {}, 3);
  const ModelParams before = p;
  AdamW opt({5e-4, 0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 3; ++i) opt.step(p, p.zeros_like());
  const auto a = tensor_list(p);
  const auto b = tensor_list(before);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(*a[k], *b[k]);
}

TEST(AdamW, MismatchedGradientRejected) {
  ModelParams p = init_model(tiny_config(), {}, 4);
  ModelParams other = init_model(tiny_config(8), {}, 4);
  AdamW opt;
  EXPECT_THROW(opt.step(p, other), ShapeMismatch);
}

// ---------------------------------------------------------------------------
// Training loop

TEST(Training, UniformOutputLossIsLogC) {
  const ModelConfig c = tiny_config();
  ModelParams m = init_model(c, {}, 5);
  m.out_w.setZero();
  const auto set = separable_set(c, 9, 6);
  const auto s = score_examples(set, m, F1Mode::AllClasses, 1);
  EXPECT_NEAR(s.loss, std::log(3.0), 1e-12);
}

TEST(Training, OverfitsSeparableSet) {
  const ModelConfig c = tiny_config();
  const auto train = separable_set(c, 32, 7);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.lr = 5e-3;
  tc.max_epochs = 200;
  tc.patience = 0;
  tc.val_interval = 1.0;
  const auto res = train_model(init_model(c, {}, 8), train, train, tc, F1Mode::AllClasses);
  EXPECT_DOUBLE_EQ(accuracy(train, res.best), 1.0);
  EXPECT_FALSE(res.stopped_early);
  EXPECT_EQ(res.epochs, 200);
}

TEST(Training, PatienceOneStopsAfterTwoValidations) {
  const ModelConfig c = tiny_config();
  const auto train = separable_set(c, 6, 9);
  // Same graphs with shifted labels: fitting the training set raises dev loss.
  std::vector<TrainingExample> dev = train;
  for (auto& ex : dev) ex.label = (ex.label + 1) % 3;
  TrainConfig tc;
  tc.batch_size = 6;
  tc.lr = 0.05;
  tc.max_epochs = 50;
  tc.patience = 1;
  tc.val_interval = 1.0;
  std::vector<ValidationRecord> seen;
  const auto res = train_model(init_model(c, {}, 10), train, dev, tc, F1Mode::AllClasses,
                               [&](const ValidationRecord& r) { seen.push_back(r); });
  ASSERT_EQ(res.log.size(), 2u);
  EXPECT_EQ(seen.size(), 2u);
  EXPECT_TRUE(res.stopped_early);
  EXPECT_TRUE(res.log[0].improved);
  EXPECT_FALSE(res.log[1].improved);
  EXPECT_GT(res.log[1].dev_loss, res.log[0].dev_loss);
  EXPECT_EQ(res.best_step, 1);
}

TEST(Training, ValidationCadence) {
  const ModelConfig c = tiny_config();
  const auto train = separable_set(c, 20, 11);
  TrainConfig tc;
  tc.batch_size = 2;  // 10 steps per epoch, validate every ceil(0.2 * 10) = 2 steps
  tc.max_epochs = 1;
  tc.patience = 0;
  const auto res = train_model(init_model(c, {}, 12), train, train, tc, F1Mode::AllClasses);
  ASSERT_EQ(res.log.size(), 5u);
  for (std::size_t i = 0; i < res.log.size(); ++i) EXPECT_EQ(res.log[i].step, 2 * static_cast<int>(i + 1));
  double best = 1e300;
  for (const auto& r : res.log) best = std::min(best, r.dev_loss);
  EXPECT_DOUBLE_EQ(res.best_dev_loss, best);
}

TEST(Training, DeterministicForFixedSeed) {
  const ModelConfig c = tiny_config();
  const auto train = separable_set(c, 12, 13);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_epochs = 3;
  const auto a = train_model(init_model(c, {}, 14), train, train, tc, F1Mode::AllClasses);
  tc.threads = 3;
  const auto b = train_model(init_model(c, {}, 14), train, train, tc, F1Mode::AllClasses);
  const auto ta = tensor_list(a.best);
  const auto tb = tensor_list(b.best);
  for (std::size_t k = 0; k < ta.size(); ++k) EXPECT_EQ(*ta[k], *tb[k]);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].dev_loss, b.log[i].dev_loss);
}

TEST(Training, EmptySetsRejected) {
  const ModelConfig c = tiny_config();
  const auto set = separable_set(c, 3, 15);
  const std::vector<TrainingExample> none;
  EXPECT_THROW(train_model(init_model(c, {}, 1), none, set, {}, F1Mode::AllClasses), EmptySet);
  EXPECT_THROW(train_model(init_model(c, {}, 1), set, none, {}, F1Mode::AllClasses), EmptySet);
  EXPECT_THROW(evaluate(none, init_model(c, {}, 1), F1Mode::AllClasses), EmptySet);
}

TEST(Evaluate, ReportsBothModesAndTargets) {
  const ModelConfig c = tiny_config();
  const auto set = separable_set(c, 12, 16);
  const auto r = evaluate(set, init_model(c, {}, 17), F1Mode::FavorAgainstOnly);
  EXPECT_EQ(r.predictions.size(), 12u);
  EXPECT_EQ(r.per_target.size(), 2u);
  EXPECT_EQ(r.primary.f_avg, r.favor_against.f_avg);
  for (const auto& p : r.predictions) EXPECT_NEAR(p.probabilities.sum(), 1.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Dataset loading

TEST(Dataset, QuotedFieldsAndLabelCase) {
  const auto path = temp_file("quoted.csv",
                              "text,target,label\n"
                              "\"Masks, honestly, \"\"work\"\"\",Masks,favor\n"
                              "\"line one\nline two\",Tolls, AGAINST \n"
                              "plain,Drones,None\n");
  const auto rows = load_dataset(path, LabelSet::FavorAgainstNone);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].text, "Masks, honestly, \"work\"");
  EXPECT_EQ(rows[0].label, 0);
  EXPECT_EQ(rows[1].text, "line one\nline two");
  EXPECT_EQ(rows[1].label, 1);
  EXPECT_EQ(rows[2].label, 2);
}

TEST(Dataset, WriteThenLoadRoundTrip) {
  std::vector<LabeledExample> rows(2);
  rows[0].text = "a, \"b\"";
  rows[0].target = "T";
  rows[0].label = 1;
  rows[1].text = "c";
  rows[1].target = "U,V";
  rows[1].label = 2;
  const auto path = temp_file("rt.csv", "");
  write_dataset(path, rows, LabelSet::ProConNeutral);
  const auto back = load_dataset(path, LabelSet::ProConNeutral);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].text, rows[0].text);
  EXPECT_EQ(back[1].target, rows[1].target);
  EXPECT_EQ(back[1].label, 2);
}

TEST(Dataset, BadLabelAndHeader) {
  EXPECT_THROW(load_dataset(temp_file("bl.csv", "text,target,label\nx,y,Pro\n"), LabelSet::FavorAgainstNone),
               BadLabel);
  EXPECT_THROW(load_dataset(temp_file("bh.csv", "sentence,target,label\nx,y,Favor\n"), LabelSet::FavorAgainstNone),
               BadHeader);
  EXPECT_THROW(load_dataset(temp_file("empty.csv", ""), LabelSet::FavorAgainstNone), BadHeader);
  EXPECT_THROW(load_dataset(temp_file("uq.csv", "text,target,label\n\"open,y,Favor\n"), LabelSet::FavorAgainstNone),
               IoError);
  EXPECT_THROW(load_dataset("/nonexistent/x.csv", LabelSet::FavorAgainstNone), IoError);
}
