#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "advnav/diffcore/lstm.hpp"
#include "advnav/diffcore/optim.hpp"
#include "advnav/diffcore/params.hpp"
#include "support/gradcheck.hpp"

namespace advnav {
namespace {

using testing::check_gradients;
using testing::DStore;
using testing::DTape;

Tensor mat(std::size_t r, std::size_t c, std::vector<float> v) { return Tensor::from(r, c, std::move(v)); }

DStore random_store(std::uint64_t seed, std::initializer_list<std::pair<const char*, std::pair<int, int>>> shapes) {
  std::mt19937_64 rng(seed);
  DStore s;
  for (const auto& [name, rc] : shapes) {
    s.add(name, static_cast<std::size_t>(rc.first), static_cast<std::size_t>(rc.second), rng);
    // Stretch the init so tanh / sigmoid see non-trivial inputs.
    for (auto& v : s.at(name).values) v *= 2.0;
  }
  return s;
}

TEST(TensorTest, FromRejectsWrongCount) {
  EXPECT_THROW(Tensor::from(2, 2, {1, 2, 3}), ShapeError);
  const Tensor t = mat(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_TRUE(t.valid());
  EXPECT_EQ(t.at(1, 2), 6.0f);
}

TEST(TapeTest, SoftmaxOfZerosIsUniform) {
  Tape tape;
  const Var y = tape.softmax(tape.constant(mat(1, 2, {0, 0})));
  EXPECT_FLOAT_EQ(tape.value(y)[0], 0.5f);
  EXPECT_FLOAT_EQ(tape.value(y)[1], 0.5f);
}

TEST(TapeTest, IdentityMatmul) {
  Tape tape;
  const Tensor a = mat(2, 2, {1.5f, -2, 3, 0.25f});
  const Var y = tape.matmul(tape.constant(mat(2, 2, {1, 0, 0, 1})), tape.constant(a));
  EXPECT_EQ(tape.tensor(y).values, a.values);
}

TEST(TapeTest, TransposedMatmulMatchesLoops) {
  DTape tape;
  std::mt19937_64 rng(3);
  DStore s;
  s.add("a", 3, 2, rng);
  s.add("b", 4, 2, rng);
  const Var y = tape.matmul(s.bind(tape, "a"), s.bind(tape, "b"), false, true);
  ASSERT_EQ(tape.rows(y), 3u);
  ASSERT_EQ(tape.cols(y), 4u);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double ref = 0;
      for (std::size_t k = 0; k < 2; ++k) ref += s.at("a").at(i, k) * s.at("b").at(j, k);
      EXPECT_NEAR(tape.value(y)[i * 4 + j], ref, 1e-12);
    }
  }
}

TEST(TapeTest, ThreeEntryTapeMatchesHandEvaluation) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-2, 2);
    std::vector<double> x(3), w(3);
    for (auto& v : x) v = u(rng);
    for (auto& v : w) v = u(rng);
    DTape tape;
    const Var vx = tape.constant(BasicTensor<double>::row(x));
    const Var vw = tape.constant(BasicTensor<double>::row(w));
    const Var y = tape.sum(tape.tanh(tape.mul(vx, vw)));
    double ref = 0;
    for (int i = 0; i < 3; ++i) ref += std::tanh(x[i] * w[i]);
    EXPECT_NEAR(tape.scalar(y), ref, 1e-6);
  }
}

TEST(TapeTest, GradOfSumIsOnes) {
  Tape tape;
  const Var x = tape.input("x", mat(1, 4, {1, -2, 3, 0.5f}));
  tape.backward(tape.sum(x));
  for (float g : tape.grad(x).values) EXPECT_EQ(g, 1.0f);
}

TEST(TapeTest, SumOfSoftmaxHasZeroGradient) {
  DTape tape;
  const Var x = tape.input("x", BasicTensor<double>::row({0.3, -1.2, 2.5, 0.0, 4.0}));
  tape.backward(tape.sum(tape.softmax(x)));
  for (double g : tape.grad(x).values) EXPECT_NEAR(g, 0.0, 1e-12);

  DTape rows;
  const Var m = rows.input("m", BasicTensor<double>::from(2, 3, {1, 2, 3, -4, 0, 9}));
  rows.backward(rows.sum(rows.softmax_rows(m)));
  for (double g : rows.grad(m).values) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(TapeTest, NonScalarLossRejected) {
  Tape tape;
  const Var x = tape.input("x", mat(1, 2, {1, 2}));
  EXPECT_THROW(tape.backward(tape.tanh(x)), ShapeError);
}

TEST(TapeTest, ShapeMismatchNamesEntry) {
  Tape tape;
  const Var a = tape.constant(mat(2, 3, std::vector<float>(6, 1)));
  const Var b = tape.constant(mat(2, 3, std::vector<float>(6, 1)));
  try {
    tape.matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("#2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos) << e.what();
  }
  // a failed apply leaves the tape unchanged
  EXPECT_EQ(tape.size(), 2u);
}

TEST(TapeTest, UnknownPrimitiveRejected) {
  Tape tape;
  const Var a = tape.constant(mat(1, 1, {1}));
  EXPECT_THROW(tape.apply(static_cast<Prim>(200), {a}), std::invalid_argument);
}

TEST(TapeTest, NonContributingInputGetsZeroGrad) {
  Tape tape;
  const Var x = tape.input("x", mat(1, 2, {1, 2}));
  const Var unused = tape.input("unused", mat(1, 3, {4, 5, 6}));
  tape.backward(tape.sum(tape.tanh(x)));
  const auto g = tape.named_gradients();
  ASSERT_EQ(g.at("unused").values.size(), 3u);
  for (float v : g.at("unused").values) EXPECT_EQ(v, 0.0f);
  (void)unused;
}

TEST(TapeTest, FanOutAccumulates) {
  DTape tape;
  const Var x = tape.input("x", BasicTensor<double>::row({0.7}));
  // y = x*x + 3x, dy/dx = 2x + 3
  const Var y = tape.add(tape.mul(x, x), tape.scale(x, 3.0));
  tape.backward(tape.sum(y));
  EXPECT_NEAR(tape.grad(x).values[0], 2 * 0.7 + 3, 1e-12);
}

TEST(TapeTest, ParamGradsAccumulateAcrossBackwardCalls) {
  ParamStore s;
  s.insert("w", mat(1, 2, {1, 2}));
  for (int k = 0; k < 2; ++k) {
    Tape tape;
    tape.backward(tape.sum(s.bind(tape, "w")));
  }
  EXPECT_EQ(s.at("w").grad, (std::vector<float>{2, 2}));
  s.zero_grad();
  EXPECT_EQ(s.at("w").grad, (std::vector<float>{0, 0}));
}

TEST(TapeTest, SoftmaxStableForLargeInputs) {
  Tape tape;
  const Var x = tape.input("x", mat(2, 3, {1000, -1000, 999, -1000, -999.5f, 1000}));
  const Var r = tape.softmax_rows(x);
  const Var a = tape.softmax(x);
  for (Var v : {r, a}) {
    for (float p : tape.value(v)) EXPECT_TRUE(std::isfinite(p));
  }
  for (std::size_t row = 0; row < 2; ++row) {
    double total = 0;
    for (std::size_t c = 0; c < 3; ++c) total += tape.value(r)[row * 3 + c];
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
  double total = 0;
  for (float p : tape.value(a)) total += p;
  EXPECT_NEAR(total, 1.0, 1e-6);
  const Var ce = tape.cross_entropy(x, 1);
  const Var h = tape.softmax_entropy(x);
  EXPECT_TRUE(std::isfinite(tape.scalar(ce)));
  EXPECT_TRUE(std::isfinite(tape.scalar(h)));
  tape.backward(tape.add(ce, h));
  for (float g : tape.grad(x).values) EXPECT_TRUE(std::isfinite(g));
}

TEST(TapeTest, CrossEntropyAndEntropyValues) {
  DTape tape;
  const std::vector<double> z{0.5, -1.0, 2.0};
  const Var x = tape.constant(BasicTensor<double>::row(z));
  double lse = 0;
  for (double v : z) lse += std::exp(v);
  lse = std::log(lse);
  EXPECT_NEAR(tape.scalar(tape.cross_entropy(x, 2)), lse - 2.0, 1e-12);
  double h = 0;
  for (double v : z) h -= std::exp(v - lse) * (v - lse);
  EXPECT_NEAR(tape.scalar(tape.softmax_entropy(x)), h, 1e-12);
  EXPECT_THROW(tape.cross_entropy(x, 3), std::exception);
}

TEST(TapeTest, ReplayIsBitIdentical) {
  std::mt19937_64 rng(11);
  ParamStore s;
  s.add("w", 4, 3, rng);
  Tape tape;
  const Var x = tape.input("x", mat(2, 4, {1, 2, 3, 4, -1, 0.5f, 0.25f, 2}));
  const Var y = tape.softmax_rows(tape.tanh(tape.matmul(x, s.bind(tape, "w"))));
  tape.mark_output("y", y);
  const Tensor first = tape.tensor(y);
  const auto again = tape.evaluate();
  EXPECT_EQ(again.at("y"), first);
  // a new binding changes the output, the old one restores it exactly
  const auto moved = tape.evaluate({{"x", mat(2, 4, std::vector<float>(8, 0.1f))}});
  EXPECT_NE(moved.at("y").values, first.values);
  const auto back = tape.evaluate({{"x", mat(2, 4, {1, 2, 3, 4, -1, 0.5f, 0.25f, 2})}});
  EXPECT_EQ(back.at("y"), first);
}

TEST(TapeTest, EntriesAreTopological) {
  Tape tape;
  const Var a = tape.input("a", mat(1, 2, {1, 2}));
  const Var b = tape.tanh(a);
  tape.sum(tape.concat({a, b}, 1));
  for (std::size_t i = 0; i < tape.size(); ++i) {
    for (int in : tape.entries()[i].inputs) EXPECT_LT(in, static_cast<int>(i));
  }
}

// ---- finite differences, one primitive at a time ----

struct PrimCase {
  const char* name;
  testing::LossBuilder loss;
};

class PrimitiveGradTest : public ::testing::TestWithParam<int> {};

std::vector<PrimCase> primitive_cases() {
  auto w = [](DTape& t, DStore& s, const char* n) { return s.bind(t, n); };
  // Weighted sums make every output entry matter to the loss.
  auto wsum = [](DTape& t, Var y) {
    const std::size_t n = t.rows(y) * t.cols(y);
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = 0.3 + 0.17 * static_cast<double>(i % 7);
    return t.sum(t.mul(y, t.constant(BasicTensor<double>::from(t.rows(y), t.cols(y), c))));
  };
  return {
      {"matmul", [=](DTape& t, DStore& s) { return wsum(t, t.matmul(w(t, s, "a"), w(t, s, "b"))); }},
      {"matmul_tt",
       [=](DTape& t, DStore& s) { return wsum(t, t.matmul(w(t, s, "b"), w(t, s, "a"), true, true)); }},
      {"add", [=](DTape& t, DStore& s) { return wsum(t, t.add(w(t, s, "a"), w(t, s, "c"))); }},
      {"mul", [=](DTape& t, DStore& s) { return wsum(t, t.mul(w(t, s, "a"), w(t, s, "c"))); }},
      {"concat_rows",
       [=](DTape& t, DStore& s) { return wsum(t, t.concat({w(t, s, "a"), w(t, s, "c")}, 0)); }},
      {"concat_cols",
       [=](DTape& t, DStore& s) { return wsum(t, t.concat({w(t, s, "a"), w(t, s, "c")}, 1)); }},
      {"slice_cols", [=](DTape& t, DStore& s) { return wsum(t, t.slice_cols(w(t, s, "a"), 1, 3)); }},
      {"softmax_rows", [=](DTape& t, DStore& s) { return wsum(t, t.softmax_rows(w(t, s, "a"))); }},
      {"softmax", [=](DTape& t, DStore& s) { return wsum(t, t.softmax(w(t, s, "a"))); }},
      {"tanh", [=](DTape& t, DStore& s) { return wsum(t, t.tanh(w(t, s, "a"))); }},
      {"sigmoid", [=](DTape& t, DStore& s) { return wsum(t, t.sigmoid(w(t, s, "a"))); }},
      {"gather", [=](DTape& t, DStore& s) { return wsum(t, t.gather(w(t, s, "a"), {2, 0, 2})); }},
      {"scale", [=](DTape& t, DStore& s) { return wsum(t, t.scale(w(t, s, "a"), -1.7)); }},
      {"sum", [=](DTape& t, DStore& s) { return t.sum(t.mul(w(t, s, "a"), w(t, s, "a"))); }},
      {"cross_entropy", [=](DTape& t, DStore& s) { return t.cross_entropy(w(t, s, "a"), 5); }},
      {"softmax_entropy", [=](DTape& t, DStore& s) { return t.softmax_entropy(w(t, s, "a")); }},
  };
}

TEST_P(PrimitiveGradTest, MatchesFiniteDifferences) {
  const auto cases = primitive_cases();
  const auto& pc = cases.at(static_cast<std::size_t>(GetParam()));
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    DStore s = random_store(seed, {{"a", {3, 4}}, {"b", {4, 2}}, {"c", {3, 4}}});
    const auto res = check_gradients(pc.loss, s);
    EXPECT_LT(res.max_rel_error, 1e-4) << pc.name << " seed " << seed << ": " << res.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradTest,
                         ::testing::Range(0, static_cast<int>(primitive_cases().size())),
                         [](const auto& info) {
                           return std::string(primitive_cases()[static_cast<std::size_t>(info.param)].name);
                         });

TEST(CompositeGradTest, RandomGraphsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    DStore s = random_store(seed, {{"x", {2, 5}}, {"w1", {5, 4}}, {"w2", {4, 3}}, {"b", {2, 4}}});
    std::mt19937_64 pick(seed);
    const int variant = static_cast<int>(pick() % 3);
    auto loss = [variant](DTape& t, DStore& st) {
      const Var x = st.bind(t, "x");
      Var h = t.add(t.matmul(x, st.bind(t, "w1")), st.bind(t, "b"));
      h = variant == 0 ? t.tanh(h) : t.sigmoid(h);
      const Var z = t.matmul(h, st.bind(t, "w2"));
      if (variant == 2) return t.add(t.cross_entropy(z, 4), t.scale(t.softmax_entropy(z), 0.1));
      const Var p = t.softmax_rows(z);
      return t.sum(t.mul(p, t.concat({t.slice_cols(z, 0, 1), t.slice_cols(z, 1, 3)}, 1)));
    };
    const auto res = check_gradients(loss, s);
    EXPECT_LT(res.max_rel_error, 1e-4) << "seed " << seed << ": " << res.worst;
  }
}

// ---- lstm ----

TEST(LstmTest, ZeroParamsHalveTheCell) {
  ParamStore s;
  s.add_zeros("w", 3 + 2, 8);
  s.add_zeros("b", 1, 8);
  Tape tape;
  const LstmVars p{s.bind(tape, "w"), s.bind(tape, "b")};
  const Var x = tape.constant(mat(1, 3, {0.4f, -1, 2}));
  const Var h = tape.constant(mat(1, 2, {0.3f, 0.9f}));
  const Var c = tape.constant(mat(1, 2, {1.2f, -0.6f}));
  const auto out = lstm_cell(tape, x, h, c, p);
  for (std::size_t k = 0; k < 2; ++k) {
    const float cp = tape.value(c)[k];
    EXPECT_FLOAT_EQ(tape.value(out.c)[k], 0.5f * cp);
    EXPECT_FLOAT_EQ(tape.value(out.h)[k], 0.5f * std::tanh(0.5f * cp));
  }
}

TEST(LstmTest, ZeroEverythingGivesZero) {
  ParamStore s;
  s.add_zeros("w", 4, 8);
  s.add_zeros("b", 1, 8);
  Tape tape;
  const Var z2 = tape.constant(mat(1, 2, {0, 0}));
  const auto out = lstm_cell(tape, z2, z2, z2, {s.bind(tape, "w"), s.bind(tape, "b")});
  for (float v : tape.value(out.h)) EXPECT_EQ(v, 0.0f);
}

TEST(LstmTest, DimMismatchRejected) {
  ParamStore s;
  s.add_zeros("w", 5, 8);
  s.add_zeros("b", 1, 8);
  Tape tape;
  const LstmVars p{s.bind(tape, "w"), s.bind(tape, "b")};
  const Var x4 = tape.constant(mat(1, 4, {0, 0, 0, 0}));
  const Var x3 = tape.constant(mat(1, 3, {0, 0, 0}));
  const Var h = tape.constant(mat(1, 2, {0, 0}));
  const Var c3 = tape.constant(mat(1, 3, {0, 0, 0}));
  EXPECT_THROW(lstm_cell(tape, x4, h, h, p), ShapeError);
  EXPECT_THROW(lstm_cell(tape, x3, h, c3, p), ShapeError);
}

TEST(LstmTest, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    DStore s = random_store(seed, {{"w", {3 + 2, 8}}, {"b", {1, 8}}, {"x", {1, 3}}, {"h", {1, 2}}, {"c", {1, 2}}});
    auto loss = [](DTape& t, DStore& st) {
      const auto out = lstm_cell(t, st.bind(t, "x"), st.bind(t, "h"), st.bind(t, "c"),
                                 {st.bind(t, "w"), st.bind(t, "b")});
      return t.sum(out.h);
    };
    const auto res = check_gradients(loss, s);
    EXPECT_LT(res.max_rel_error, 1e-4) << "seed " << seed << ": " << res.worst;
  }
}

TEST(LstmTest, BiLstmGradientsMatchFiniteDifferences) {
  DStore s = random_store(4, {{"emb", {5, 2}}, {"fw", {2 + 2, 8}}, {"fb", {1, 8}}, {"bw", {2 + 2, 8}}, {"bb", {1, 8}}});
  auto loss = [](DTape& t, DStore& st) {
    const Var u = bilstm_encode(t, st.bind(t, "emb"), {st.bind(t, "fw"), st.bind(t, "fb")},
                                {st.bind(t, "bw"), st.bind(t, "bb")}, {3, 1, 4, 1});
    return t.sum(t.mul(u, t.tanh(u)));
  };
  const auto res = check_gradients(loss, s);
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

// ---- parameters, optimizer, checkpoints ----

TEST(ParamStoreTest, InitWithinFanInBound) {
  std::mt19937_64 rng(1);
  ParamStore s;
  s.add("w", 16, 10, rng);
  const double bound = 1.0 / std::sqrt(16.0);
  for (float v : s.at("w").values) EXPECT_LE(std::abs(v), bound);
  std::mt19937_64 rng2(1);
  ParamStore s2;
  s2.add("w", 16, 10, rng2);
  EXPECT_TRUE(s.values_equal(s2));
}

TEST(OptimizerTest, OnlyTouchesPrefix) {
  for (OptimizerKind k : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    ParamStore s;
    s.insert("nav.w", mat(1, 2, {1, 1}));
    s.insert("att.w", mat(1, 2, {1, 1}));
    s.at("nav.w").grad = {1, -1};
    s.at("att.w").grad = {1, -1};
    Optimizer opt(k, 0.1, "nav.");
    opt.step(s);
    EXPECT_LT(s.at("nav.w").values[0], 1.0f);
    EXPECT_GT(s.at("nav.w").values[1], 1.0f);
    EXPECT_EQ(s.at("att.w").values, (std::vector<float>{1, 1}));
  }
}

TEST(OptimizerTest, SgdStep) {
  ParamStore s;
  s.insert("w", mat(1, 2, {1, 2}));
  s.at("w").grad = {0.5f, -1};
  Optimizer(OptimizerKind::Sgd, 0.1, "").step(s);
  EXPECT_FLOAT_EQ(s.at("w").values[0], 0.95f);
  EXPECT_FLOAT_EQ(s.at("w").values[1], 2.1f);
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  std::mt19937_64 rng(9);
  ParamStore s;
  s.add("a.w", 7, 3, rng);
  s.add("b.v", 1, 5, rng);
  s.at("b.v").values[0] = -0.0f;
  s.at("b.v").values[1] = std::numeric_limits<float>::denorm_min();
  const auto dir = std::filesystem::temp_directory_path() / "advnav_diffcore_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir / "ck", s, {{"note", "x"}});
  ASSERT_TRUE(checkpoint_exists(dir / "ck"));
  const auto back = load_checkpoint(dir / "ck");
  EXPECT_EQ(back.meta.at("note"), "x");
  ASSERT_EQ(back.params.count(), s.count());
  for (const auto& [name, t] : s.tensors()) {
    const auto& u = back.params.at(name);
    ASSERT_EQ(u.shape, t.shape);
    EXPECT_EQ(std::memcmp(u.values.data(), t.values.data(), 4 * t.values.size()), 0) << name;
  }
  EXPECT_TRUE(std::signbit(back.params.at("b.v").values[0]));
  std::filesystem::remove_all(dir);
}

TEST(CheckpointTest, MissingFilesRejected) {
  EXPECT_THROW(load_checkpoint("/nonexistent/advnav/ck"), std::runtime_error);
}

}  // namespace
}  // namespace advnav
