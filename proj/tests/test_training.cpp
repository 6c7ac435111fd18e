#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mpstr/errors.hpp"
#include "mpstr/toy_data.hpp"
#include "mpstr/training.hpp"

using namespace mpstr;

namespace {

// Independent softmax cross-entropy, straight from the definition.
double ce_oracle(std::span<const double> logits, int target) {
  double z = 0;
  for (double v : logits) z += std::exp(v);
  return -std::log(std::exp(logits[static_cast<std::size_t>(target)]) / z);
}

Matrix<double> random_logits(int r, int c, Rng& rng, double scale = 3.0) {
  Matrix<double> m(r, c);
  for (double& x : m.flat()) x = scale * (2 * uniform01(rng) - 1);
  return m;
}

Matrix<double> patches_for(const Model<double>& m, const std::string& word) {
  return patchify<double>(render_word(word, RenderParams{}), m.config().encoder);
}

std::vector<TrainExample> toy_examples(const Model<float>& m, int count, int max_len, std::uint64_t seed) {
  GenConfig gc;
  gc.max_len = max_len;
  gc.seed = seed;
  std::vector<TrainExample> out;
  for (int i = 0; i < count; ++i) {
    const std::string w = sample_word(gc, static_cast<std::uint64_t>(i));
    out.push_back({patchify<float>(render_word(w, gc.render), m.config().encoder), m.codec().encode(w)});
  }
  return out;
}

std::vector<const TrainExample*> pointers(const std::vector<TrainExample>& ex, std::size_t begin, std::size_t n) {
  std::vector<const TrainExample*> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(&ex[(begin + i) % ex.size()]);
  return out;
}

}  // namespace

TEST(LengthLoss, UniformLogitsGiveLogT) {
  EXPECT_NEAR(compute_length_loss(Matrix<double>(1, 25, 0.7), 3), std::log(25.0), 1e-12);
  EXPECT_NEAR(compute_length_loss(Matrix<double>(1, 25), 25), 3.2189, 1e-4);
  EXPECT_NEAR(compute_length_loss(Matrix<float>(1, 8), 1), std::log(8.0), 1e-6);
}

TEST(LengthLoss, MatchesOracleAndApproachesZero) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix<double> l = random_logits(1, 8, rng);
    const int g = 1 + static_cast<int>(uniform_index(rng, 8));
    EXPECT_NEAR(compute_length_loss(l, g), ce_oracle(l.row(0), g - 1), 1e-9);
  }
  Matrix<double> sharp(1, 8);
  sharp(0, 4) = 40.0;
  EXPECT_LT(compute_length_loss(sharp, 5), 1e-15);
  EXPECT_THROW(compute_length_loss(sharp, 0), LengthError);
  EXPECT_THROW(compute_length_loss(sharp, 9), LengthError);
}

TEST(RecLoss, MatchesPerPositionOracle) {
  Rng rng(2);
  const int classes = 37, T = 8;
  for (int trial = 0; trial < 20; ++trial) {
    const int L = 1 + static_cast<int>(uniform_index(rng, T));
    const int K = 1 + static_cast<int>(uniform_index(rng, 6));
    LabelSequence label;
    for (int i = 0; i < L; ++i) label.ids.push_back(static_cast<int>(uniform_index(rng, 36)));
    std::vector<Matrix<double>> sets;
    for (int k = 0; k < K; ++k) sets.push_back(random_logits(T + 1, classes, rng));
    double expect = 0;
    for (const auto& s : sets) {
      double per = 0;
      for (int r = 0; r < L; ++r) per += ce_oracle(s.row(r), label.ids[r]);
      per += ce_oracle(s.row(L), 36);
      expect += per / (L + 1);
    }
    expect /= K;
    EXPECT_NEAR(compute_rec_loss(sets, label, 36), expect, 1e-6);
  }
}

TEST(RecLoss, DuplicatesAndReorderingDoNotChangeTheMean) {
  Rng rng(3);
  LabelSequence label{{3, 1, 4}};
  const auto a = random_logits(9, 37, rng), b = random_logits(9, 37, rng);
  const double one = compute_rec_loss<double>({a}, label, 36);
  EXPECT_NEAR(compute_rec_loss<double>({a, a}, label, 36), one, 1e-15);
  EXPECT_DOUBLE_EQ(compute_rec_loss<double>({a, b}, label, 36), compute_rec_loss<double>({b, a}, label, 36));
  Matrix<double> perfect(9, 37);
  for (int r = 0; r < 3; ++r) perfect(r, label.ids[r]) = 60;
  perfect(3, 36) = 60;
  EXPECT_LT(compute_rec_loss<double>({perfect}, label, 36), 1e-20);
  EXPECT_THROW(compute_rec_loss<double>({Matrix<double>(3, 37)}, label, 36), ShapeError);
  EXPECT_THROW(compute_rec_loss<double>({}, label, 36), ShapeError);
}

TEST(Perturbation, RatioZeroIsIdentityAndClampHolds) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(apply_perturbation(5, 8, rng, PerturbPolicy{0.0}), 5);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_GE(apply_perturbation(1, 8, rng, PerturbPolicy{1.0}), 1);
    EXPECT_LE(apply_perturbation(8, 8, rng, PerturbPolicy{1.0}), 8);
  }
}

TEST(Perturbation, MonteCarloFrequencyAndSignBalance) {
  for (double ratio : {0.1, 0.3, 0.5}) {
    Rng rng(static_cast<std::uint64_t>(ratio * 1000));
    int changed = 0, up = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      const int e = apply_perturbation(4, 8, rng, PerturbPolicy{ratio});
      ASSERT_TRUE(e == 3 || e == 4 || e == 5);
      changed += e != 4;
      up += e == 5;
    }
    EXPECT_NEAR(static_cast<double>(changed) / n, ratio, 0.02) << ratio;
    EXPECT_NEAR(static_cast<double>(up) / changed, 0.5, 0.05) << ratio;
  }
}

// The graph objective against per-schedule forward decodes scored by the
// value-level loss functions.
TEST(SampleLoss, GraphLossesMatchValueLevelLosses) {
  Model<double> m(ModelConfig::toy(), 3);
  const auto label = m.codec().encode("k7z");
  const std::vector<Permutation> perms{{{1, 2, 3}}, {{3, 2, 1}}, {{2, 3, 1}}};
  const int T = m.max_len();
  for (int mask_len : {2, 3, 4}) {
    Graph<double> g(false);
    const Matrix<double> patches = patches_for(m, "k7z");
    const auto v = sample_loss(g, m, patches, label, perms, mask_len, 0.25);
    const auto enc = m.encode(render_word("k7z", RenderParams{}));
    std::vector<Matrix<double>> sets;
    const auto ctx = build_context(label.ids, 3, T, m.codec().specials());
    for (const auto& p : perms)
      sets.push_back(m.decode(enc, ctx, build_train_mask(p, 3, mask_len, T), build_pad_mask(mask_len, T)));
    EXPECT_NEAR(g.value(v.rec_loss)(0, 0), compute_rec_loss(sets, label, 36), 1e-9);
    EXPECT_NEAR(g.value(v.len_loss)(0, 0), compute_length_loss(m.word_length_logits(enc), 3), 1e-9);
    EXPECT_NEAR(g.value(v.total)(0, 0), 0.25 * g.value(v.len_loss)(0, 0) + 0.75 * g.value(v.rec_loss)(0, 0),
                1e-12);
  }
}

TEST(SampleLoss, PermutationOrderDoesNotMatter) {
  Model<double> m(ModelConfig::toy(), 3);
  const auto label = m.codec().encode("ab5d");
  const Matrix<double> patches = patches_for(m, "ab5d");
  const std::vector<Permutation> fwd{{{1, 2, 3, 4}}, {{4, 1, 3, 2}}, {{2, 3, 1, 4}}};
  const std::vector<Permutation> rev{fwd[2], fwd[0], fwd[1]};
  Graph<double> g1(false), g2(false);
  const double a = g1.value(sample_loss(g1, m, patches, label, fwd, 4, 0.25).rec_loss)(0, 0);
  const double b = g2.value(sample_loss(g2, m, patches, label, rev, 4, 0.25).rec_loss)(0, 0);
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(SampleLoss, LambdaOneStarvesTheRecognitionPath) {
  Model<double> m(ModelConfig::toy(), 3);
  const auto label = m.codec().encode("q2");
  m.params().zero_grad();
  Graph<double> g;
  const auto v = sample_loss(g, m, patches_for(m, "q2"), label, {{{1, 2}}, {{2, 1}}}, 2, 1.0);
  g.backward(v.total);
  double len_grad = 0;
  for (const auto& p : m.params().all()) {
    double sq = 0;
    for (double x : p->grad.flat()) sq += x * x;
    if (p->name.rfind("dec.", 0) == 0) {
      EXPECT_EQ(sq, 0.0) << p->name;
    }
    if (p->name.rfind("len.", 0) == 0) len_grad += sq;
  }
  EXPECT_GT(len_grad, 0.0);
}

// Scoring all T+1 slots with the padded ones marked ignored gives exactly the
// gradient of the real objective, and whatever targets sit in padded slots
// never enter it.
TEST(SampleLoss, PaddedSlotsContributeZeroGradient) {
  Model<double> m(ModelConfig::toy(), 4);
  const auto label = m.codec().encode("xy1");
  const Matrix<double> patches = patches_for(m, "xy1");
  const std::vector<Permutation> perms{{{2, 1, 3}}};
  const int T = m.max_len(), L = 3;
  auto grads = [&](bool full, int padded_target) {
    m.params().zero_grad();
    Graph<double> g;
    if (!full) {
      g.backward(sample_loss(g, m, patches, label, perms, L, 0.0).rec_loss);
    } else {
      EncoderVars enc = m.encoder().forward(g, g.input(patches));
      const auto ctx = build_context(label.ids, L, T, m.codec().specials());
      const BlockMask bm = m.decoder_mask(build_train_mask(perms[0], L, T), build_pad_mask(L, T));
      Var logits = m.decoder().forward(g, enc.visual, ctx, bm, 1, T + 1);
      std::vector<int> t = rec_targets(label, 36);
      t.resize(T + 1, padded_target);
      g.backward(g.cross_entropy(logits, t));
    }
    std::vector<double> out;
    for (const auto& p : m.params().all()) out.insert(out.end(), p->grad.flat().begin(), p->grad.flat().end());
    return out;
  };
  const auto real = grads(false, 0);
  const auto ignored = grads(true, -1);
  ASSERT_EQ(real.size(), ignored.size());
  for (std::size_t i = 0; i < real.size(); ++i) ASSERT_NEAR(real[i], ignored[i], 1e-12) << i;
  // the sample objective does not read padded-slot targets at all: a real
  // target there would show up in the gradient
  const auto scored = grads(true, 5);
  double diff = 0;
  for (std::size_t i = 0; i < real.size(); ++i) diff = std::max(diff, std::abs(real[i] - scored[i]));
  EXPECT_GT(diff, 1e-6);
}

// With K = 1 identity, no mask tokens, no length head, the objective is the
// left-to-right CE: slot i sees [B] and the i-1 previous characters only.
TEST(SampleLoss, BaselineEqualsPlainLeftToRightCrossEntropy) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.mask_tokens = false;
  cfg.length_source = LengthSource::kNone;
  Model<double> m(cfg, 5);
  const std::string word = "h3ll0";
  const auto label = m.codec().encode(word);
  const int L = label.length(), T = m.max_len(), W = T + 2;
  Graph<double> g(false);
  const auto v = sample_loss(g, m, patches_for(m, word), label, {identity_permutation(L)}, L, 0.25);
  EXPECT_FALSE(v.len_loss.valid());

  const auto enc = m.encode(render_word(word, RenderParams{}));
  const auto ctx = build_context(label.ids, L, T, m.codec().specials());
  double expect = 0;
  for (int i = 0; i <= L; ++i) {
    // The decoder queries slots 1..i+1; only the last row matters. Its word
    // side opens [B] and the first i characters, everything else is blocked.
    BlockMask bm(i + 1, 2 * W, 1);
    for (int c = 0; c <= i; ++c) bm.set(i, c, false);
    Graph<double> gi(false);
    Var logits = m.decoder().forward(gi, gi.input(enc.visual), ctx, bm, 1, i + 1);
    expect += ce_oracle(gi.value(logits).row(i), i < L ? label.ids[i] : 36);
  }
  expect /= L + 1;
  EXPECT_NEAR(g.value(v.total)(0, 0), expect, 1e-9);
}

TEST(SampleLoss, RejectsBadInputs) {
  Model<double> m(ModelConfig::toy(), 1);
  const auto label = m.codec().encode("ab");
  const auto patches = patches_for(m, "ab");
  Graph<double> g(false);
  EXPECT_THROW(sample_loss(g, m, patches, label, {}, 2, 0.25), ConfigError);
  EXPECT_THROW(sample_loss(g, m, patches, label, {{{1, 2}}}, 0, 0.25), LengthError);
  EXPECT_THROW(sample_loss(g, m, patches, label, {{{1, 2}}}, 9, 0.25), LengthError);
  EXPECT_THROW(sample_loss(g, m, patches, LabelSequence{}, {{{1}}}, 1, 0.25), LengthError);
}

TEST(TrainStep, DecompositionHoldsEveryStepAndLossIsFinite) {
  Model<float> m(ModelConfig::toy(), 1);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.iterations = 10;
  tc.permutations = 6;
  tc.perturb_ratio = 0.5;
  Trainer tr(m, tc);
  const auto ex = toy_examples(m, 16, 8, 3);
  for (int s = 0; s < 6; ++s) {
    const auto batch = pointers(ex, s * 4, 4);
    const LossBreakdown l = tr.train_step(batch);
    EXPECT_TRUE(std::isfinite(l.total));
    EXPECT_GT(l.total, 0.0);
    EXPECT_NEAR(l.total, tc.lambda * l.len_loss + (1 - tc.lambda) * l.rec_loss, 1e-6) << s;
  }
  EXPECT_EQ(tr.step(), 6);
  EXPECT_EQ(tr.optimizer().steps(), 6);
}

TEST(TrainStep, SeedFixedRunsAreIdentical) {
  auto run = [] {
    Model<float> m(ModelConfig::toy(), 9);
    TrainConfig tc;
    tc.batch_size = 4;
    tc.iterations = 5;
    tc.log_every = 1;
    const auto ex = toy_examples(m, 12, 8, 5);
    Trainer tr(m, tc);
    std::vector<double> losses;
    Trainer::FitOptions opts;
    opts.on_log = [&](std::int64_t, const LossBreakdown& l, double) { losses.push_back(l.total); };
    tr.fit(ex, opts);
    std::vector<float> w;
    for (const auto& p : m.params().all()) w.insert(w.end(), p->value.flat().begin(), p->value.flat().end());
    return std::make_pair(losses, w);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first.size(), 5u);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

// 200 words of length <= 6 on the toy model: the loss halves within 500 steps.
TEST(TrainStep, ToyRunLossHalvesWithin500Steps) {
  Model<float> m(ModelConfig::toy(), 1);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.iterations = 500;
  tc.max_lr = 2e-3;
  tc.log_every = 1;
  const auto ex = toy_examples(m, 200, 6, 11);
  Trainer tr(m, tc);
  std::vector<double> losses;
  Trainer::FitOptions opts;
  opts.on_log = [&](std::int64_t, const LossBreakdown& l, double) { losses.push_back(l.total); };
  tr.fit(ex, opts);
  ASSERT_EQ(losses.size(), 500u);
  double first = 0, last = 0;
  for (int i = 0; i < 20; ++i) {
    first += losses[i] / 20;
    last += losses[losses.size() - 1 - i] / 20;
  }
  EXPECT_LE(last, 0.5 * first) << "first " << first << " last " << last;
}

TEST(LrSchedule, OneCycleThenConstantTail) {
  const LrSchedule s{1e-3, 1000, 0.85, 0.3, 25.0, 0.01};
  EXPECT_NEAR(s.at(0), 1e-3 / 25, 1e-15);
  const std::int64_t cycle = 850, up = 255;
  EXPECT_NEAR(s.at(up), 1e-3, 1e-12);
  for (std::int64_t t = 1; t <= up; ++t) EXPECT_GE(s.at(t), s.at(t - 1));
  for (std::int64_t t = up + 1; t < cycle; ++t) EXPECT_LE(s.at(t), s.at(t - 1));
  EXPECT_NEAR(s.at(cycle - 1), 1e-5, 1e-7);
  for (std::int64_t t = cycle; t < 1000; ++t) EXPECT_DOUBLE_EQ(s.at(t), 1e-5);
  // mid-warmup is the cosine midpoint
  const double mid = s.at(up / 2) - 1e-3 / 25;
  const double expect = (1e-3 - 1e-3 / 25) * 0.5 * (1 - std::cos(std::numbers::pi * (up / 2) / double(up)));
  EXPECT_NEAR(mid, expect, 1e-12);
}

TEST(Adam, MatchesTextbookUpdate) {
  ParamStore<float> ps;
  auto& p = ps.add("w", 1, 3);
  p.value = Matrix<float>(1, 3, std::vector<float>{0.5f, -1.0f, 2.0f});
  Adam adam(ps, AdamConfig{});
  std::vector<double> w{0.5, -1.0, 2.0}, m(3, 0), v(3, 0);
  for (int t = 1; t <= 4; ++t) {
    for (int j = 0; j < 3; ++j) p.grad(0, j) = static_cast<float>(0.3 * (j + 1) * (t % 2 ? 1 : -1));
    adam.step(ps, 0.01);
    for (int j = 0; j < 3; ++j) {
      const double gj = p.grad(0, j);
      m[j] = 0.9 * m[j] + 0.1 * gj;
      v[j] = 0.999 * v[j] + 0.001 * gj * gj;
      const double mh = m[j] / (1 - std::pow(0.9, t)), vh = v[j] / (1 - std::pow(0.999, t));
      w[j] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p.value(0, j), w[j], 1e-6) << t << "," << j;
    }
  }
}

TEST(Adam, ClipGradNormRescalesToTheBound) {
  ParamStore<float> ps;
  auto& a = ps.add("a", 1, 2);
  auto& b = ps.add("b", 1, 1);
  a.grad = Matrix<float>(1, 2, std::vector<float>{3, 0});
  b.grad = Matrix<float>(1, 1, std::vector<float>{4});
  EXPECT_NEAR(clip_grad_norm(ps, 1.0), 5.0, 1e-6);
  EXPECT_NEAR(a.grad(0, 0), 0.6f, 1e-6);
  EXPECT_NEAR(b.grad(0, 0), 0.8f, 1e-6);
  EXPECT_NEAR(clip_grad_norm(ps, 10.0), 1.0, 1e-6);
  EXPECT_NEAR(a.grad(0, 0), 0.6f, 1e-6);
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig c;
  c.permutations = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lambda = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.permutations = 6;
  c.max_lr = 0.01;
  const nlohmann::json j = c;
  const TrainConfig back = j.get<TrainConfig>();
  EXPECT_EQ(back.permutations, 6);
  EXPECT_DOUBLE_EQ(back.max_lr, 0.01);
  EXPECT_EQ(nlohmann::json(back), j);
}
