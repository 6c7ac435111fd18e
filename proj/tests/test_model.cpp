#include <gtest/gtest.h>

#include <cmath>

#include "mpstr/errors.hpp"
#include "mpstr/model.hpp"
#include "mpstr/simd/kernels.hpp"
#include "mpstr/toy_data.hpp"

using namespace mpstr;

namespace {

Image test_image(const std::string& word = "k7z") { return render_word(word, RenderParams{}); }

ContextTokens context_for(const Model<float>& m, const std::string& word, int length) {
  return build_context(m.codec().encode(word).ids, length, m.max_len(), m.codec().specials());
}

}  // namespace

TEST(Patchify, LayoutAndNormalization) {
  EncoderConfig cfg = ModelConfig::toy().encoder;
  Image img(cfg.image_width, cfg.image_height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) img.at(x, y) = static_cast<std::uint8_t>((x * 7 + y * 13) % 256);
  const Matrix<double> p = patchify<double>(img, cfg);
  const int across = cfg.image_width / cfg.patch_width;
  ASSERT_EQ(p.rows(), across * (cfg.image_height / cfg.patch_height));
  ASSERT_EQ(p.cols(), cfg.patch_width * cfg.patch_height);
  for (int pr = 0; pr < cfg.image_height / cfg.patch_height; ++pr)
    for (int pc = 0; pc < across; ++pc)
      for (int r = 0; r < cfg.patch_height; ++r)
        for (int c = 0; c < cfg.patch_width; ++c) {
          const double px = img.at(pc * cfg.patch_width + c, pr * cfg.patch_height + r);
          EXPECT_DOUBLE_EQ(p(pr * across + pc, r * cfg.patch_width + c), (px / 255.0 - 0.5) / 0.5);
        }
}

TEST(Patchify, PatchCountForOtherGeometries) {
  EncoderConfig big = ModelConfig::toy().encoder;
  big.image_width = 128;
  big.image_height = 32;
  EXPECT_EQ(patchify<float>(Image(128, 32), big).rows(), 128);
  EncoderConfig one = big;
  one.image_width = 8;
  one.image_height = 4;
  EXPECT_EQ(patchify<float>(Image(8, 4), one).rows(), 1);
}

TEST(Patchify, RejectsWrongGeometry) {
  EXPECT_THROW(patchify<float>(Image(32, 16), ModelConfig::toy().encoder), ShapeError);
  EXPECT_THROW(patchify<float>(Image(64, 16, 3), ModelConfig::toy().encoder), ShapeError);
}

TEST(Encoder, OutputShapes) {
  Model<float> m(ModelConfig::toy(), 1);
  const auto enc = m.encode(test_image());
  EXPECT_EQ(enc.length_token.rows(), 1);
  EXPECT_EQ(enc.length_token.cols(), 64);
  EXPECT_EQ(enc.visual.rows(), 32);
  EXPECT_EQ(enc.visual.cols(), 64);
  const auto len = m.word_length_logits(enc);
  EXPECT_EQ(len.rows(), 1);
  EXPECT_EQ(len.cols(), m.max_len());
}

// With a zero patch projection the image cannot reach the encoder, so its
// output is the same for any two inputs.
TEST(Encoder, ZeroProjectionLeavesOnlyPositionAndTokenEmbeddings) {
  Model<float> m(ModelConfig::toy(), 1);
  for (const auto& p : m.params().all())
    if (p->name.rfind("enc.patch", 0) == 0) p->value.fill(0.0f);
  Image black(64, 16), noise(64, 16);
  for (std::size_t i = 0; i < noise.pixels.size(); ++i) noise.pixels[i] = static_cast<std::uint8_t>(i * 37);
  const auto a = m.encode(black);
  const auto b = m.encode(noise);
  EXPECT_EQ(a.length_token, b.length_token);
  EXPECT_EQ(a.visual, b.visual);
}

TEST(Encoder, LengthTokenPositionEmbeddingMatters) {
  Model<float> m(ModelConfig::toy(), 1);
  const Image img = test_image();
  const auto before = m.encode(img);
  auto& pos = m.encoder().position_embedding();
  for (float& x : pos.value.row(0)) x = 0.0f;
  const auto after = m.encode(img);
  EXPECT_FALSE(before.length_token == after.length_token);
}

TEST(Model, SameSeedSameWeightsDifferentSeedDifferent) {
  Model<float> a(ModelConfig::toy(), 3), b(ModelConfig::toy(), 3), c(ModelConfig::toy(), 4);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params().all().size(); ++i) {
    EXPECT_EQ(a.params().all()[i]->value, b.params().all()[i]->value);
    any_diff |= !(a.params().all()[i]->value == c.params().all()[i]->value);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, CharHeadOnlyWhenConfigured) {
  ModelConfig cfg = ModelConfig::toy();
  Model<float> word(cfg, 1);
  EXPECT_EQ(word.params().find("charlen.queries"), nullptr);
  cfg.length_source = LengthSource::kChar;
  Model<float> chr(cfg, 1);
  ASSERT_NE(chr.params().find("charlen.queries"), nullptr);
  const auto slots = chr.char_length_logits(chr.encode(test_image()));
  EXPECT_EQ(slots.rows(), cfg.max_len);
  EXPECT_EQ(slots.cols(), 2);
  const int l = chr.predict_length(chr.encode(test_image()));
  EXPECT_GE(l, 1);
  EXPECT_LE(l, cfg.max_len);
}

TEST(LengthReadout, WordLogitsArgmaxWithLowestIndexTie) {
  const std::vector<float> a{0.1f, 3.0f, 3.0f, -1.0f};
  EXPECT_EQ(length_from_word_logits<float>(a), 2);
  std::vector<float> onehot(25, 0.0f);
  onehot[4] = 1.0f;
  EXPECT_EQ(length_from_word_logits<float>(onehot), 5);
  const std::vector<float> uniform(25, 0.5f);
  EXPECT_EQ(length_from_word_logits<float>(uniform), 1);
}

TEST(LengthReadout, SlotCountClampedToRange) {
  Matrix<float> none(4, 2);
  for (int r = 0; r < 4; ++r) none(r, 0) = 1.0f;
  EXPECT_EQ(length_from_slot_logits(none), 1);
  Matrix<float> three(4, 2);
  for (int r = 0; r < 4; ++r) three(r, r < 3 ? 1 : 0) = 1.0f;
  EXPECT_EQ(length_from_slot_logits(three), 3);
  Matrix<float> all(4, 2);
  for (int r = 0; r < 4; ++r) all(r, 1) = 1.0f;
  EXPECT_EQ(length_from_slot_logits(all), 4);
}

TEST(Context, LayoutOfBothHalves) {
  const SpecialTokens sp = SpecialTokens::after(Charset::default36());
  const std::vector<int> tok{4, 9};
  const ContextTokens ctx = build_context(tok, 3, 5, sp);
  const std::vector<int> word{sp.bos, 4, 9, sp.pad, sp.eos, sp.pad, sp.pad};
  ASSERT_EQ(ctx.ids.size(), 14u);
  for (int i = 0; i < 7; ++i) {
    EXPECT_EQ(ctx.ids[i], word[i]) << i;
    EXPECT_EQ(ctx.ids[7 + i], sp.mask) << i;
  }
  EXPECT_THROW(build_context(tok, 1, 5, sp), LengthError);
  EXPECT_THROW(build_context(tok, 6, 5, sp), LengthError);
}

// Keys the mask blocks must not influence any output bit.
TEST(Decoder, BlockedContextIsBitwiseInert) {
  Model<float> m(ModelConfig::toy(), 2);
  const auto enc = m.encode(test_image());
  const int L = 3;
  const auto sched = build_nar_mask(L, m.max_len());
  const auto pad = build_pad_mask(L, m.max_len());
  ContextTokens ctx = context_for(m, "k7z", L);
  const Matrix<float> base = m.decode(enc, ctx, sched, pad);
  // NAR blocks word positions 1..T+1; padding blocks everything past L+1.
  for (int j = 1; j < m.max_len() + 2; ++j) ctx.ids[j] = (j * 5) % 36;
  for (int j = L + 2; j < m.max_len() + 2; ++j) ctx.ids[m.max_len() + 2 + j] = 7;
  EXPECT_EQ(m.decode(enc, ctx, sched, pad), base);
  // while a visible key does change the result
  ctx.ids[0] = 3;
  EXPECT_FALSE(m.decode(enc, ctx, sched, pad) == base);
}

TEST(Decoder, AttentionRowsAreDistributionsOverUnblockedKeys) {
  Model<float> m(ModelConfig::toy(), 2);
  const auto enc = m.encode(test_image());
  const int L = 3, T = m.max_len(), cols = 2 * (T + 2);
  const auto sched = build_train_mask(Permutation{{3, 1, 2}}, L, T);
  const auto pad = build_pad_mask(L, T);
  const BlockMask bm = combine(sched, pad);
  std::vector<float> probs;
  m.decode_with_attention(enc, context_for(m, "k7z", L), sched, pad, probs);
  const int heads = m.config().decoder.heads, rows = T + 1;
  ASSERT_EQ(probs.size(), static_cast<std::size_t>(heads * rows * cols));
  for (int h = 0; h < heads; ++h)
    for (int r = 0; r < rows; ++r) {
      double sum = 0;
      bool any_open = false;
      for (int c = 0; c < cols; ++c) {
        const float p = probs[(h * rows + r) * cols + c];
        if (bm.at(r, c)) {
          EXPECT_EQ(p, 0.0f);
        }
        any_open |= !bm.at(r, c);
        sum += p;
      }
      EXPECT_NEAR(sum, any_open ? 1.0 : 0.0, 1e-5) << "head " << h << " row " << r;
    }
}

TEST(Decoder, StackedBlocksMatchSeparateDecodes) {
  Model<float> m(ModelConfig::toy(), 5);
  const auto enc = m.encode(test_image("ab12"));
  const int L = 4, T = m.max_len();
  const auto pad = build_pad_mask(L, T);
  const auto ctx = context_for(m, "ab12", L);
  const std::vector<AttentionSchedule> scheds{build_train_mask(Permutation{{1, 2, 3, 4}}, L, T),
                                              build_train_mask(Permutation{{4, 2, 1, 3}}, L, T),
                                              build_cloze_mask(L, T)};
  std::vector<BlockMask> parts;
  for (const auto& s : scheds) parts.push_back(m.decoder_mask(s, pad));
  Graph<float> g(false);
  Var visual = g.input(enc.visual);
  const Matrix<float> all = g.value(m.decoder().forward(g, visual, ctx, stack(parts), 3, T + 1));
  for (int b = 0; b < 3; ++b) {
    const Matrix<float> one = m.decode(enc, ctx, scheds[b], pad);
    for (int r = 0; r < T + 1; ++r)
      for (int c = 0; c < one.cols(); ++c) EXPECT_NEAR(all(b * (T + 1) + r, c), one(r, c), 1e-5);
  }
  EXPECT_THROW(m.decoder().forward(g, visual, ctx, stack(parts), 2, T + 1), ShapeError);
}

TEST(Decoder, WithoutMaskTokensTheMaskHalfIsBlocked) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.mask_tokens = false;
  Model<float> m(cfg, 1);
  const int T = m.max_len();
  const BlockMask bm = m.decoder_mask(build_nar_mask(3, T), build_pad_mask(3, T));
  for (int r = 0; r < T + 1; ++r)
    for (int c = T + 2; c < 2 * (T + 2); ++c) EXPECT_TRUE(bm.at(r, c));
  // [B] still visible to the valid rows
  for (int r = 0; r <= 3; ++r) EXPECT_FALSE(bm.at(r, 0));
}

TEST(Model, DoubleCastAgreesWithFloat) {
  Model<float> m(ModelConfig::toy(), 6);
  Model<double> d = m.cast<double>();
  const Image img = test_image("q9");
  const auto ef = m.encode(img);
  const auto ed = d.encode(img);
  for (std::size_t i = 0; i < ef.visual.size(); ++i) EXPECT_NEAR(ef.visual.flat()[i], ed.visual.flat()[i], 1e-4);
  const auto lf = m.word_length_logits(ef);
  const auto ld = d.word_length_logits(ed);
  for (int i = 0; i < lf.cols(); ++i) EXPECT_NEAR(lf(0, i), ld(0, i), 1e-4);
}

// The whole forward pass on the scalar kernels and on the vector kernels.
TEST(Model, ScalarAndVectorKernelsAgreeEndToEnd) {
  if (!simd::avx2_supported()) GTEST_SKIP() << "no AVX2 on this machine";
  Model<float> m(ModelConfig::toy(), 8);
  const Image img = test_image("m4x");
  const int T = m.max_len();
  const auto before = simd::active_isa();
  auto run = [&] {
    const auto enc = m.encode(img);
    return m.decode(enc, context_for(m, "m4x", 3), build_train_mask(Permutation{{2, 3, 1}}, 3, T),
                    build_pad_mask(3, T));
  };
  simd::set_active_isa(simd::Isa::kScalar);
  const Matrix<float> ref = run();
  simd::set_active_isa(simd::Isa::kAvx2);
  const Matrix<float> vec = run();
  simd::set_active_isa(before);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(ref.flat()[i], vec.flat()[i], 1e-4);
}
