#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "xbm/decode/decode.hpp"
#include "xbm/util/error.hpp"
#include "xbm/world/vocab.hpp"

namespace xbm::decode {
namespace {

using nn::ExplanationDecoder;
using nn::ModelConfig;
using nn::VisionEncoder;

ModelConfig tiny_config(int vocab, int len) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.max_len = len;
  c.d_model = 8;
  c.heads = 2;
  c.depth = 1;
  c.mlp_hidden = 16;
  c.image_size = 16;
  c.patch = 8;
  return c;
}

struct TinyModel {
  TinyModel(std::uint64_t seed, int vocab, int len, double sharpness = 3.0)
      : cfg(tiny_config(vocab, len)), enc("enc", cfg, seed), dec("dec", cfg, seed, true, false) {
    std::vector<ad::Parameter*> ps;
    dec.collect(ps);
    for (auto* p : ps)
      if (p->name == "dec.out.weight")
        for (auto& x : p->value.data()) x *= sharpness;
    CounterRng rng(seed, 99);
    image = testing::random_tensor(rng, {1, 16, 16, 3}, 0.0, 1.0);
  }
  ModelConfig cfg;
  VisionEncoder enc;
  ExplanationDecoder dec;
  ad::Tensor image;
};

std::vector<std::vector<int>> all_sequences(int vocab, int len) {
  std::vector<std::vector<int>> out{{}};
  for (int l = 0; l < len; ++l) {
    std::vector<std::vector<int>> next;
    for (const auto& s : out)
      for (int k = 0; k < vocab; ++k) {
        next.push_back(s);
        next.back().push_back(k);
      }
    out = std::move(next);
  }
  return out;
}

TEST(BeamSearch, FullWidthMatchesExhaustiveArgmax) {
  const auto seqs = all_sequences(5, 4);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TinyModel m(seed, 5, 4);
    ad::Tape t(false);
    ad::Var mem = m.enc(t, t.constant(m.image));
    // Oracle: teacher-forced scoring of all 625 sequences.
    std::vector<ad::Var> mems;
    const auto lps = [&] {
      std::vector<ad::Var> parts(seqs.size(), mem);
      return sequence_log_prob(m.dec, t, ad::concat(parts, 0), seqs);
    }();
    std::size_t best = 0;
    for (std::size_t i = 1; i < seqs.size(); ++i)
      if (lps[i] > lps[best]) best = i;
    const auto h = beam_search(m.dec, t, mem, 1, {625, 4, -1});
    EXPECT_EQ(h[0].tokens, seqs[best]) << "seed " << seed;
    EXPECT_NEAR(h[0].log_prob, lps[best], 1e-12);
  }
}

TEST(BeamSearch, FullWidthWithEosMatchesNormalisedOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TinyModel m(seed, 5, 4);
    ad::Tape t(false);
    ad::Var mem = m.enc(t, t.constant(m.image));
    std::vector<std::vector<int>> cands;
    for (int n = 0; n < 4; ++n)
      for (auto s : all_sequences(5, n)) {
        if (std::find(s.begin(), s.end(), Vocabulary::kEos) != s.end()) continue;
        s.push_back(Vocabulary::kEos);
        cands.push_back(s);
      }
    ASSERT_EQ(cands.size(), 85u);
    std::vector<ad::Var> parts(cands.size(), mem);
    const auto lps = sequence_log_prob(m.dec, t, ad::concat(parts, 0), cands);
    std::size_t best = 0;
    for (std::size_t i = 1; i < cands.size(); ++i) {
      const double si = lps[i] / static_cast<double>(cands[i].size());
      const double sb = lps[best] / static_cast<double>(cands[best].size());
      if (si > sb || (si == sb && cands[i] < cands[best])) best = i;
    }
    const auto h = beam_search(m.dec, t, mem, 1, {100, 4, Vocabulary::kEos});
    EXPECT_EQ(h[0].tokens, cands[best]) << "seed " << seed;
  }
}

TEST(BeamSearch, WidthOneIsGreedy) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TinyModel m(seed, 34, 12, 1.0);
    ad::Tape t(false);
    ad::Var mem = m.enc(t, t.constant(m.image));
    for (int eos : {-1, static_cast<int>(Vocabulary::kEos)}) {
      const auto b = beam_search(m.dec, t, mem, 1, {1, 12, eos});
      const auto g = greedy(m.dec, t, mem, 1, {1, 12, eos});
      EXPECT_EQ(b[0].tokens, g[0].tokens);
      EXPECT_EQ(b[0].log_prob, g[0].log_prob);
    }
  }
}

TEST(BeamSearch, LogProbIsRecomputable) {
  TinyModel m(3, 34, 10, 2.0);
  ad::Tape t(false);
  CounterRng rng(4);
  const ad::Tensor imgs = testing::random_tensor(rng, {3, 16, 16, 3}, 0.0, 1.0);
  ad::Var mem = m.enc(t, t.constant(imgs));
  const auto hs = beam_search(m.dec, t, mem, 3, {3, 10, Vocabulary::kEos});
  std::vector<std::vector<int>> seqs;
  for (const auto& h : hs) {
    seqs.push_back(h.tokens);
    EXPECT_EQ(h.tokens.back(), Vocabulary::kEos);
    EXPECT_LE(h.tokens.size(), 10u);
    for (int tok : h.tokens) EXPECT_FALSE(ExplanationDecoder::is_blocked(tok));
  }
  const auto lps = sequence_log_prob(m.dec, t, mem, seqs);
  for (std::size_t i = 0; i < hs.size(); ++i) EXPECT_NEAR(hs[i].log_prob, lps[i], 1e-10);
}

TEST(BeamSearch, BatchedEqualsOneByOne) {
  TinyModel m(5, 34, 10, 2.0);
  ad::Tape t(false);
  CounterRng rng(6);
  const ad::Tensor imgs = testing::random_tensor(rng, {3, 16, 16, 3}, 0.0, 1.0);
  ad::Var mem = m.enc(t, t.constant(imgs));
  const auto all = beam_search(m.dec, t, mem, 3, {4, 10, Vocabulary::kEos});
  for (std::int64_t b = 0; b < 3; ++b) {
    const auto one = beam_search(m.dec, t, ad::slice(mem, 0, b, 1), 1, {4, 10, Vocabulary::kEos});
    EXPECT_EQ(one[0].tokens, all[static_cast<std::size_t>(b)].tokens);
  }
}

TEST(BeamSearch, DominatesGreedyOnTinyDecoders) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    TinyModel m(seed, 5, 4);
    ad::Tape t(false);
    ad::Var mem = m.enc(t, t.constant(m.image));
    const auto g = greedy(m.dec, t, mem, 1, {1, 4, -1});
    const auto b = beam_search(m.dec, t, mem, 1, {5, 4, -1});
    EXPECT_GE(b[0].log_prob, g[0].log_prob) << "seed " << seed;
  }
}

TEST(BeamSearch, ScoreIsMonotoneInWidth) {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    TinyModel m(seed, 5, 4);
    ad::Tape t(false);
    ad::Var mem = m.enc(t, t.constant(m.image));
    double prev = -1e300;
    for (int w = 1; w <= 8; ++w) {
      const auto b = beam_search(m.dec, t, mem, 1, {w, 4, -1});
      EXPECT_GE(b[0].log_prob, prev) << "seed " << seed << " width " << w;
      prev = b[0].log_prob;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 400);
}

TEST(Schedule, ClosedFormAndClamp) {
  GumbelSchedule s;
  EXPECT_EQ(s.tau(0), 10.0);
  EXPECT_NEAR(s.tau(10000), 10.0 * std::exp(-1.0), 1e-12);
  EXPECT_NEAR(s.tau(10000), 3.6788, 1e-3);
  EXPECT_EQ(s.tau(10000000), 0.1);
  for (std::int64_t i = 0; i < 60000; i += 7) EXPECT_GE(s.tau(i), s.tau(i + 7));
  s.anneal = false;
  EXPECT_EQ(s.tau(5000), 10.0);
}

TEST(Gumbel, ZeroNoiseUnitTemperatureIsSoftmax) {
  ad::Tape t(false);
  ad::Var z = t.constant(ad::Tensor({1, 3}, {2.0, 1.0, 0.0}));
  ad::Var y = gumbel_softmax(z, {}, 1.0);
  ad::Var p = ad::softmax(z);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(y.value()[k], p.value()[k], 1e-15);
}

TEST(Gumbel, RejectsNonPositiveTemperature) {
  ad::Tape t(false);
  ad::Var z = t.constant(ad::Tensor({1, 3}, 0.0));
  EXPECT_THROW(gumbel_softmax(z, {}, 0.0), Error);
  EXPECT_THROW(gumbel_softmax(z, {}, -1.0), Error);
}

TEST(Gumbel, LowTemperatureArgmaxFrequencies) {
  const int n = 20000;
  std::vector<std::uint64_t> keys(n);
  for (int i = 0; i < n; ++i) keys[static_cast<std::size_t>(i)] = static_cast<std::uint64_t>(i);
  const auto noise = gumbel_noise(keys, 1, 3);
  ad::Tape t(false);
  ad::Tensor logits({n, 3});
  for (int i = 0; i < n; ++i) {
    logits[i * 3] = 2.0;
    logits[i * 3 + 1] = 1.0;
  }
  const ad::Tensor y = gumbel_softmax(t.constant(logits), t.constant(noise[0]), 0.05).value();
  std::vector<double> freq(3, 0.0);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
      s += y[i * 3 + k];
      if (y[i * 3 + k] > y[i * 3 + best]) best = k;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
    freq[static_cast<std::size_t>(best)] += 1.0 / n;
  }
  const double z = std::exp(2.0) + std::exp(1.0) + 1.0;
  EXPECT_NEAR(freq[0], std::exp(2.0) / z, 0.02);
  EXPECT_NEAR(freq[1], std::exp(1.0) / z, 0.02);
  EXPECT_NEAR(freq[2], 1.0 / z, 0.02);
}

TEST(Gumbel, HighTemperatureIsNearUniform) {
  std::vector<std::uint64_t> keys(2000);
  for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = i + 7;
  const auto noise = gumbel_noise(keys, 1, 3);
  ad::Tape t(false);
  ad::Tensor logits({2000, 3});
  for (int i = 0; i < 2000; ++i) {
    logits[i * 3] = 2.0;
    logits[i * 3 + 1] = 1.0;
  }
  const ad::Tensor y = gumbel_softmax(t.constant(logits), t.constant(noise[0]), 100.0).value();
  for (std::int64_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 0.05);
}

TEST(Gumbel, NoiseDependsOnlyOnKeyAndPosition) {
  const std::vector<std::uint64_t> a{11, 12, 13}, b{13};
  const auto na = gumbel_noise(a, 4, 5);
  const auto nb = gumbel_noise(b, 4, 5);
  for (int l = 0; l < 4; ++l)
    for (int k = 0; k < 5; ++k) EXPECT_EQ(na[static_cast<std::size_t>(l)][2 * 5 + k], nb[static_cast<std::size_t>(l)][k]);
}

TEST(GumbelSample, RowsOnSimplexAndDeterministic) {
  TinyModel m(2, 34, 8, 1.0);
  ad::Tape t(false);
  CounterRng rng(1);
  ad::Var mem = m.enc(t, t.constant(testing::random_tensor(rng, {2, 16, 16, 3}, 0.0, 1.0)));
  const std::vector<std::uint64_t> keys{5, 6};
  const auto noise = gumbel_noise(keys, 8, 34);
  const ad::Tensor a = gumbel_sample(m.dec, t, mem, 2, 8, 0.7, noise).value();
  const ad::Tensor b = gumbel_sample(m.dec, t, mem, 2, 8, 0.7, noise).value();
  ASSERT_EQ(a.shape(), (ad::Shape{2, 8, 34}));
  for (std::int64_t r = 0; r < 16; ++r) {
    double s = 0.0;
    for (int k = 0; k < 34; ++k) {
      EXPECT_GE(a[r * 34 + k], 0.0);
      s += a[r * 34 + k];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  for (std::int64_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(GumbelSample, GradientWithFrozenNoiseMatchesFiniteDifferences) {
  // Differentiate through the whole free-running sampler with respect to the
  // image embedding that conditions it.
  TinyModel m(4, 6, 3, 1.0);
  ad::Tape t0(false);
  const ad::Tensor mem0 = m.enc(t0, t0.constant(m.image)).value();
  const std::vector<std::uint64_t> keys{9};
  const auto noise = gumbel_noise(keys, 3, 6);
  testing::GradCase gc{{mem0}, [&](ad::Tape& t, const std::vector<ad::Var>& v) {
                         return gumbel_sample(m.dec, t, v[0], 1, 3, 0.8, noise);
                       }};
  const auto rep = testing::check_gradients(gc, 5);
  EXPECT_TRUE(rep.ok) << rep.detail;
}

}  // namespace
}  // namespace xbm::decode
