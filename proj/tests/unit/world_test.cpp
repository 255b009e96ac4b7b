#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

#include "xbm/util/error.hpp"
#include "xbm/world/corpus.hpp"
#include "xbm/world/grammar.hpp"
#include "xbm/world/scene.hpp"
#include "xbm/world/vocab.hpp"

namespace xbm {
namespace {

const Vocabulary& V() { return Vocabulary::standard(); }

TEST(Vocabulary, SpecialIdsAreDistinctAndDense) {
  std::set<int> ids{Vocabulary::kPad, Vocabulary::kBos, Vocabulary::kEos, Vocabulary::kCls};
  EXPECT_EQ(ids.size(), 4u);
  for (int i = 0; i < V().size(); ++i) EXPECT_EQ(V().id(V().token(i)), i);
}

TEST(Vocabulary, SidecarRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "xbm_vocab_test.txt";
  V().write_sidecar(path);
  const Vocabulary back = Vocabulary::read_sidecar(path);
  ASSERT_EQ(back.size(), V().size());
  for (int i = 0; i < V().size(); ++i) EXPECT_EQ(back.token(i), V().token(i));
  std::filesystem::remove(path);
}

TEST(Scene, SameSeedSameScene) {
  const SceneSpec spec;
  for (std::uint64_t s = 0; s < 50; ++s) EXPECT_EQ(sample_scene(s, spec), sample_scene(s, spec));
}

TEST(Scene, SingleCellSpecHasOneObject) {
  SceneSpec spec;
  spec.rows = 1;
  spec.cols = 1;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Scene sc = sample_scene(s, spec);
    EXPECT_EQ(sc.objects.size(), 1u);
    EXPECT_EQ(sc.target, 0);
  }
}

TEST(Scene, ClassFrequenciesNearUniform) {
  const SceneSpec spec;
  std::map<int, int> counts;
  const int n = 10000;
  for (int s = 0; s < n; ++s) ++counts[scene_label(sample_scene(static_cast<std::uint64_t>(s), spec), spec)];
  ASSERT_EQ(static_cast<int>(counts.size()), spec.num_classes());
  const double expected = static_cast<double>(n) / spec.num_classes();
  for (const auto& [label, c] : counts) {
    EXPECT_GT(c, 0.8 * expected) << label;
    EXPECT_LT(c, 1.2 * expected) << label;
  }
}

TEST(Scene, ObjectCountsCoverOneToCells) {
  const SceneSpec spec;
  std::set<std::size_t> seen;
  for (std::uint64_t s = 0; s < 500; ++s) seen.insert(sample_scene(s, spec).objects.size());
  EXPECT_EQ(seen, (std::set<std::size_t>{1, 2, 3, 4}));
}

TEST(Scene, TargetIsLargestThenLowestCell) {
  std::vector<SceneObject> objs{{0, 0, ObjectSize::small, 0}, {1, 1, ObjectSize::large, 2}, {2, 0, ObjectSize::large, 3}};
  EXPECT_EQ(target_object(objs), 1);
  objs[1].size = ObjectSize::small;
  EXPECT_EQ(target_object(objs), 2);
  objs[2].size = ObjectSize::small;
  EXPECT_EQ(target_object(objs), 0);
}

TEST(Render, BackgroundMasksAndPermutation) {
  const SceneSpec spec;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Scene sc = sample_scene(s, spec);
    const Rendering r = render(sc, spec);
    const Rgb bg = background_palette()[static_cast<std::size_t>(sc.background)];
    ASSERT_EQ(r.masks.size(), sc.objects.size());
    for (int y = 0; y < spec.image_size; ++y)
      for (int x = 0; x < spec.image_size; ++x) {
        int covering = 0;
        for (const auto& m : r.masks) covering += m.bits[static_cast<std::size_t>(y * spec.image_size + x)];
        ASSERT_LE(covering, 1);  // disjoint
        const bool is_bg = r.image.pixel(y, x) == bg;
        ASSERT_EQ(covering == 0, is_bg) << "seed " << s << " pixel " << y << "," << x;
      }
    EXPECT_GT(r.masks[static_cast<std::size_t>(sc.target)].count(), 0);
    for (float v : r.image.rgb) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    Scene reversed = sc;
    std::reverse(reversed.objects.begin(), reversed.objects.end());
    EXPECT_EQ(render(reversed, spec).image, r.image);
  }
}

TEST(Render, LabelFromPixelsAgreesWithScene) {
  const SceneSpec spec;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Scene sc = sample_scene(s, spec);
    const Rendering r = render(sc, spec);
    EXPECT_EQ(label_from_rendering(r.image, r.masks, spec), scene_label(sc, spec)) << "seed " << s;
  }
}

TEST(Grammar, SingleObjectCaption) {
  const SceneSpec spec;
  Scene sc;
  sc.objects = {{0, 0, ObjectSize::small, 0}};
  const auto ids = caption(sc, spec, 1, 36);
  EXPECT_EQ(V().render(ids), "a small red circle in the top left");
  EXPECT_EQ(ids.back(), Vocabulary::kEos);
}

TEST(Grammar, RoundTripOverRandomScenes) {
  const SceneSpec spec;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Scene sc = sample_scene(s, spec);
    const auto ids = caption(sc, spec, s * 7, max_caption_length(spec));
    const auto parsed = parse_caption(ids, spec);
    ASSERT_TRUE(parsed.ok) << parsed.error;
    EXPECT_EQ(parsed.objects, scene_attributes(sc));
  }
}

TEST(Grammar, StyleSeedsReorderButPreserveAttributes) {
  const SceneSpec spec;
  Scene sc;
  sc.objects = {{0, 0, ObjectSize::small, 1}, {1, 1, ObjectSize::large, 2}};
  std::uint64_t a = 0, b = 0;
  while (caption_order(b) == caption_order(a)) ++b;
  const auto ca = caption(sc, spec, a, 36);
  const auto cb = caption(sc, spec, b, 36);
  EXPECT_NE(ca, cb);
  EXPECT_EQ(parse_caption(ca, spec).objects, parse_caption(cb, spec).objects);
}

TEST(Grammar, LongestCaptionFitsAndOverflowIsAnError) {
  const SceneSpec spec;
  Scene sc;
  for (int c = 0; c < 4; ++c) sc.objects.push_back({c % 4, c % 2, ObjectSize::large, c});
  const int n = max_caption_length(spec);
  EXPECT_EQ(static_cast<int>(caption(sc, spec, 0, n).size()), n);
  EXPECT_THROW(caption(sc, spec, 0, n - 1), Error);
}

TEST(Grammar, ParserRejectsGarbage) {
  const SceneSpec spec;
  EXPECT_FALSE(parse_caption(V().encode("a red small circle in the top left"), spec).ok);
  EXPECT_FALSE(parse_caption(V().encode("a small red circle in the top left , a small red circle in the top left"), spec).ok);
  EXPECT_FALSE(parse_caption(std::vector<int>{}, spec).ok);
}

TEST(Corpus, SplitsAreDisjointAndSized) {
  const SceneSpec spec;
  const auto plan = CorpusPlan::from_sizes(7, {50, 20, 10, 10, 5});
  const Corpora c = build_corpora(spec, plan, 36);
  std::set<std::uint64_t> seeds;
  std::size_t total = 0;
  for (const auto& s : c.splits) {
    total += s.size();
    for (const auto& ex : s.examples) seeds.insert(ex.seed);
  }
  EXPECT_EQ(seeds.size(), total);
  EXPECT_EQ(c[SplitId::pretrain].size(), 50u);
  for (const auto& ex : c[SplitId::train].examples) EXPECT_FALSE(ex.has_caption);
  for (const auto& ex : c[SplitId::pretrain].examples) EXPECT_TRUE(ex.has_caption);
  for (const auto& ex : c[SplitId::intervention].examples) EXPECT_TRUE(ex.has_caption);
}

TEST(Corpus, OverlappingRangesRejected) {
  CorpusPlan plan = CorpusPlan::from_sizes(1, {10, 10, 10, 10, 10});
  plan.ranges[3].start = plan.ranges[1].start + 5;
  EXPECT_THROW(build_corpora(SceneSpec{}, plan, 36), Error);
}

TEST(Corpus, RleRoundTrip) {
  const SceneSpec spec;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto r = render(sample_scene(s, spec), spec);
    for (const auto& m : r.masks) EXPECT_EQ(rle_decode(rle_encode(m), m.height, m.width), m);
  }
}

TEST(Corpus, SplitFileRoundTripIsExact) {
  const SceneSpec spec;
  const auto c = build_corpora(spec, CorpusPlan::from_sizes(3, {6, 4, 2, 2, 2}), 36);
  const auto path = std::filesystem::temp_directory_path() / "xbm_split_test.bin";
  write_split(path, c[SplitId::pretrain], spec);
  const auto back = read_split(path);
  EXPECT_EQ(back.spec, spec);
  ASSERT_EQ(back.split.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& a = c[SplitId::pretrain].examples[i];
    const auto& b = back.split.examples[i];
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.label, b.label);
    EXPECT_EQ(a.caption, b.caption);
    EXPECT_EQ(a.masks, b.masks);
    EXPECT_EQ(a.target, b.target);
  }
  std::filesystem::remove(path);
}

TEST(Corpus, TruncatedFileIsDataError) {
  const SceneSpec spec;
  const auto c = build_corpora(spec, CorpusPlan::from_sizes(3, {2, 1, 1, 1, 1}), 36);
  const auto path = std::filesystem::temp_directory_path() / "xbm_split_trunc.bin";
  write_split(path, c[SplitId::train], spec);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  try {
    read_split(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace xbm
