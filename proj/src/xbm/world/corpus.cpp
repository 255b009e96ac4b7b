#include "xbm/world/corpus.hpp"

#include <algorithm>

#include "xbm/util/binio.hpp"
#include "xbm/util/error.hpp"
#include "xbm/util/rng.hpp"
#include "xbm/world/grammar.hpp"

namespace xbm {

namespace {
constexpr char kMagic[] = "XBMD";
constexpr std::uint16_t kVersion = 1;
}  // namespace

CorpusPlan CorpusPlan::from_sizes(std::uint64_t data_seed, const std::array<std::uint64_t, 5>& sizes) {
  CorpusPlan p;
  std::uint64_t next = data_seed << 32;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    p.ranges[i] = {next, sizes[i]};
    next += sizes[i];
  }
  return p;
}

Example make_example(std::uint64_t seed, const SceneSpec& spec, bool with_caption, int max_len) {
  const Scene scene = sample_scene(seed, spec);
  Rendering r = render(scene, spec);
  Example ex;
  ex.seed = seed;
  ex.image = std::move(r.image);
  ex.masks = std::move(r.masks);
  ex.label = scene_label(scene, spec);
  ex.target = scene.target;
  if (with_caption) {
    ex.has_caption = true;
    ex.caption = caption(scene, spec, mix64(seed ^ 0xCA7710ULL), max_len);
  }
  return ex;
}

Corpora build_corpora(const SceneSpec& spec, const CorpusPlan& plan, int max_len) {
  spec.validate();
  for (std::size_t i = 0; i < plan.ranges.size(); ++i) {
    if (plan.ranges[i].count == 0) fail(ErrorKind::data, std::string("split ") + kSplitNames[i] + " has size 0");
    for (std::size_t j = i + 1; j < plan.ranges.size(); ++j) {
      const auto& a = plan.ranges[i];
      const auto& b = plan.ranges[j];
      if (a.start < b.start + b.count && b.start < a.start + a.count)
        fail(ErrorKind::data, std::string("seed ranges of splits ") + kSplitNames[i] + " and " + kSplitNames[j] +
                                  " overlap");
    }
  }
  Corpora c;
  for (std::size_t i = 0; i < plan.ranges.size(); ++i) {
    const auto id = static_cast<SplitId>(i);
    const bool captions = id == SplitId::pretrain || id == SplitId::intervention;
    Split& s = c.splits[i];
    s.name = kSplitNames[i];
    s.examples.reserve(plan.ranges[i].count);
    for (std::uint64_t k = 0; k < plan.ranges[i].count; ++k)
      s.examples.push_back(make_example(plan.ranges[i].start + k, spec, captions, max_len));
  }
  return c;
}

std::vector<std::uint16_t> rle_encode(const Mask& mask) {
  std::vector<std::uint16_t> runs;
  std::uint8_t current = 0;
  std::uint32_t len = 0;
  for (std::uint8_t b : mask.bits) {
    if (b != current) {
      runs.push_back(static_cast<std::uint16_t>(len));
      current = b;
      len = 0;
    }
    ++len;
  }
  runs.push_back(static_cast<std::uint16_t>(len));
  return runs;
}

Mask rle_decode(const std::vector<std::uint16_t>& runs, int height, int width) {
  Mask m{height, width, {}};
  m.bits.reserve(static_cast<std::size_t>(height * width));
  std::uint8_t v = 0;
  for (auto r : runs) {
    m.bits.insert(m.bits.end(), r, v);
    v ^= 1;
  }
  if (static_cast<int>(m.bits.size()) != height * width) fail(ErrorKind::data, "mask run lengths do not cover the image");
  return m;
}

void write_split(const std::filesystem::path& path, const Split& split, const SceneSpec& spec) {
  if (spec.image_size * spec.image_size > 65535) fail(ErrorKind::config, "image too large for u16 mask runs");
  ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put(kVersion);
  w.put(static_cast<std::uint32_t>(split.examples.size()));
  w.put(static_cast<std::uint16_t>(spec.image_size));
  w.put(static_cast<std::uint16_t>(spec.image_size));
  w.put(static_cast<std::uint16_t>(spec.num_classes()));
  w.put_string(split.name);
  w.put_string(spec.to_text());
  for (const auto& ex : split.examples) {
    w.put(ex.seed);
    for (float v : ex.image.rgb) w.put(v);
    w.put(static_cast<std::uint16_t>(ex.label));
    w.put(static_cast<std::uint16_t>(ex.has_caption ? ex.caption.size() : 0));
    if (ex.has_caption)
      for (int t : ex.caption) w.put(static_cast<std::uint16_t>(t));
    w.put(static_cast<std::uint16_t>(ex.masks.size()));
    w.put(static_cast<std::uint16_t>(ex.target));
    for (const auto& m : ex.masks) {
      const auto runs = rle_encode(m);
      w.put(static_cast<std::uint32_t>(runs.size()));
      for (auto r : runs) w.put(r);
    }
  }
  w.write_file(path);
}

LoadedSplit read_split(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  if (r.get_bytes(4) != std::string_view(kMagic, 4)) fail(ErrorKind::data, path.string() + ": bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kVersion) fail(ErrorKind::data, path.string() + ": unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  const int h = r.get<std::uint16_t>();
  const int w = r.get<std::uint16_t>();
  const int classes = r.get<std::uint16_t>();
  LoadedSplit out;
  out.split.name = r.get_string();
  out.spec = SceneSpec::from_text(r.get_string());
  if (h != out.spec.image_size || w != out.spec.image_size || classes != out.spec.num_classes())
    fail(ErrorKind::data, path.string() + ": header disagrees with the embedded spec");
  out.split.examples.resize(count);
  for (auto& ex : out.split.examples) {
    ex.seed = r.get<std::uint64_t>();
    ex.image = Image{h, w, std::vector<float>(static_cast<std::size_t>(h * w * 3))};
    for (auto& v : ex.image.rgb) v = r.get<float>();
    ex.label = r.get<std::uint16_t>();
    if (ex.label >= classes) fail(ErrorKind::data, path.string() + ": label out of range");
    const int clen = r.get<std::uint16_t>();
    ex.has_caption = clen > 0;
    for (int i = 0; i < clen; ++i) ex.caption.push_back(r.get<std::uint16_t>());
    const int nmasks = r.get<std::uint16_t>();
    ex.target = r.get<std::uint16_t>();
    if (nmasks == 0 || ex.target >= nmasks) fail(ErrorKind::data, path.string() + ": bad mask table");
    for (int m = 0; m < nmasks; ++m) {
      const auto nruns = r.get<std::uint32_t>();
      std::vector<std::uint16_t> runs(nruns);
      for (auto& run : runs) run = r.get<std::uint16_t>();
      ex.masks.push_back(rle_decode(runs, h, w));
    }
  }
  if (!r.at_end()) fail(ErrorKind::data, path.string() + ": trailing bytes");
  return out;
}

}  // namespace xbm
