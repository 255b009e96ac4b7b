#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xbm/world/scene.hpp"

namespace xbm {

struct Example {
  std::uint64_t seed = 0;  // scene seed; unique across all splits
  Image image;
  int label = 0;
  bool has_caption = false;
  std::vector<int> caption;  // EOS-terminated, no PAD
  std::vector<Mask> masks;   // per object, cell order
  int target = 0;            // index of the target object's mask

  const Mask& target_mask() const { return masks.at(static_cast<std::size_t>(target)); }
};

struct Split {
  std::string name;
  std::vector<Example> examples;
  std::size_t size() const { return examples.size(); }
};

struct SeedRange {
  std::uint64_t start = 0;
  std::uint64_t count = 0;
};

enum class SplitId { pretrain = 0, train = 1, val = 2, test = 3, intervention = 4 };
inline constexpr std::array<const char*, 5> kSplitNames{"pretrain", "train", "val", "test", "intervention"};

struct CorpusPlan {
  std::array<SeedRange, 5> ranges{};

  /// Consecutive, disjoint seed ranges starting at data_seed * 2^32.
  static CorpusPlan from_sizes(std::uint64_t data_seed, const std::array<std::uint64_t, 5>& sizes);
};

struct Corpora {
  std::array<Split, 5> splits;

  Split& operator[](SplitId id) { return splits[static_cast<std::size_t>(id)]; }
  const Split& operator[](SplitId id) const { return splits[static_cast<std::size_t>(id)]; }
};

/// One example from one scene seed. Captions use a style seed derived from
/// the scene seed.
Example make_example(std::uint64_t seed, const SceneSpec& spec, bool with_caption, int max_len);

/// Throws a data error if any two seed ranges overlap or a size is zero.
/// Pretrain and intervention splits carry captions; the target train, val and
/// test splits carry labels only.
Corpora build_corpora(const SceneSpec& spec, const CorpusPlan& plan, int max_len);

/// Binary split file ("XBMD"): header with magic, version, counts and the
/// scene spec echoed as UTF-8, then one little-endian record per example.
void write_split(const std::filesystem::path& path, const Split& split, const SceneSpec& spec);

struct LoadedSplit {
  Split split;
  SceneSpec spec;
};
LoadedSplit read_split(const std::filesystem::path& path);

/// Run-length encoding of a binary mask: alternating run lengths, starting
/// with a (possibly empty) run of zeros.
std::vector<std::uint16_t> rle_encode(const Mask& mask);
Mask rle_decode(const std::vector<std::uint16_t>& runs, int height, int width);

}  // namespace xbm
