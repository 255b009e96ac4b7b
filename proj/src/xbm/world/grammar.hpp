#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xbm/world/scene.hpp"
#include "xbm/world/vocab.hpp"

namespace xbm {

/// Everything a caption states about one object.
struct ObjectAttributes {
  int shape = 0;
  int color = 0;
  ObjectSize size = ObjectSize::small;
  int cell = 0;

  auto operator<=>(const ObjectAttributes&) const = default;
};

/// Attribute multiset of a scene, sorted.
std::vector<ObjectAttributes> scene_attributes(const Scene& scene);

/// Position words naming a cell, e.g. {"top", "left"}.
std::vector<std::string> position_phrase(int cell, const SceneSpec& spec);

/// Object orderings a caption may use; chosen by the style seed.
enum class CaptionOrder { row_major = 0, column_major = 1 };
CaptionOrder caption_order(std::uint64_t style_seed);

/// Upper bound on caption length (including EOS) for any scene of `spec`.
int max_caption_length(const SceneSpec& spec);

/// Grammar caption "a {size} {color} {shape} in the {position} , ..."
/// followed by EOS. Throws a config error if it would exceed max_len tokens.
std::vector<int> caption(const Scene& scene, const SceneSpec& spec, std::uint64_t style_seed, int max_len,
                         const Vocabulary& vocab = Vocabulary::standard());

struct ParseResult {
  bool ok = false;
  std::vector<ObjectAttributes> objects;  // sorted
  std::string error;
};

/// Inverse of caption(). Reads up to the first EOS (or the end); PAD after
/// EOS is ignored. Fails on any token sequence the grammar cannot produce,
/// including repeated cells.
ParseResult parse_caption(std::span<const int> tokens, const SceneSpec& spec,
                          const Vocabulary& vocab = Vocabulary::standard());

}  // namespace xbm
