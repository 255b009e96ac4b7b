#include "xbm/world/grammar.hpp"

#include <algorithm>
#include <set>

#include "xbm/util/error.hpp"
#include "xbm/util/rng.hpp"

namespace xbm {

namespace {

std::vector<std::string> row_words(int rows) {
  if (rows == 2) return {"top", "bottom"};
  if (rows == 3) return {"top", "middle", "bottom"};
  return {};
}

std::vector<std::string> col_words(int cols) {
  if (cols == 2) return {"left", "right"};
  if (cols == 3) return {"left", "center", "right"};
  return {};
}

}  // namespace

std::vector<ObjectAttributes> scene_attributes(const Scene& scene) {
  std::vector<ObjectAttributes> out;
  for (const auto& o : scene.objects) out.push_back({o.shape, o.color, o.size, o.cell});
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> position_phrase(int cell, const SceneSpec& spec) {
  const int row = cell / spec.cols, col = cell % spec.cols;
  std::vector<std::string> out;
  const auto rw = row_words(spec.rows);
  const auto cw = col_words(spec.cols);
  if (!rw.empty()) out.push_back(rw[static_cast<std::size_t>(row)]);
  if (!cw.empty()) out.push_back(cw[static_cast<std::size_t>(col)]);
  if (out.empty()) out.emplace_back("center");
  return out;
}

CaptionOrder caption_order(std::uint64_t style_seed) {
  return (mix64(style_seed ^ 0x5354594C45ULL) & 1) ? CaptionOrder::column_major : CaptionOrder::row_major;
}

int max_caption_length(const SceneSpec& spec) {
  int longest_position = 0;
  for (int c = 0; c < spec.cells(); ++c)
    longest_position = std::max(longest_position, static_cast<int>(position_phrase(c, spec).size()));
  // "a size color shape in the" + position, comma separators, EOS.
  return spec.cells() * (6 + longest_position) + (spec.cells() - 1) + 1;
}

std::vector<int> caption(const Scene& scene, const SceneSpec& spec, std::uint64_t style_seed, int max_len,
                         const Vocabulary& vocab) {
  std::vector<SceneObject> objs = scene.objects;
  const auto key = [&](const SceneObject& o) {
    const int row = o.cell / spec.cols, col = o.cell % spec.cols;
    return caption_order(style_seed) == CaptionOrder::row_major ? row * spec.cols + col : col * spec.rows + row;
  };
  std::sort(objs.begin(), objs.end(), [&](const SceneObject& a, const SceneObject& b) { return key(a) < key(b); });
  std::vector<int> out;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const auto& o = objs[i];
    if (i) out.push_back(vocab.id(","));
    out.push_back(vocab.id("a"));
    out.push_back(vocab.id(size_words()[static_cast<std::size_t>(o.size)]));
    out.push_back(vocab.id(spec.colors.at(static_cast<std::size_t>(o.color))));
    out.push_back(vocab.id(spec.shapes.at(static_cast<std::size_t>(o.shape))));
    out.push_back(vocab.id("in"));
    out.push_back(vocab.id("the"));
    for (const auto& w : position_phrase(o.cell, spec)) out.push_back(vocab.id(w));
  }
  out.push_back(Vocabulary::kEos);
  if (static_cast<int>(out.size()) > max_len)
    fail(ErrorKind::config, "caption of " + std::to_string(out.size()) + " tokens exceeds max_len " +
                                std::to_string(max_len));
  return out;
}

ParseResult parse_caption(std::span<const int> tokens, const SceneSpec& spec, const Vocabulary& vocab) {
  ParseResult r;
  std::vector<std::string> words;
  for (int id : tokens) {
    if (id == Vocabulary::kEos) break;
    if (!vocab.contains_id(id) || vocab.is_special(id)) {
      r.error = "unexpected token id " + std::to_string(id);
      return r;
    }
    words.push_back(vocab.token(id));
  }
  const auto index_of = [](const std::vector<std::string>& v, const std::string& w) {
    const auto it = std::find(v.begin(), v.end(), w);
    return it == v.end() ? -1 : static_cast<int>(it - v.begin());
  };
  std::vector<std::vector<std::string>> cell_phrases;
  for (int c = 0; c < spec.cells(); ++c) cell_phrases.push_back(position_phrase(c, spec));

  std::size_t i = 0;
  std::set<int> cells;
  while (true) {
    const auto expect = [&](const char* w) {
      if (i < words.size() && words[i] == w) {
        ++i;
        return true;
      }
      return false;
    };
    if (!expect("a")) {
      r.error = "expected `a` at word " + std::to_string(i);
      return r;
    }
    if (i + 3 > words.size()) {
      r.error = "truncated object phrase";
      return r;
    }
    ObjectAttributes o;
    const int size = index_of(size_words(), words[i++]);
    o.color = index_of(spec.colors, words[i++]);
    o.shape = index_of(spec.shapes, words[i++]);
    if (size < 0 || o.color < 0 || o.shape < 0) {
      r.error = "bad size/color/shape near word " + std::to_string(i);
      return r;
    }
    o.size = static_cast<ObjectSize>(size);
    if (!expect("in") || !expect("the")) {
      r.error = "expected `in the` at word " + std::to_string(i);
      return r;
    }
    o.cell = -1;
    for (int c = 0; c < spec.cells(); ++c) {
      const auto& p = cell_phrases[static_cast<std::size_t>(c)];
      if (i + p.size() <= words.size() && std::equal(p.begin(), p.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) {
        // Prefer the longest matching phrase.
        if (o.cell < 0 || p.size() > cell_phrases[static_cast<std::size_t>(o.cell)].size()) o.cell = c;
      }
    }
    if (o.cell < 0) {
      r.error = "bad position at word " + std::to_string(i);
      return r;
    }
    i += cell_phrases[static_cast<std::size_t>(o.cell)].size();
    if (!cells.insert(o.cell).second) {
      r.error = "cell mentioned twice";
      return r;
    }
    r.objects.push_back(o);
    if (i == words.size()) break;
    if (!expect(",")) {
      r.error = "expected `,` at word " + std::to_string(i);
      return r;
    }
  }
  std::sort(r.objects.begin(), r.objects.end());
  r.ok = true;
  return r;
}

}  // namespace xbm
