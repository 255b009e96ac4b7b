#include "xbm/world/vocab.hpp"

#include <algorithm>
#include <fstream>

#include "xbm/util/error.hpp"

namespace xbm {

const std::vector<std::string>& size_words() {
  static const std::vector<std::string> w{"small", "large"};
  return w;
}

const std::vector<std::string>& shape_words() {
  static const std::vector<std::string> w{"circle", "square", "triangle", "cross", "diamond", "ring", "star"};
  return w;
}

// Channel values are exactly representable in binary32 so images survive the
// f32 dataset encoding unchanged.
const std::vector<ColorDef>& color_table() {
  static const std::vector<ColorDef> c{
      {"red", 1.0f, 0.0f, 0.0f},    {"green", 0.0f, 1.0f, 0.0f},   {"blue", 0.0f, 0.0f, 1.0f},
      {"yellow", 1.0f, 1.0f, 0.0f}, {"purple", 0.5f, 0.0f, 1.0f},  {"orange", 1.0f, 0.5f, 0.0f},
      {"cyan", 0.0f, 1.0f, 1.0f},   {"white", 1.0f, 1.0f, 1.0f},   {"pink", 1.0f, 0.5f, 0.75f},
      {"gray", 0.5f, 0.5f, 0.5f},   {"brown", 0.5f, 0.25f, 0.0f},
  };
  return c;
}

const std::vector<std::string>& position_words() {
  static const std::vector<std::string> w{"top", "bottom", "middle", "left", "right", "center"};
  return w;
}

namespace {

WordClass classify(const std::string& tok, std::size_t index) {
  if (index <= static_cast<std::size_t>(Vocabulary::kCls)) return WordClass::special;
  if (tok == "a" || tok == "the") return WordClass::determiner;
  if (tok == "in") return WordClass::preposition;
  if (tok == ",") return WordClass::punctuation;
  const auto in = [&](const std::vector<std::string>& v) { return std::find(v.begin(), v.end(), tok) != v.end(); };
  if (in(size_words())) return WordClass::size;
  if (in(shape_words())) return WordClass::shape;
  if (in(position_words())) return WordClass::position;
  for (const auto& c : color_table())
    if (tok == c.name) return WordClass::color;
  fail(ErrorKind::data, "vocabulary: token `" + tok + "` is not in the lexicon");
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 4 || tokens_[0] != "<pad>" || tokens_[1] != "<bos>" || tokens_[2] != "<eos>" ||
      tokens_[3] != "<cls>")
    fail(ErrorKind::data, "vocabulary must start with <pad> <bos> <eos> <cls>");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      fail(ErrorKind::data, "vocabulary: duplicate token `" + tokens_[i] + "`");
    classes_.push_back(classify(tokens_[i], i));
  }
}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary v = [] {
    std::vector<std::string> t{"<pad>", "<bos>", "<eos>", "<cls>", "a", "the", "in", ","};
    for (const auto& w : size_words()) t.push_back(w);
    for (const auto& c : color_table()) t.emplace_back(c.name);
    for (const auto& w : shape_words()) t.push_back(w);
    for (const auto& w : position_words()) t.push_back(w);
    return Vocabulary(std::move(t));
  }();
  return v;
}

const std::string& Vocabulary::token(int id) const {
  if (!contains_id(id)) fail(ErrorKind::invalid_argument, "unknown token id " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view token) const {
  const auto f = find(token);
  if (!f) fail(ErrorKind::invalid_argument, "unknown token `" + std::string(token) + "`");
  return *f;
}

std::vector<int> Vocabulary::word_ids() const {
  std::vector<int> out;
  for (int i = kCls + 1; i < size(); ++i) out.push_back(i);
  return out;
}

std::string Vocabulary::render(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && text[pos] == ' ') ++pos;
    if (pos >= text.size()) break;
    auto end = text.find(' ', pos);
    if (end == std::string_view::npos) end = text.size();
    out.push_back(id(text.substr(pos, end - pos)));
    pos = end;
  }
  return out;
}

void Vocabulary::write_sidecar(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocabulary(std::move(tokens));
}

}  // namespace xbm
