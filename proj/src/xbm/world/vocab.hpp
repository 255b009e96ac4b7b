#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace xbm {

/// Grammatical class of a lexicon word, used by the caption grammar and the
/// phrase chunker.
enum class WordClass { special, determiner, preposition, punctuation, size, color, shape, position };

/// Dense token table. Ids 0..3 are the special tokens PAD, BOS, EOS, CLS.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kCls = 3;

  explicit Vocabulary(std::vector<std::string> tokens);

  /// The fixed lexicon shared by every model and corpus.
  static const Vocabulary& standard();

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  std::optional<int> find(std::string_view token) const;
  /// Throws invalid_argument for unknown tokens.
  int id(std::string_view token) const;
  bool contains_id(int id) const { return id >= 0 && id < size(); }
  bool is_special(int id) const { return id >= 0 && id <= kCls; }
  WordClass word_class(int id) const { return classes_.at(static_cast<std::size_t>(id)); }

  /// Ids of all non-special tokens.
  std::vector<int> word_ids() const;

  /// Space-separated surface text up to (not including) the first EOS; PAD
  /// tokens are skipped.
  std::string render(std::span<const int> ids) const;
  /// Inverse of render for space-separated text (no EOS appended).
  std::vector<int> encode(std::string_view text) const;

  /// One token per line; id equals zero-based line number.
  void write_sidecar(const std::filesystem::path& path) const;
  static Vocabulary read_sidecar(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::vector<WordClass> classes_;
  std::unordered_map<std::string, int> index_;
};

/// Lexicon entries.
struct ColorDef {
  const char* name;
  float r, g, b;
};

const std::vector<std::string>& size_words();
const std::vector<std::string>& shape_words();
const std::vector<ColorDef>& color_table();
const std::vector<std::string>& position_words();

}  // namespace xbm
