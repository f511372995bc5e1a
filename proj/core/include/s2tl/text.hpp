#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace s2tl {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kReservedTokens = 4;

/// Token ids framed as BOS ... EOS.
struct TokenSequence {
  std::vector<int> ids;

  std::size_t size() const { return ids.size(); }
  /// Decoder input: every id except the final EOS.
  std::vector<int> input() const;
  /// Training targets: every id except the leading BOS.
  std::vector<int> target() const;
};

std::u32string utf8_decode(std::string_view text);
std::string utf8_encode(std::u32string_view text);

/// Character-level vocabulary. Ids 0..3 are PAD, BOS, EOS, UNK; symbol i of
/// the inventory has id i + 4.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<char32_t> symbols);

  /// Inventory sorted by descending frequency, ties by ascending codepoint.
  static Vocabulary build(std::span<const std::string> texts);
  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary parse(std::string_view file_text);

  void save(const std::filesystem::path& path) const;
  /// One UTF-8 symbol per line.
  std::string serialize() const;

  std::size_t size() const { return symbols_.size() + kReservedTokens; }
  const std::vector<char32_t>& symbols() const { return symbols_; }
  int id(char32_t symbol) const;

  TokenSequence encode(std::string_view text) const;
  /// Drops reserved ids and maps the rest back to characters.
  std::string decode(std::span<const int> ids) const;
  std::string decode(const TokenSequence& seq) const { return decode(seq.ids); }

  bool operator==(const Vocabulary& other) const { return symbols_ == other.symbols_; }

 private:
  std::vector<char32_t> symbols_;
  std::map<char32_t, int> index_;
};

}  // namespace s2tl
