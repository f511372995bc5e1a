#include "s2tl/text.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "s2tl/errors.hpp"

namespace s2tl {

std::vector<int> TokenSequence::input() const {
  if (ids.empty()) return {};
  return {ids.begin(), ids.end() - 1};
}

std::vector<int> TokenSequence::target() const {
  if (ids.empty()) return {};
  return {ids.begin() + 1, ids.end()};
}

std::u32string utf8_decode(std::string_view text) {
  std::u32string out;
  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    int len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > text.size()) throw DataError("invalid UTF-8 sequence");
    char32_t cp = len == 1 ? c : len == 2 ? (c & 0x1F) : len == 3 ? (c & 0x0F) : (c & 0x07);
    for (int k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(text[i + k]);
      if ((cc >> 6) != 0x2) throw DataError("invalid UTF-8 continuation byte");
      cp = (cp << 6) | (cc & 0x3F);
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string utf8_encode(std::u32string_view text) {
  std::string out;
  for (char32_t cp : text) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<char32_t> symbols) : symbols_(std::move(symbols)) {
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    const char32_t s = symbols_[i];
    if (s == U'\n' || s == U'\r') throw DataError("vocabulary symbols cannot be line breaks");
    if (!index_.emplace(s, static_cast<int>(i) + kReservedTokens).second) {
      throw DataError("duplicate vocabulary symbol '" + utf8_encode(std::u32string(1, s)) + "'");
    }
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
  if (texts.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::map<char32_t, std::size_t> freq;
  for (const auto& t : texts)
    for (char32_t c : utf8_decode(t)) ++freq[c];
  if (freq.empty()) throw DataError("corpus contains no characters");
  std::vector<std::pair<char32_t, std::size_t>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<char32_t> symbols;
  for (const auto& [c, n] : items) symbols.push_back(c);
  return Vocabulary(std::move(symbols));
}

int Vocabulary::id(char32_t symbol) const {
  const auto it = index_.find(symbol);
  return it == index_.end() ? kUnk : it->second;
}

TokenSequence Vocabulary::encode(std::string_view text) const {
  TokenSequence seq;
  seq.ids.push_back(kBos);
  for (char32_t c : utf8_decode(text)) seq.ids.push_back(id(c));
  seq.ids.push_back(kEos);
  return seq;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::u32string out;
  for (int id : ids) {
    if (id < kReservedTokens) continue;
    const auto idx = static_cast<std::size_t>(id - kReservedTokens);
    if (idx < symbols_.size()) out.push_back(symbols_[idx]);
  }
  return utf8_encode(out);
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (char32_t c : symbols_) out += utf8_encode(std::u32string(1, c)) + "\n";
  return out;
}

Vocabulary Vocabulary::parse(std::string_view file_text) {
  std::vector<char32_t> symbols;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < file_text.size()) {
    const auto nl = file_text.find('\n', pos);
    if (nl == std::string_view::npos) throw DataError("vocabulary file lacks a final newline");
    ++line_no;
    const auto cps = utf8_decode(file_text.substr(pos, nl - pos));
    if (cps.size() != 1) {
      throw DataError("vocabulary line " + std::to_string(line_no) +
                      " must hold exactly one symbol");
    }
    symbols.push_back(cps[0]);
    pos = nl + 1;
  }
  return Vocabulary(std::move(symbols));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  out << serialize();
}

}  // namespace s2tl
