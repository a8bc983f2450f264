#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace toolbridge {

/// Ordered lowercase tokens drawn from [a-z0-9]+.
using TokenStream = std::vector<std::string>;

namespace detail {

// ASCII folding for U+00C0..U+00FF. Empty entries are separators.
inline constexpr std::string_view kLatin1Fold[64] = {
    "a", "a", "a", "a", "a", "a", "ae", "c", "e", "e", "e", "e", "i", "i", "i", "i",
    "d", "n", "o", "o", "o", "o", "o", "",  "o", "u", "u", "u", "u", "y", "th", "ss",
    "a", "a", "a", "a", "a", "a", "ae", "c", "e", "e", "e", "e", "i", "i", "i", "i",
    "d", "n", "o", "o", "o", "o", "o", "",  "o", "u", "u", "u", "u", "y", "th", "y",
};

// ASCII folding for Latin Extended-A, U+0100..U+017F, as [first, last] ranges.
struct FoldRange {
  char32_t first;
  char32_t last;
  std::string_view ascii;
};

inline constexpr FoldRange kLatinExtAFold[] = {
    {0x100, 0x105, "a"},  {0x106, 0x10D, "c"}, {0x10E, 0x111, "d"}, {0x112, 0x11B, "e"},
    {0x11C, 0x123, "g"},  {0x124, 0x127, "h"}, {0x128, 0x131, "i"}, {0x132, 0x133, "ij"},
    {0x134, 0x135, "j"},  {0x136, 0x138, "k"}, {0x139, 0x142, "l"}, {0x143, 0x14B, "n"},
    {0x14C, 0x151, "o"},  {0x152, 0x153, "oe"}, {0x154, 0x159, "r"}, {0x15A, 0x161, "s"},
    {0x162, 0x167, "t"},  {0x168, 0x173, "u"}, {0x174, 0x175, "w"}, {0x176, 0x178, "y"},
    {0x179, 0x17E, "z"},  {0x17F, 0x17F, "s"},
};

inline std::string_view fold_code_point(char32_t cp) {
  if (cp >= 0xC0 && cp <= 0xFF) return kLatin1Fold[cp - 0xC0];
  if (cp >= 0x100 && cp <= 0x17F) {
    for (const auto& r : kLatinExtAFold) {
      if (cp >= r.first && cp <= r.last) return r.ascii;
    }
  }
  return {};
}

// Decodes one UTF-8 sequence starting at text[i]; advances i. Malformed
// input decodes to U+FFFD and consumes one byte.
inline char32_t next_code_point(std::string_view text, std::size_t& i) {
  const auto lead = static_cast<unsigned char>(text[i]);
  std::size_t len = 0;
  char32_t cp = 0;
  if (lead < 0x80) {
    ++i;
    return lead;
  } else if ((lead & 0xE0) == 0xC0) {
    len = 2;
    cp = lead & 0x1F;
  } else if ((lead & 0xF0) == 0xE0) {
    len = 3;
    cp = lead & 0x0F;
  } else if ((lead & 0xF8) == 0xF0) {
    len = 4;
    cp = lead & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  if (i + len > text.size()) {
    ++i;
    return 0xFFFD;
  }
  for (std::size_t k = 1; k < len; ++k) {
    const auto cont = static_cast<unsigned char>(text[i + k]);
    if ((cont & 0xC0) != 0x80) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | (cont & 0x3F);
  }
  i += len;
  return cp;
}

}  // namespace detail

/// Lowercases, folds Latin accents to ASCII and splits on every character
/// outside [a-z0-9]. No stemming, no stopwords.
inline TokenStream tokenize(std::string_view text) {
  TokenStream tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const char32_t cp = detail::next_code_point(text, i);
    if (cp < 0x80) {
      const char c = static_cast<char>(cp);
      if (c >= 'a' && c <= 'z') {
        current += c;
      } else if (c >= 'A' && c <= 'Z') {
        current += static_cast<char>(c - 'A' + 'a');
      } else if (c >= '0' && c <= '9') {
        current += c;
      } else {
        flush();
      }
      continue;
    }
    const auto folded = detail::fold_code_point(cp);
    if (folded.empty()) {
      flush();
    } else {
      current += folded;
    }
  }
  flush();
  return tokens;
}

inline std::string join_tokens(const TokenStream& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

}  // namespace toolbridge
