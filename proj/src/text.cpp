#include "fluentprobe/text.hpp"

#include <unicode/uchar.h>
#include <unicode/uscript.h>
#include <unicode/utf8.h>

namespace fluentprobe::text {

std::vector<CodePoint> decode(std::string_view s) {
  std::vector<CodePoint> out;
  out.reserve(s.size());
  const auto* bytes = reinterpret_cast<const uint8_t*>(s.data());
  const auto n = static_cast<int32_t>(s.size());
  int32_t i = 0;
  while (i < n) {
    const int32_t start = i;
    UChar32 c;
    U8_NEXT(bytes, i, n, c);
    if (c < 0) c = 0xFFFD;
    out.push_back({static_cast<char32_t>(c), static_cast<std::size_t>(start),
                   static_cast<std::size_t>(i)});
  }
  return out;
}

bool is_space(char32_t c) { return u_isUWhiteSpace(static_cast<UChar32>(c)); }

bool is_punct(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) ||
           (c >= 0x5B && c <= 0x60) || (c >= 0x7B && c <= 0x7E);
  }
  return u_ispunct(static_cast<UChar32>(c));
}

bool is_cjk(char32_t c) {
  const auto script = static_cast<UScriptCode>(
      u_getIntPropertyValue(static_cast<UChar32>(c), UCHAR_SCRIPT));
  return script == USCRIPT_HAN || script == USCRIPT_HIRAGANA ||
         script == USCRIPT_KATAKANA || script == USCRIPT_HANGUL;
}

bool is_word_char(char32_t c) { return !is_space(c) && !is_punct(c); }

std::string_view trim_right(std::string_view s) {
  const auto cps = decode(s);
  std::size_t end = s.size();
  for (auto it = cps.rbegin(); it != cps.rend() && is_space(it->value); ++it) end = it->begin;
  return s.substr(0, end);
}

std::string_view trim(std::string_view s) {
  const auto cps = decode(s);
  std::size_t begin = 0;
  for (const auto& cp : cps) {
    if (!is_space(cp.value)) break;
    begin = cp.end;
  }
  return trim_right(s.substr(begin));
}

bool ends_with_space(std::string_view s) {
  const auto cps = decode(s);
  return !cps.empty() && is_space(cps.back().value);
}

bool only_punct_or_space(std::string_view s) {
  for (const auto& cp : decode(s)) {
    if (!is_space(cp.value) && !is_punct(cp.value)) return false;
  }
  return true;
}

std::vector<Word> words(std::string_view s) {
  std::vector<Word> out;
  Word current{0, 0, {}};
  bool open = false;
  auto flush = [&] {
    if (open) out.push_back(std::move(current));
    current = Word{0, 0, {}};
    open = false;
  };
  for (const auto& cp : decode(s)) {
    if (!is_word_char(cp.value)) {
      flush();
      continue;
    }
    if (is_cjk(cp.value)) {
      flush();
      out.push_back(Word{cp.begin, cp.end, std::u32string(1, cp.value)});
      continue;
    }
    if (!open) {
      current.begin = cp.begin;
      open = true;
    }
    current.end = cp.end;
    current.chars.push_back(cp.value);
  }
  flush();
  return out;
}

std::size_t common_prefix(const std::u32string& a, const std::u32string& b) {
  std::size_t i = 0;
  while (i < a.size() && i < b.size() && a[i] == b[i]) ++i;
  return i;
}

std::size_t length(std::string_view s) { return decode(s).size(); }

bool on_word_boundaries(std::string_view s, std::size_t begin, std::size_t end) {
  if (begin >= end || end > s.size()) return false;
  const auto inner = decode(s.substr(begin, end - begin));
  if (inner.empty()) return false;
  if (begin > 0) {
    const auto before = decode(s.substr(0, begin));
    const char32_t prev = before.back().value;
    const char32_t first = inner.front().value;
    if (is_word_char(prev) && is_word_char(first) && !is_cjk(prev) && !is_cjk(first)) {
      return false;
    }
  }
  if (end < s.size()) {
    const auto after = decode(s.substr(end));
    const char32_t next = after.front().value;
    const char32_t last = inner.back().value;
    if (is_word_char(next) && is_word_char(last) && !is_cjk(next) && !is_cjk(last)) {
      return false;
    }
  }
  return true;
}

std::vector<std::size_t> find_whole_word(std::string_view hay, std::string_view needle) {
  std::vector<std::size_t> hits;
  if (needle.empty()) return hits;
  for (auto pos = hay.find(needle); pos != std::string_view::npos;
       pos = hay.find(needle, pos + 1)) {
    if (on_word_boundaries(hay, pos, pos + needle.size())) hits.push_back(pos);
  }
  return hits;
}

}  // namespace fluentprobe::text
