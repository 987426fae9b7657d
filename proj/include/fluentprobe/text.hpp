#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// UTF-8 helpers shared by the matcher, the corpus validator and the report
// writers. Offsets are always byte offsets into the original UTF-8 string.
namespace fluentprobe::text {

struct CodePoint {
  char32_t value;
  std::size_t begin;
  std::size_t end;
};

// Invalid sequences decode to U+FFFD covering the offending bytes.
std::vector<CodePoint> decode(std::string_view s);

bool is_space(char32_t c);
bool is_punct(char32_t c);
// Han, kana and hangul: scripts written without word spacing, where every
// character is treated as its own word.
bool is_cjk(char32_t c);
bool is_word_char(char32_t c);

std::string_view trim(std::string_view s);
std::string_view trim_right(std::string_view s);
bool ends_with_space(std::string_view s);

// True when s consists solely of punctuation and whitespace (or is empty).
bool only_punct_or_space(std::string_view s);

struct Word {
  std::size_t begin;
  std::size_t end;
  std::u32string chars;
};

// Maximal runs of word characters; whitespace, punctuation (hyphens
// included) separate words, CJK characters stand alone.
std::vector<Word> words(std::string_view s);

std::size_t common_prefix(const std::u32string& a, const std::u32string& b);
std::size_t length(std::string_view s);

// A match [begin, end) sits on word boundaries when neither neighbour glues
// onto it as part of the same word.
bool on_word_boundaries(std::string_view s, std::size_t begin, std::size_t end);

// Whole-word occurrences of needle in hay, as begin offsets.
std::vector<std::size_t> find_whole_word(std::string_view hay, std::string_view needle);

}  // namespace fluentprobe::text
