#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ctxlog {

// 1,000 frequent English words, most frequent first. Source data is the
// wordfreq "en" top list filtered to alphabetic ASCII.
const std::vector<std::string>& common_words();
std::string_view common_words_text();

inline constexpr std::uint64_t kCommonWordsChecksum = 0x3b9e9ba0eadd5848ULL;
// FNV-1a 64 over common_words_text(); equals kCommonWordsChecksum.
std::uint64_t common_words_checksum();

} // namespace ctxlog
