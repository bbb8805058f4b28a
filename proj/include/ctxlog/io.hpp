#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace ctxlog {

// Writes `contents` to a sibling temp file and renames it over `path`, so a
// reader never observes a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

// Shortest round-trippable decimal form of a double.
std::string format_real(double v);

} // namespace ctxlog
