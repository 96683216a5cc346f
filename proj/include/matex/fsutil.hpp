#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace matex {

// Writes via a sibling temp file and renames over `path`. Throws Error(Io).
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace matex
