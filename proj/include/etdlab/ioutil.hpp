#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace etdlab {

std::string read_text(const std::filesystem::path& path);

/// Writes to "<path>.tmp" then renames over the target.
void write_text_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace etdlab
