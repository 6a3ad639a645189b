#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace mimil::io {

using Json = nlohmann::json;

std::string read_text(const std::filesystem::path& path);
// Writes via a temporary file and rename so readers never see partial output.
void write_text(const std::filesystem::path& path, const std::string& text);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

// Resolves `p` relative to `base_dir` unless it is absolute.
std::filesystem::path resolve(const std::filesystem::path& base_dir, const std::filesystem::path& p);

// Content hash of a file (FNV-1a hex).
std::string file_hash(const std::filesystem::path& path);

}  // namespace mimil::io
