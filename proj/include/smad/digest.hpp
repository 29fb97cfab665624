#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace smad {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
/// Lowercase hex SHA-256 of a file's contents. Throws an I/O error.
std::string file_sha256_hex(const std::filesystem::path& path);

}  // namespace smad
