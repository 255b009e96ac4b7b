#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace xbm {

/// Lower-case hex SHA-256 of a byte buffer.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace xbm
