#ifndef GAZESEG_CONTENT_HASH_HPP
#define GAZESEG_CONTENT_HASH_HPP

#include <filesystem>
#include <string>
#include <string_view>

namespace gazeseg {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace gazeseg

#endif
