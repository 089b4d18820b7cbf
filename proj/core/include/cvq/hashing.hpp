#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace cvq {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);
/// Git blob object id: SHA-1 over "blob <size>\0" followed by the content.
std::string git_blob_id(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace cvq
