#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace ptyfed::checksum {

inline constexpr const char* kTreeAlgorithm = "sha256-tree-v1";

std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& file);

struct TreeDigest {
  std::string hex;
  std::uint64_t bytes = 0;
  std::size_t files = 0;
};

// SHA-256 over every regular file under root in sorted relative-path order. Each file
// contributes "<relative path>\0<size>\0" followed by its bytes. A plain file hashes as a
// tree with a single entry whose relative path is empty.
TreeDigest tree_sha256(const std::filesystem::path& root);

}  // namespace ptyfed::checksum
