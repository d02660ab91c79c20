#include "ptyfed/checksum.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <memory>
#include <vector>

#include "ptyfed/errors.hpp"

namespace ptyfed::checksum {
namespace fs = std::filesystem;

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
  }

  void update(const void* data, std::size_t size) {
    if (size > 0 && EVP_DigestUpdate(ctx_.get(), data, size) != 1) throw Error("sha256: update failed");
  }

  void update_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot read " + file.string());
    std::array<char, 1 << 16> buffer;
    while (in) {
      in.read(buffer.data(), buffer.size());
      update(buffer.data(), static_cast<std::size_t>(in.gcount()));
    }
  }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), digest.data(), &len) != 1) throw Error("sha256: final failed");
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(digits[digest[i] >> 4]);
      out.push_back(digits[digest[i] & 0xf]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_hex(std::span<const std::byte> bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string file_sha256(const fs::path& file) {
  Sha256 h;
  h.update_file(file);
  return h.hex();
}

TreeDigest tree_sha256(const fs::path& root) {
  std::vector<std::pair<std::string, fs::path>> files;
  if (fs::is_regular_file(root)) {
    files.emplace_back(std::string{}, root);
  } else if (fs::is_directory(root)) {
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
      if (entry.is_regular_file()) files.emplace_back(fs::relative(entry.path(), root).generic_string(), entry.path());
    }
  } else {
    throw IoError("cannot digest " + root.string() + ": no such file or directory");
  }
  std::sort(files.begin(), files.end());

  Sha256 h;
  TreeDigest digest;
  for (const auto& [rel, path] : files) {
    const auto size = fs::file_size(path);
    const std::string header = rel + '\0' + std::to_string(size) + '\0';
    h.update(header.data(), header.size());
    h.update_file(path);
    digest.bytes += size;
    ++digest.files;
  }
  digest.hex = h.hex();
  return digest;
}

}  // namespace ptyfed::checksum
