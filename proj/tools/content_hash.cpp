#include "content_hash.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <memory>

#include <openssl/evp.h>

#include "mixhop/errors.hpp"

namespace mixhop::cli {

namespace {

std::string sha1_hex(std::string_view header, std::string_view body) {
  const std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                                     &EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), body.data(), body.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &length) != 1) {
    throw Error("SHA-1 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string blob_hash(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  return sha1_hex(header, bytes);
}

std::string file_blob_hash(const std::filesystem::path& path) { return blob_hash(read_file(path)); }

std::string content_hash(const std::vector<std::filesystem::path>& inputs) {
  std::vector<std::string> lines;
  for (const auto& input : inputs) {
    if (std::filesystem::is_regular_file(input)) {
      lines.push_back(file_blob_hash(input) + " " + input.filename().generic_string());
      continue;
    }
    if (!std::filesystem::is_directory(input)) throw IoError("no such input: " + input.string());
    for (const auto& entry : std::filesystem::recursive_directory_iterator(input)) {
      if (!entry.is_regular_file()) continue;
      const auto rel = std::filesystem::relative(entry.path(), input).generic_string();
      lines.push_back(file_blob_hash(entry.path()) + " " + rel);
    }
  }
  std::sort(lines.begin(), lines.end());
  std::string listing;
  for (const auto& line : lines) listing += line + "\n";
  return blob_hash(listing);
}

}  // namespace mixhop::cli
