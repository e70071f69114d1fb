#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mixhop::cli {

/// Hex SHA-1 of "blob <size>\0<bytes>", the id git gives a file.
std::string blob_hash(std::string_view bytes);
std::string file_blob_hash(const std::filesystem::path& path);

/// Hash over the sorted "<blob hash> <path>" lines of every regular file
/// under each input (paths relative to the input directory, or the file name
/// for a file input). The input's own location does not matter.
std::string content_hash(const std::vector<std::filesystem::path>& inputs);

}  // namespace mixhop::cli
