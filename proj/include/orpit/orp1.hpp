#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "orpit/tensor.hpp"

namespace orpit {

// On-disk container shared by every checkpoint: magic "ORP1", one
// length-prefixed UTF-8 header of key=value lines, named f32 tensors (name,
// rank, dims, raw values, all little-endian), and a trailing CRC32 of
// everything prior. The header's "type" key tells checkpoint kinds apart.
struct Orp1File {
  std::string header;
  std::vector<std::pair<std::string, TensorData<float>>> tensors;
};

void write_orp1(const Orp1File& file, const std::filesystem::path& path);

// Validates magic, checksum, framing, and that every tensor value is finite;
// anything off is a FormatError (unreadable paths are IoError).
Orp1File read_orp1(const std::filesystem::path& path);

std::map<std::string, std::string> parse_header(const std::string& text);
long long header_int(const std::map<std::string, std::string>& kv, const std::string& key);
double header_double(const std::map<std::string, std::string>& kv, const std::string& key);
std::string header_str(const std::map<std::string, std::string>& kv, const std::string& key);

}  // namespace orpit
