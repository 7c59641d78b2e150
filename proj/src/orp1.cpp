#include "orpit/orp1.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "orpit/errors.hpp"

namespace orpit {

namespace {

constexpr char kMagic[4] = {'O', 'R', 'P', '1'};

std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

// Bounds-checked little-endian reader; every overrun is a FormatError.
struct ByteReader {
  const std::uint8_t* p;
  std::size_t len;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > len) throw FormatError("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

void write_orp1(const Orp1File& file, const std::filesystem::path& path) {
  std::vector<std::uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32(buf, static_cast<std::uint32_t>(file.header.size()));
  buf.insert(buf.end(), file.header.begin(), file.header.end());
  for (const auto& [name, t] : file.tensors) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    put_u32(buf, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u64(buf, static_cast<std::uint64_t>(d));
    for (float v : t.data) put_u32(buf, std::bit_cast<std::uint32_t>(v));
  }
  put_u32(buf, crc32(buf.data(), buf.size()));

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("checkpoint: write failed: " + path.string());
}

Orp1File read_orp1(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open: " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(is)),
                                std::istreambuf_iterator<char>());

  if (buf.size() < 12) throw FormatError("checkpoint: truncated file");
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic (not an ORP1 file)");
  std::uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= static_cast<std::uint32_t>(buf[buf.size() - 4 + i]) << (8 * i);
  if (crc32(buf.data(), buf.size() - 4) != stored_crc)
    throw FormatError("checkpoint: checksum mismatch");

  ByteReader r{buf.data(), buf.size() - 4, 4};
  Orp1File file;
  file.header = r.bytes(r.u32());
  while (r.pos < r.len) {
    const std::string name = r.bytes(r.u32());
    if (name.empty()) throw FormatError("checkpoint: empty tensor name");
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError("checkpoint: bad rank for tensor " + name);
    TensorData<float> t;
    t.shape.resize(rank);
    std::size_t numel = 1;
    for (auto& d : t.shape) {
      const std::uint64_t v = r.u64();
      if (v == 0 || v > (1u << 30)) throw FormatError("checkpoint: bad dimension in " + name);
      d = static_cast<int>(v);
      numel *= d;
      if (numel > (1u << 30)) throw FormatError("checkpoint: oversized tensor " + name);
    }
    t.data.resize(numel);
    for (auto& v : t.data) v = std::bit_cast<float>(r.u32());
    for (float v : t.data)
      if (!std::isfinite(v)) throw FormatError("checkpoint: non-finite value in " + name);
    file.tensors.emplace_back(name, std::move(t));
  }
  return file;
}

std::map<std::string, std::string> parse_header(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint: malformed header line");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

long long header_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  try {
    return std::stoll(header_str(kv, key));
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception&) {
    throw FormatError("checkpoint: bad integer for header key " + key);
  }
}

double header_double(const std::map<std::string, std::string>& kv, const std::string& key) {
  try {
    return std::stod(header_str(kv, key));
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception&) {
    throw FormatError("checkpoint: bad number for header key " + key);
  }
}

std::string header_str(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("checkpoint: missing header key " + key);
  return it->second;
}

}  // namespace orpit
