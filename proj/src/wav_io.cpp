#include "orpit/wav_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "orpit/errors.hpp"

namespace orpit {

std::int16_t quantize_sample(float v) {
  const double scaled = static_cast<double>(v) * 32768.0;
  double q = scaled >= 0.0 ? std::floor(scaled + 0.5) : std::ceil(scaled - 0.5);
  if (q > 32767.0) q = 32767.0;
  if (q < -32768.0) q = -32768.0;
  return static_cast<std::int16_t>(q);
}

namespace {

void put_u32(std::vector<char>& buf, std::uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::vector<char>& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::uint32_t get_u32(const char* p) {
  return static_cast<std::uint8_t>(p[0]) | (static_cast<std::uint8_t>(p[1]) << 8) |
         (static_cast<std::uint8_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[3])) << 24);
}

std::uint16_t get_u16(const char* p) {
  return static_cast<std::uint16_t>(static_cast<std::uint8_t>(p[0]) |
                                    (static_cast<std::uint8_t>(p[1]) << 8));
}

}  // namespace

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  validate_waveform(w, "write_wav");
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  const std::uint32_t data_bytes = n * 2;
  std::vector<char> buf;
  buf.reserve(44 + data_bytes);
  buf.insert(buf.end(), {'R', 'I', 'F', 'F'});
  put_u32(buf, 36 + data_bytes);
  buf.insert(buf.end(), {'W', 'A', 'V', 'E'});
  buf.insert(buf.end(), {'f', 'm', 't', ' '});
  put_u32(buf, 16);
  put_u16(buf, 1);  // PCM
  put_u16(buf, 1);  // mono
  put_u32(buf, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(buf, static_cast<std::uint32_t>(w.sample_rate) * 2);  // byte rate
  put_u16(buf, 2);                                              // block align
  put_u16(buf, 16);                                             // bits per sample
  buf.insert(buf.end(), {'d', 'a', 't', 'a'});
  put_u32(buf, data_bytes);
  for (float v : w.samples) {
    const std::int16_t q = quantize_sample(v);
    buf.push_back(static_cast<char>(q & 0xff));
    buf.push_back(static_cast<char>((q >> 8) & 0xff));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_wav: cannot open " + path.string());
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write_wav: write failed for " + path.string());
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_wav: cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw FormatError("read_wav: not a RIFF/WAVE file: " + path.string());

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t sample_rate = 0;
  const char* data = nullptr;
  std::uint32_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const char* hdr = buf.data() + pos;
    const std::uint32_t chunk_len = get_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + chunk_len > buf.size())
      throw FormatError("read_wav: truncated chunk in " + path.string());
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw FormatError("read_wav: short fmt chunk in " + path.string());
      format = get_u16(buf.data() + body);
      channels = get_u16(buf.data() + body + 2);
      sample_rate = get_u32(buf.data() + body + 4);
      bits = get_u16(buf.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = buf.data() + body;
      data_len = chunk_len;
    }
    pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }
  if (!have_fmt || data == nullptr)
    throw FormatError("read_wav: missing fmt or data chunk in " + path.string());
  if (format != 1) throw FormatError("read_wav: only PCM supported: " + path.string());
  if (channels != 1) throw FormatError("read_wav: only mono supported: " + path.string());
  if (bits != 16) throw FormatError("read_wav: only 16-bit supported: " + path.string());
  if (sample_rate == 0) throw FormatError("read_wav: zero sample rate in " + path.string());
  if (data_len % 2 != 0) throw FormatError("read_wav: odd data length in " + path.string());

  Waveform w;
  w.sample_rate = static_cast<int>(sample_rate);
  w.samples.resize(data_len / 2);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const std::int16_t q = static_cast<std::int16_t>(get_u16(data + 2 * i));
    w.samples[i] = static_cast<float>(q) / 32768.f;
  }
  if (w.samples.empty()) throw FormatError("read_wav: empty data chunk in " + path.string());
  return w;
}

}  // namespace orpit
