#pragma once

#include <cstdint>
#include <filesystem>

#include "orpit/signal.hpp"

namespace orpit {

// Round half away from zero, clamp to [-32768, 32767].
std::int16_t quantize_sample(float v);

// Mono 16-bit PCM little-endian RIFF/WAVE only. Reading anything else is a
// FormatError; filesystem trouble is an IoError.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace orpit
