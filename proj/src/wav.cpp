#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rvae/errors.hpp"
#include "rvae/signal.hpp"

namespace rvae {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
std::uint16_t u16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }

void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}
void put16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xFF));
  out.push_back(char(v >> 8));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path, int expected_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open WAV file " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) { return IoError(path.string() + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t len = u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16 || body + len > bytes.size()) throw fail("truncated fmt chunk");
      format = u16(chunk + 8);
      channels = u16(chunk + 10);
      rate = u32(chunk + 12);
      bits = u16(chunk + 22);
      if (format == kFormatExtensible) {
        if (len < 40) throw fail("truncated WAVE_FORMAT_EXTENSIBLE header");
        format = u16(chunk + 8 + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = std::min(len, bytes.size() - body);
      break;
    }
    pos = body + len + (len & 1);
  }
  if (!have_fmt) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (channels != 1) throw fail("expected mono audio, found " + std::to_string(channels) + " channels");
  if (int(rate) != expected_rate)
    throw fail("sample rate " + std::to_string(rate) + " Hz, expected " + std::to_string(expected_rate) +
               " Hz (resampling is not supported)");

  Waveform wave;
  wave.sample_rate = int(rate);
  if (format == kFormatPcm && bits == 16) {
    wave.samples.resize(data_len / 2);
    for (std::size_t i = 0; i < wave.samples.size(); ++i)
      wave.samples[i] = double(std::int16_t(u16(data + 2 * i))) / 32768.0;
  } else if (format == kFormatFloat && bits == 32) {
    wave.samples.resize(data_len / 4);
    for (std::size_t i = 0; i < wave.samples.size(); ++i) {
      const std::uint32_t raw = u32(data + 4 * i);
      float f;
      std::memcpy(&f, &raw, 4);
      wave.samples[i] = double(f);
    }
  } else {
    throw fail("unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
               " bits); expected 16-bit PCM or 32-bit float");
  }
  for (double x : wave.samples)
    if (!std::isfinite(x)) throw fail("non-finite sample");
  return wave;
}

void write_wav(const std::filesystem::path& path, const Waveform& wave, WavFormat format) {
  if (wave.sample_rate <= 0) throw ContractError("write_wav: sample rate must be positive");
  const std::uint16_t bits = format == WavFormat::pcm16 ? 16 : 32;
  const std::uint16_t block = bits / 8;
  const auto data_len = std::uint32_t(wave.samples.size() * block);
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  put32(out, 36 + data_len);
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, format == WavFormat::pcm16 ? kFormatPcm : kFormatFloat);
  put16(out, 1);
  put32(out, std::uint32_t(wave.sample_rate));
  put32(out, std::uint32_t(wave.sample_rate) * block);
  put16(out, block);
  put16(out, bits);
  out += "data";
  put32(out, data_len);
  for (double x : wave.samples) {
    if (format == WavFormat::pcm16) {
      const double q = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0);
      put16(out, std::uint16_t(std::int16_t(q)));
    } else {
      const float f = float(x);
      std::uint32_t raw;
      std::memcpy(&raw, &f, 4);
      put32(out, raw);
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write WAV file " + path.string());
  os.write(out.data(), std::streamsize(out.size()));
  if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace rvae
