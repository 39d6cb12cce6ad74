#include "vafuse/wav.hpp"

#include "vafuse/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace vafuse::dsp {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xfffe;

std::uint32_t le32(const std::string& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

std::uint16_t le16(const std::string& b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) | (static_cast<unsigned char>(b[at + 1]) << 8));
}

void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xffu));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace

void validate_clip(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate) {
    throw DataError("audio must be sampled at 16000 Hz, got " + std::to_string(clip.sample_rate));
  }
  if (clip.samples.empty()) throw DataError("audio clip is empty");
}

AudioClip decode_wav(const std::string& b) {
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0) {
    throw DataError("not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::string id = b.substr(pos, 4);
    const std::uint32_t len = le32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > b.size()) throw DataError("WAV chunk '" + id + "' overruns file");
    if (id == "fmt ") {
      if (len < 16) throw DataError("WAV fmt chunk too short");
      format = le16(b, body);
      channels = le16(b, body + 2);
      rate = le32(b, body + 4);
      bits = le16(b, body + 14);
      if (format == kFormatExtensible && len >= 26) format = le16(b, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError("WAV data chunk precedes fmt chunk");
      if (channels != 1) throw DataError("WAV must be mono, got " + std::to_string(channels) + " channels");
      AudioClip clip;
      clip.sample_rate = static_cast<int>(rate);
      if (format == kFormatPcm && bits == 16) {
        clip.samples.resize(len / 2);
        for (std::size_t i = 0; i < clip.samples.size(); ++i) {
          const auto s = static_cast<std::int16_t>(le16(b, body + 2 * i));
          clip.samples[i] = static_cast<double>(s) / 32768.0;
        }
      } else if (format == kFormatFloat && bits == 32) {
        clip.samples.resize(len / 4);
        for (std::size_t i = 0; i < clip.samples.size(); ++i) {
          clip.samples[i] = static_cast<double>(std::bit_cast<float>(le32(b, body + 4 * i)));
        }
      } else {
        throw DataError("unsupported WAV encoding (format " + std::to_string(format) + ", " +
                        std::to_string(bits) + " bits); expected PCM16 or float32");
      }
      validate_clip(clip);
      return clip;
    }
    pos = body + len + (len & 1u);
  }
  throw DataError("WAV file has no data chunk");
}

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return decode_wav(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string encode_wav(const AudioClip& clip, WavEncoding encoding) {
  const std::uint16_t bits = encoding == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint32_t bytes_per_sample = bits / 8u;
  const auto data_len = static_cast<std::uint32_t>(clip.samples.size() * bytes_per_sample);
  std::string out = "RIFF";
  put32(out, 36 + data_len);
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, encoding == WavEncoding::Pcm16 ? kFormatPcm : kFormatFloat);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put32(out, static_cast<std::uint32_t>(clip.sample_rate) * bytes_per_sample);
  put16(out, static_cast<std::uint16_t>(bytes_per_sample));
  put16(out, bits);
  out += "data";
  put32(out, data_len);
  for (double s : clip.samples) {
    if (encoding == WavEncoding::Pcm16) {
      const double scaled = std::round(std::clamp(s, -1.0, 1.0) * 32767.0);
      put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
    } else {
      put32(out, std::bit_cast<std::uint32_t>(static_cast<float>(s)));
    }
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip, WavEncoding encoding) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  const auto bytes = encode_wav(clip, encoding);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace vafuse::dsp
