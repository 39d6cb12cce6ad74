#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace vafuse::dsp {

inline constexpr int kSampleRate = 16000;

struct AudioClip {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = kSampleRate;
};

enum class WavEncoding { Pcm16, Float32 };

/// Reads a RIFF/WAVE file. Only mono 16 kHz PCM16 or IEEE float32 is accepted.
AudioClip read_wav(const std::filesystem::path& path);
AudioClip decode_wav(const std::string& bytes);

std::string encode_wav(const AudioClip& clip, WavEncoding encoding);
void write_wav(const std::filesystem::path& path, const AudioClip& clip, WavEncoding encoding);

/// Throws DataError unless the clip is non-empty and sampled at 16 kHz.
void validate_clip(const AudioClip& clip);

}  // namespace vafuse::dsp
