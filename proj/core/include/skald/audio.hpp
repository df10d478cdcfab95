// SPDX-License-Identifier: Apache-2.0
/**
 * @file   audio.hpp
 * @brief  RIFF/WAVE PCM decoding and mono channel views.
 *
 * Supports integer PCM at 16 or 24 bit, 1 or 2 channels. Samples are scaled
 * to [-1, 1] by 1 / 2^(bits-1); 24-bit words are little-endian 3-byte
 * sign-extended. Unknown RIFF chunks are skipped.
 */

#ifndef SKALD_AUDIO_HPP
#define SKALD_AUDIO_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "skald/common.hpp"

namespace skald {

/// Decode failures, one kind per distinguishable cause.
class WavError : public DataError {
public:
  enum class Kind { malformed_header, unsupported_format, truncated_data };

  WavError(Kind kind, const std::string &msg) : DataError(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

/// Decoded PCM clip. Immutable once built; safe to share across threads.
struct AudioClip {
  std::vector<std::vector<double>> samples; // one vector per channel, in [-1, 1]
  int sample_rate = 0;
  int channels() const { return int(samples.size()); }
  size_t length() const { return samples.empty() ? 0 : samples[0].size(); }
  double duration() const {
    return sample_rate > 0 ? double(length()) / sample_rate : 0.0;
  }
};

enum class ChannelView { left, right, mid, diff };

/// Single-channel signal derived from a clip.
struct MonoSignal {
  std::vector<double> samples;
  int sample_rate = 0;
  ChannelView view = ChannelView::mid;
};

/// Parses a RIFF/WAVE byte stream into an AudioClip.
AudioClip decode_wav(std::span<const uint8_t> bytes);

/// Encodes a clip as integer PCM WAV at the given depth (16 or 24 bit).
/// Values are rounded to the nearest step and clamped to the integer range.
std::vector<uint8_t> encode_wav(const AudioClip &clip, int bits_per_sample);

/// Extracts one mono view. left/right/diff need a stereo clip; mid accepts
/// mono (identity) or stereo ((L+R)/2). diff is L-R.
MonoSignal channel_view(const AudioClip &clip, ChannelView view);

const char *channel_view_name(ChannelView view);
ChannelView channel_view_from_name(const std::string &name);

} // namespace skald

#endif // SKALD_AUDIO_HPP
