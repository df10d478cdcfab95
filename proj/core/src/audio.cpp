// SPDX-License-Identifier: Apache-2.0

#include "skald/audio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

namespace skald {

namespace {

struct ByteCursor {
  std::span<const uint8_t> bytes;
  size_t pos = 0;

  size_t remaining() const { return bytes.size() - pos; }

  void need(size_t n, WavError::Kind kind, const char *what) {
    if (remaining() < n)
      throw WavError(kind, std::string("wav: stream ends inside ") + what);
  }

  uint32_t u32(WavError::Kind kind, const char *what) {
    need(4, kind, what);
    uint32_t v = uint32_t(bytes[pos]) | uint32_t(bytes[pos + 1]) << 8 |
                 uint32_t(bytes[pos + 2]) << 16 | uint32_t(bytes[pos + 3]) << 24;
    pos += 4;
    return v;
  }

  uint16_t u16(WavError::Kind kind, const char *what) {
    need(2, kind, what);
    uint16_t v = uint16_t(bytes[pos]) | uint16_t(uint16_t(bytes[pos + 1]) << 8);
    pos += 2;
    return v;
  }

  std::array<char, 4> tag(WavError::Kind kind, const char *what) {
    need(4, kind, what);
    std::array<char, 4> t;
    std::memcpy(t.data(), bytes.data() + pos, 4);
    pos += 4;
    return t;
  }
};

bool tag_is(const std::array<char, 4> &t, const char *s) {
  return std::memcmp(t.data(), s, 4) == 0;
}

} // namespace

AudioClip decode_wav(std::span<const uint8_t> bytes) {
  using K = WavError::Kind;
  ByteCursor cur{bytes};

  if (!tag_is(cur.tag(K::malformed_header, "RIFF tag"), "RIFF"))
    throw WavError(K::malformed_header, "wav: missing RIFF tag");
  cur.u32(K::malformed_header, "RIFF size");
  if (!tag_is(cur.tag(K::malformed_header, "WAVE tag"), "WAVE"))
    throw WavError(K::malformed_header, "wav: missing WAVE tag");

  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  std::span<const uint8_t> data;
  bool have_data = false;

  while (cur.remaining() > 0) {
    if (cur.remaining() < 8)
      throw WavError(K::malformed_header, "wav: dangling chunk header");
    auto id = cur.tag(K::malformed_header, "chunk id");
    uint32_t size = cur.u32(K::malformed_header, "chunk size");
    if (tag_is(id, "fmt ")) {
      if (size < 16)
        throw WavError(K::malformed_header, "wav: fmt chunk too small");
      size_t end = cur.pos + size;
      format = cur.u16(K::malformed_header, "fmt");
      channels = cur.u16(K::malformed_header, "fmt");
      rate = cur.u32(K::malformed_header, "fmt");
      cur.u32(K::malformed_header, "fmt"); // byte rate
      cur.u16(K::malformed_header, "fmt"); // block align
      bits = cur.u16(K::malformed_header, "fmt");
      cur.need(end - cur.pos, K::malformed_header, "fmt chunk");
      cur.pos = end;
      have_fmt = true;
    } else if (tag_is(id, "data")) {
      if (cur.remaining() < size)
        throw WavError(K::truncated_data, "wav: data chunk shorter than declared");
      data = bytes.subspan(cur.pos, size);
      cur.pos += size;
      have_data = true;
    } else {
      // Unknown chunk (LIST, fact, bext, ...): skip payload plus pad byte.
      if (cur.remaining() < size)
        throw WavError(K::malformed_header, "wav: chunk shorter than declared");
      cur.pos += size;
    }
    if (cur.pos % 2 == 1 && cur.remaining() > 0)
      cur.pos += 1; // chunks are word-aligned
  }

  if (!have_fmt)
    throw WavError(K::malformed_header, "wav: no fmt chunk");
  if (!have_data)
    throw WavError(K::malformed_header, "wav: no data chunk");
  if (format != 1)
    throw WavError(K::unsupported_format,
                   "wav: only integer PCM (format 1) is supported, got format " +
                       std::to_string(format));
  if (bits != 16 && bits != 24)
    throw WavError(K::unsupported_format,
                   "wav: only 16 or 24 bit samples are supported, got " +
                       std::to_string(bits));
  if (channels != 1 && channels != 2)
    throw WavError(K::unsupported_format,
                   "wav: only 1 or 2 channels are supported, got " +
                       std::to_string(channels));
  if (rate == 0)
    throw WavError(K::malformed_header, "wav: zero sample rate");

  const size_t bytes_per_sample = bits / 8;
  const size_t frame_bytes = bytes_per_sample * channels;
  if (data.size() % frame_bytes != 0)
    throw WavError(K::truncated_data, "wav: data chunk ends mid-frame");
  const size_t frames = data.size() / frame_bytes;

  AudioClip clip;
  clip.sample_rate = int(rate);
  clip.samples.assign(channels, std::vector<double>(frames));
  const double scale = 1.0 / double(uint32_t(1) << (bits - 1));

  const uint8_t *p = data.data();
  for (size_t i = 0; i < frames; ++i) {
    for (int c = 0; c < channels; ++c) {
      int32_t raw;
      if (bits == 16) {
        raw = int16_t(uint16_t(p[0]) | uint16_t(uint16_t(p[1]) << 8));
        p += 2;
      } else {
        uint32_t u = uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16;
        raw = int32_t(u << 8) >> 8; // sign-extend 24 -> 32
        p += 3;
      }
      clip.samples[c][i] = raw * scale;
    }
  }
  return clip;
}

std::vector<uint8_t> encode_wav(const AudioClip &clip, int bits_per_sample) {
  if (bits_per_sample != 16 && bits_per_sample != 24)
    throw ConfigError("encode_wav: bits_per_sample must be 16 or 24");
  if (clip.channels() < 1 || clip.channels() > 2)
    throw ConfigError("encode_wav: clip must have 1 or 2 channels");
  if (clip.sample_rate <= 0)
    throw ConfigError("encode_wav: clip has no sample rate");
  for (int c = 1; c < clip.channels(); ++c)
    if (clip.samples[c].size() != clip.samples[0].size())
      throw DimensionError("encode_wav: channels differ in length");

  const int channels = clip.channels();
  const size_t frames = clip.length();
  const int bytes_per_sample = bits_per_sample / 8;
  const uint32_t data_size = uint32_t(frames * channels * bytes_per_sample);
  const double full = double(uint32_t(1) << (bits_per_sample - 1));
  const int32_t lo = -int32_t(full), hi = int32_t(full) - 1;

  std::vector<uint8_t> out;
  out.reserve(44 + data_size);
  auto u16 = [&](uint16_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
  };
  auto u32 = [&](uint32_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 24));
  };
  auto tag = [&](const char *s) { out.insert(out.end(), s, s + 4); };

  tag("RIFF");
  u32(36 + data_size);
  tag("WAVE");
  tag("fmt ");
  u32(16);
  u16(1); // integer PCM
  u16(uint16_t(channels));
  u32(uint32_t(clip.sample_rate));
  u32(uint32_t(clip.sample_rate * channels * bytes_per_sample));
  u16(uint16_t(channels * bytes_per_sample));
  u16(uint16_t(bits_per_sample));
  tag("data");
  u32(data_size);

  for (size_t i = 0; i < frames; ++i) {
    for (int c = 0; c < channels; ++c) {
      double v = clip.samples[c][i] * full;
      int32_t q = int32_t(std::lround(v));
      q = std::clamp(q, lo, hi);
      uint32_t u = uint32_t(q);
      out.push_back(uint8_t(u));
      out.push_back(uint8_t(u >> 8));
      if (bytes_per_sample == 3)
        out.push_back(uint8_t(u >> 16));
    }
  }
  return out;
}

MonoSignal channel_view(const AudioClip &clip, ChannelView view) {
  MonoSignal sig;
  sig.sample_rate = clip.sample_rate;
  sig.view = view;
  const size_t n = clip.length();

  if (view == ChannelView::mid && clip.channels() == 1) {
    sig.samples = clip.samples[0];
    return sig;
  }
  if (clip.channels() != 2)
    throw DataError(std::string("channel_view: ") + channel_view_name(view) +
                    " needs a stereo clip");

  sig.samples.resize(n);
  const auto &l = clip.samples[0];
  const auto &r = clip.samples[1];
  switch (view) {
  case ChannelView::left:
    sig.samples = l;
    break;
  case ChannelView::right:
    sig.samples = r;
    break;
  case ChannelView::mid:
    for (size_t i = 0; i < n; ++i)
      sig.samples[i] = 0.5 * (l[i] + r[i]);
    break;
  case ChannelView::diff:
    for (size_t i = 0; i < n; ++i)
      sig.samples[i] = l[i] - r[i];
    break;
  }
  return sig;
}

const char *channel_view_name(ChannelView view) {
  switch (view) {
  case ChannelView::left:
    return "left";
  case ChannelView::right:
    return "right";
  case ChannelView::mid:
    return "mid";
  case ChannelView::diff:
    return "diff";
  }
  return "?";
}


ChannelView channel_view_from_name(const std::string &name) {
  for (ChannelView v : {ChannelView::left, ChannelView::right,
                        ChannelView::mid, ChannelView::diff})
    if (name == channel_view_name(v))
      return v;
  throw ConfigError("unknown channel view: " + name);
}

} // namespace skald
