// SPDX-License-Identifier: Apache-2.0

#include "skald/synth.hpp"

#include <cmath>
#include <numbers>

#include "skald/io_util.hpp"

namespace skald {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kHarmonics = 8;

/// Two-pole resonator centered on freq_hz; the (1 - r) gain keeps the
/// output bounded for unit-variance input.
class Resonator {
public:
  Resonator(double freq_hz, double sample_rate, double r) : r_(r) {
    const double theta = kTwoPi * freq_hz / sample_rate;
    a1_ = 2.0 * r * std::cos(theta);
    a2_ = -r * r;
  }
  double step(double x) {
    const double y = a1_ * y1_ + a2_ * y2_ + (1.0 - r_) * x;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

private:
  double r_, a1_, a2_;
  double y1_ = 0.0, y2_ = 0.0;
};

double class_base_freq(int c) { return 150.0 * std::pow(1.55, c); }

double class_noise_center(int c) { return 600.0 + 620.0 * double(c); }

/// Class-specific comb over the harmonic stack: which partials carry the
/// energy differs per class, not only the base frequency.
double harmonic_weight(int c, int h) {
  const double rolloff = 1.0 / double(h + 1);
  return ((h + c) % 3 == 0) ? rolloff : 0.45 * rolloff;
}

} // namespace

void SynthSpec::validate() const {
  if (n_classes < 2)
    throw ConfigError("synth: need at least 2 classes");
  if (clips_per_class < 1)
    throw ConfigError("synth: need at least 1 clip per class");
  if (!(duration_s > 0.1))
    throw ConfigError("synth: duration must exceed 0.1 s");
  if (sample_rate < 8000)
    throw ConfigError("synth: sample rate must be at least 8000");
  const double top =
      class_base_freq(n_classes - 1) * kHarmonics * 1.03;
  if (top >= sample_rate / 2.0)
    throw ConfigError("synth: class " + std::to_string(n_classes - 1) +
                      " would alias; raise the sample rate or drop classes");
}

std::string synth_label(int class_index) {
  std::string n = std::to_string(class_index);
  if (n.size() < 2)
    n = "0" + n;
  return "scene" + n;
}

AudioClip synth_clip(const SynthSpec &spec, int class_index, int clip_index) {
  spec.validate();
  if (class_index < 0 || class_index >= spec.n_classes)
    throw ConfigError("synth: class index out of range");
  if (clip_index < 0 || clip_index >= spec.clips_per_class)
    throw ConfigError("synth: clip index out of range");

  Rng rng(Rng::mix(spec.seed,
                   uint64_t(class_index) * 1000003u + uint64_t(clip_index) + 1));
  const int n = int(spec.duration_s * spec.sample_rate);
  const double sr = spec.sample_rate;
  const double base = class_base_freq(class_index) * rng.uniform(0.98, 1.02);

  // Per-clip draws: harmonic phases and gains per channel, a slow tremolo,
  // a noise level, and a target peak.
  double phase[2][kHarmonics];
  double gain[kHarmonics];
  for (int h = 0; h < kHarmonics; ++h) {
    gain[h] = harmonic_weight(class_index, h) * rng.uniform(0.7, 1.3);
    phase[0][h] = rng.uniform(0.0, kTwoPi);
    phase[1][h] = rng.uniform(0.0, kTwoPi);
  }
  const double trem_rate = rng.uniform(0.5, 2.0);
  const double trem_phase = rng.uniform(0.0, kTwoPi);
  const double noise_level = 0.3 * rng.uniform(0.7, 1.3);
  const double right_gain = rng.uniform(0.9, 1.1);
  const double target_peak = rng.uniform(0.45, 0.8);

  AudioClip clip;
  clip.sample_rate = spec.sample_rate;
  clip.samples.assign(2, std::vector<double>(size_t(n), 0.0));

  for (int ch = 0; ch < 2; ++ch) {
    Resonator res(class_noise_center(class_index), sr, 0.97);
    std::vector<double> &out = clip.samples[size_t(ch)];
    const double ch_gain = (ch == 1) ? right_gain : 1.0;
    for (int i = 0; i < n; ++i) {
      const double t = double(i) / sr;
      double tone = 0.0;
      for (int h = 0; h < kHarmonics; ++h)
        tone += gain[h] *
                std::sin(kTwoPi * base * double(h + 1) * t + phase[ch][h]);
      const double noise = noise_level * res.step(rng.normal());
      const double trem =
          1.0 + 0.2 * std::sin(kTwoPi * trem_rate * t + trem_phase);
      out[size_t(i)] = ch_gain * trem * (tone + noise);
    }
  }

  double peak = 0.0;
  for (const auto &chan : clip.samples)
    for (double v : chan)
      peak = std::max(peak, std::abs(v));
  const double scale = target_peak / peak;
  for (auto &chan : clip.samples)
    for (double &v : chan)
      v *= scale;
  return clip;
}

Manifest synth_dataset(const SynthSpec &spec,
                       const std::filesystem::path &out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  std::vector<ManifestEntry> entries;
  for (int c = 0; c < spec.n_classes; ++c) {
    const std::string label = synth_label(c);
    for (int i = 0; i < spec.clips_per_class; ++i) {
      std::string num = std::to_string(i);
      while (num.size() < 3)
        num = "0" + num;
      const std::string name = label + "_" + num + ".wav";
      const AudioClip clip = synth_clip(spec, c, i);
      atomic_write_file(out_dir / name, encode_wav(clip, 16));
      entries.push_back({name, label});
    }
  }
  Manifest m = make_manifest(std::move(entries));
  save_manifest(out_dir / "manifest.tsv", m);
  return m;
}

} // namespace skald
