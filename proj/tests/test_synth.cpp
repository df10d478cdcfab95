// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>

#include "skald/dsp.hpp"
#include "skald/io_util.hpp"
#include "skald/synth.hpp"

using namespace skald;
namespace fs = std::filesystem;

TEST_CASE("synth_dataset writes one WAV per clip plus a manifest") {
  const fs::path dir = fs::temp_directory_path() / "skald_test_synth";
  fs::remove_all(dir);
  SynthSpec spec;
  spec.n_classes = 3;
  spec.clips_per_class = 8;
  spec.duration_s = 0.5;
  spec.seed = 4;

  Manifest m = synth_dataset(spec, dir);
  CHECK(m.size() == 24);
  CHECK(m.labels == std::vector<std::string>{"scene00", "scene01", "scene02"});

  int wavs = 0;
  for (const auto &e : fs::directory_iterator(dir))
    if (e.path().extension() == ".wav")
      ++wavs;
  CHECK(wavs == 24);

  Manifest loaded = load_manifest(dir / "manifest.tsv");
  CHECK(loaded.size() == 24);
  CHECK(loaded.labels == m.labels);

  const AudioClip clip = decode_wav(read_file(dir / m.entries[0].path));
  CHECK(clip.channels() == 2);
  CHECK(clip.sample_rate == 16000);
  CHECK(clip.length() == 8000);
  double peak = 0.0;
  for (const auto &ch : clip.samples)
    for (double v : ch)
      peak = std::max(peak, std::abs(v));
  // Target peak is drawn from [0.45, 0.8]; allow one quantization step.
  CHECK(peak > 0.45 - 1.0 / 32768.0);
  CHECK(peak < 0.8 + 1.0 / 32768.0);
  fs::remove_all(dir);
}

TEST_CASE("synth clips are deterministic per (seed, class, clip)") {
  SynthSpec spec;
  spec.n_classes = 4;
  spec.clips_per_class = 3;
  spec.duration_s = 0.3;
  spec.seed = 11;

  const AudioClip a = synth_clip(spec, 2, 1);
  const AudioClip b = synth_clip(spec, 2, 1);
  CHECK(a.samples == b.samples);

  // Order independence: rendering other clips first changes nothing.
  synth_clip(spec, 0, 0);
  const AudioClip c = synth_clip(spec, 2, 1);
  CHECK(c.samples == a.samples);

  SynthSpec other = spec;
  other.seed = 12;
  CHECK(synth_clip(other, 2, 1).samples != a.samples);
  CHECK(synth_clip(spec, 2, 2).samples != a.samples);
  CHECK(synth_clip(spec, 1, 1).samples != a.samples);
}

TEST_CASE("synth_dataset reruns are byte identical") {
  const fs::path d1 = fs::temp_directory_path() / "skald_test_synth_a";
  const fs::path d2 = fs::temp_directory_path() / "skald_test_synth_b";
  fs::remove_all(d1);
  fs::remove_all(d2);
  SynthSpec spec;
  spec.n_classes = 2;
  spec.clips_per_class = 2;
  spec.duration_s = 0.25;
  spec.seed = 21;
  Manifest m = synth_dataset(spec, d1);
  synth_dataset(spec, d2);
  for (const auto &e : m.entries)
    CHECK(read_file(d1 / e.path) == read_file(d2 / e.path));
  CHECK(read_file(d1 / "manifest.tsv") == read_file(d2 / "manifest.tsv"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("classes occupy distinct spectral bands") {
  SynthSpec spec;
  spec.duration_s = 0.5;
  spec.seed = 8;

  // Strongest low-frequency bin should climb with the class base frequency.
  std::vector<int> peak_bins;
  for (int c : {0, 2, 4}) {
    const AudioClip clip = synth_clip(spec, c, 0);
    std::vector<double> frame(clip.samples[0].begin(),
                              clip.samples[0].begin() + 4096);
    const std::vector<double> power = power_spectrum(frame, 4096);
    int peak = 1;
    for (int k = 2; k < int(power.size()); ++k)
      if (power[size_t(k)] > power[size_t(peak)])
        peak = k;
    peak_bins.push_back(peak);
  }
  CHECK(peak_bins[0] < peak_bins[1]);
  CHECK(peak_bins[1] < peak_bins[2]);
}

TEST_CASE("synth spec validation") {
  SynthSpec spec;
  spec.n_classes = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = SynthSpec{};
  spec.clips_per_class = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = SynthSpec{};
  spec.n_classes = 8; // top harmonic would cross Nyquist at 16 kHz
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = SynthSpec{};
  CHECK_THROWS_AS(synth_clip(spec, 5, 0), ConfigError);
  CHECK_THROWS_AS(synth_clip(spec, 0, 20), ConfigError);
}
