// SPDX-License-Identifier: Apache-2.0
/**
 * @file   dsp.hpp
 * @brief  Frame-level feature extraction: log-mel, MFCC variants, deltas,
 *         low-level-descriptor functionals, and feature standardization.
 *
 * All operations here are pure and deterministic: the same signal and config
 * produce bit-identical output regardless of thread schedule.
 */

#ifndef SKALD_DSP_HPP
#define SKALD_DSP_HPP

#include <complex>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "skald/audio.hpp"
#include "skald/common.hpp"

namespace skald {

// ---------------------------------------------------------------------------
// Feature sequences

enum class FeatureKind : uint8_t {
  mfcc61 = 0,
  bimfcc183 = 1,
  logmel60 = 2,
  logmel200 = 3,
  func983like = 4,
  func6klike = 5,
};

const char *feature_kind_name(FeatureKind kind);
FeatureKind feature_kind_from_name(const std::string &name);

/// Expected column count for fixed-width kinds, -1 for the functional kinds
/// (their width depends on the descriptor set).
int feature_kind_dim(FeatureKind kind);

/// A T x D matrix of frame vectors with timing and kind metadata.
struct FeatureSequence {
  DMatrix frames;
  double frame_period = 0.0; // seconds between frame starts
  FeatureKind kind = FeatureKind::mfcc61;

  int dim() const { return frames.cols; }
  /// Throws if the width contradicts the kind or any entry is non-finite.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Primitives

/// Symmetric Hann window, w[i] = 0.5 * (1 - cos(2*pi*i / (n-1))).
std::vector<double> hann_window(int n);

int next_pow2(int n);

/// In-place iterative radix-2 transform. Size must be a power of two.
/// The inverse includes the 1/n factor.
void fft_radix2(std::vector<std::complex<double>> &a, bool inverse = false);

/// Slices the signal into Hann-windowed frames. Frame i covers samples
/// [i*hop_samples, i*hop_samples + win_samples); a trailing partial frame is
/// dropped. Throws DataError if the signal is shorter than one window.
DMatrix frame_signal(const MonoSignal &signal, double win_sec, double hop_sec);

/// Power of the first n_fft/2+1 FFT bins of one frame, zero-padded to n_fft.
/// n_fft must be a power of two and >= the frame length.
std::vector<double> power_spectrum(std::span<const double> frame, int n_fft);

/// Row-wise power_spectrum over a frame matrix; output is T x (n_fft/2+1).
DMatrix power_spectra(const DMatrix &frames, int n_fft);

/// mel(f) = 2595 * log10(1 + f / 700)
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters with centers equally spaced on the mel scale. Each row
/// is normalized to unit sum, so a flat spectrum maps to equal outputs. A
/// triangle too narrow to touch any bin center degenerates to a single unit
/// weight at the bin nearest its center, keeping every row nonzero.
struct MelFilterbank {
  DMatrix weights; // n_mels x (n_fft/2+1)
  double sample_rate = 0.0;
  double fmin = 0.0, fmax = 0.0;

  static MelFilterbank make(int n_mels, int n_fft, double sample_rate,
                            double fmin, double fmax);
};

inline constexpr double kLogFloor = 1e-10;

/// out[t][m] = ln(max(dot(filter_m, power[t]), kLogFloor))
DMatrix apply_log_mel(const DMatrix &power, const MelFilterbank &fb);

/// Orthonormal DCT-II matrix, n_out x n_in: row k is
/// c_k * cos(pi/n_in * (i + 1/2) * k) with c_0 = sqrt(1/n_in),
/// c_k = sqrt(2/n_in) otherwise. Square case satisfies D * D^T = I.
DMatrix dct2_matrix(int n_out, int n_in);

/// Per-frame DCT-II of log-mel rows keeping coefficients 1..n_coeffs
/// (the 0th is dropped). Requires at least n_coeffs + 1 mel bands.
DMatrix mfcc_from_log_mel(const DMatrix &log_mel, int n_coeffs);

/// Regression deltas d_t = sum_{n=1..N} n * (x_{t+n} - x_{t-n}) / (2 * sum n^2)
/// with out-of-range frames replicated from the edges.
DMatrix deltas(const DMatrix &seq, int half_window);

// ---------------------------------------------------------------------------
// Assembled front ends

struct FrameConfig {
  double win_sec = 0.020;
  double hop_sec = 0.010;
  int n_fft = 0; // 0: next power of two >= window length in samples
};

enum class MfccLayout {
  d23_23_15, // 23 static + 23 delta + first 15 delta-delta
  d23_19_19, // 23 static + first 19 delta + first 19 delta-delta
};

struct MfccConfig {
  FrameConfig frame;
  int n_mels = 60; // internal mel resolution feeding the DCT
  int n_coeffs = 23;
  int delta_half_window = 2;
  MfccLayout layout = MfccLayout::d23_23_15;
  double fmin = 0.0;
  double fmax = 0.0; // 0: Nyquist
};

struct LogMelConfig {
  FrameConfig frame;
  int n_mels = 60;
  double fmin = 0.0;
  double fmax = 0.0; // 0: Nyquist
};

enum class DescriptorSet { compact, extended };

struct FunctionalConfig {
  FrameConfig frame;      // short-frame analysis inside each window
  double window_sec = 0.100; // functional window, non-overlapping
  DescriptorSet set = DescriptorSet::compact;
  int n_mfcc = 23;
  int n_mels = 60;
  double pitch_fmin = 60.0;
  double pitch_fmax = 500.0;
  double rolloff_fraction = 0.85;
};

/// Static 23 MFCCs plus truncated delta blocks; 61 columns either layout.
FeatureSequence mfcc61(const MonoSignal &signal, const MfccConfig &cfg = {});

/// [mfcc61(left) | mfcc61(right) | mfcc61(left - right)], 183 columns.
/// Throws DataError on mono input.
FeatureSequence bimfcc(const AudioClip &clip, const MfccConfig &cfg = {});

FeatureSequence logmel(const MonoSignal &signal, const LogMelConfig &cfg = {});

/// Names of the low-level descriptors, in column-block order.
/// compact: 30 entries; extended: 90 (each descriptor plus its delta and
/// delta-delta, grouped as d, d_delta, d_delta2).
std::vector<std::string> descriptor_names(DescriptorSet set);

/// The 11 statistics applied per descriptor within each window, in order:
/// mean, std, min, max, range, skewness, kurtosis, p25, p50, p75, slope.
std::vector<std::string> functional_names();

/// Per-descriptor functionals over non-overlapping windows. Column layout is
/// descriptor-major: descriptor d, functional f at column d * 11 + f.
/// compact: 330 columns; extended: 990.
FeatureSequence functional_features(const MonoSignal &signal,
                                    const FunctionalConfig &cfg = {});

// ---------------------------------------------------------------------------
// Standardization

inline constexpr double kStdFloor = 1e-8;

/// Per-dimension affine map to zero mean, unit variance (population std,
/// floored at kStdFloor). Fit on training frames only; the same transform is
/// then applied to validation and test data.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  int dim() const { return int(mean.size()); }

  /// Requires at least 2 rows.
  static Standardizer fit(const DMatrix &frames);

  DMatrix transform(const DMatrix &frames) const;
  void transform_in_place(DMatrix &frames) const;
};

// ---------------------------------------------------------------------------
// Feature files

/// Binary layout: "SKF1", u32 dim, u32 frames, f32 frame_period, u8 kind,
/// then row-major f32 samples. A ".meta" sidecar with sorted key=value lines
/// carries provenance (config hash, source path and such).
void write_feature_file(const std::filesystem::path &path,
                        const FeatureSequence &seq,
                        const std::map<std::string, std::string> &meta);

FeatureSequence read_feature_file(const std::filesystem::path &path);

std::map<std::string, std::string>
read_feature_meta(const std::filesystem::path &feature_path);

} // namespace skald

#endif // SKALD_DSP_HPP
