// SPDX-License-Identifier: Apache-2.0

#include "skald/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "skald/io_util.hpp"

namespace skald {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr double kTiny = 1e-24;
} // namespace

// ---------------------------------------------------------------------------
// Feature kinds

const char *feature_kind_name(FeatureKind kind) {
  switch (kind) {
  case FeatureKind::mfcc61:
    return "mfcc61";
  case FeatureKind::bimfcc183:
    return "bimfcc183";
  case FeatureKind::logmel60:
    return "logmel60";
  case FeatureKind::logmel200:
    return "logmel200";
  case FeatureKind::func983like:
    return "func983like";
  case FeatureKind::func6klike:
    return "func6klike";
  }
  return "?";
}

FeatureKind feature_kind_from_name(const std::string &name) {
  for (int k = 0; k <= 5; ++k)
    if (name == feature_kind_name(FeatureKind(k)))
      return FeatureKind(k);
  throw ConfigError("unknown feature kind: " + name);
}

int feature_kind_dim(FeatureKind kind) {
  switch (kind) {
  case FeatureKind::mfcc61:
    return 61;
  case FeatureKind::bimfcc183:
    return 183;
  case FeatureKind::logmel60:
    return 60;
  case FeatureKind::logmel200:
    return 200;
  default:
    return -1;
  }
}

void FeatureSequence::validate() const {
  int want = feature_kind_dim(kind);
  if (want > 0 && frames.cols != want)
    throw DimensionError(std::string("feature kind ") + feature_kind_name(kind) +
                         " requires " + std::to_string(want) + " columns, got " +
                         std::to_string(frames.cols));
  for (double v : frames.v)
    if (!std::isfinite(v))
      throw NumericError("feature sequence contains a non-finite entry");
}

// ---------------------------------------------------------------------------
// Primitives

std::vector<double> hann_window(int n) {
  if (n < 1)
    throw ConfigError("hann_window: n must be positive");
  std::vector<double> w(size_t(n), 1.0);
  if (n == 1)
    return w;
  for (int i = 0; i < n; ++i)
    w[size_t(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / (n - 1)));
  return w;
}

int next_pow2(int n) {
  int p = 1;
  while (p < n)
    p <<= 1;
  return p;
}

void fft_radix2(std::vector<std::complex<double>> &a, bool inverse) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw ConfigError("fft_radix2: size must be a power of two");

  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1)
      j ^= bit;
    j ^= bit;
    if (i < j)
      std::swap(a[i], a[j]);
  }

  const double sign = inverse ? 1.0 : -1.0;
  for (size_t len = 2; len <= n; len <<= 1) {
    const size_t half = len >> 1;
    for (size_t i = 0; i < n; i += len) {
      for (size_t j = 0; j < half; ++j) {
        // Direct twiddle evaluation keeps round-off below recurrence schemes.
        const std::complex<double> w =
            std::polar(1.0, sign * 2.0 * kPi * double(j) / double(len));
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + half] * w;
        a[i + j] = u + v;
        a[i + j + half] = u - v;
      }
    }
  }
  if (inverse) {
    const double inv_n = 1.0 / double(n);
    for (auto &x : a)
      x *= inv_n;
  }
}

DMatrix frame_signal(const MonoSignal &signal, double win_sec, double hop_sec) {
  if (signal.sample_rate <= 0)
    throw ConfigError("frame_signal: signal has no sample rate");
  const int win = int(std::lround(win_sec * signal.sample_rate));
  const int hop = int(std::lround(hop_sec * signal.sample_rate));
  if (win < 2 || hop < 1)
    throw ConfigError("frame_signal: window and hop must span at least 2 and 1 samples");
  const size_t n = signal.samples.size();
  if (n < size_t(win))
    throw DataError("frame_signal: signal shorter than one window (" +
                    std::to_string(n) + " < " + std::to_string(win) + " samples)");

  const int frames = 1 + int((n - size_t(win)) / size_t(hop));
  const std::vector<double> w = hann_window(win);
  DMatrix out(frames, win);
  for (int t = 0; t < frames; ++t) {
    const double *src = signal.samples.data() + size_t(t) * hop;
    double *dst = out.row(t).data();
    for (int i = 0; i < win; ++i)
      dst[i] = src[i] * w[size_t(i)];
  }
  return out;
}

std::vector<double> power_spectrum(std::span<const double> frame, int n_fft) {
  if (n_fft < int(frame.size()))
    throw ConfigError("power_spectrum: n_fft smaller than frame");
  if (n_fft <= 0 || (n_fft & (n_fft - 1)) != 0)
    throw ConfigError("power_spectrum: n_fft must be a power of two");

  std::vector<std::complex<double>> buf(size_t(n_fft), 0.0);
  for (size_t i = 0; i < frame.size(); ++i)
    buf[i] = frame[i];
  fft_radix2(buf);

  std::vector<double> power(size_t(n_fft / 2 + 1));
  for (size_t k = 0; k < power.size(); ++k)
    power[k] = std::norm(buf[k]);
  return power;
}

DMatrix power_spectra(const DMatrix &frames, int n_fft) {
  DMatrix out(frames.rows, n_fft / 2 + 1);
  for (int t = 0; t < frames.rows; ++t) {
    std::vector<double> p = power_spectrum(frames.row(t), n_fft);
    std::copy(p.begin(), p.end(), out.row(t).begin());
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

MelFilterbank MelFilterbank::make(int n_mels, int n_fft, double sample_rate,
                                  double fmin, double fmax) {
  if (fmax <= 0.0)
    fmax = sample_rate / 2.0;
  if (n_mels < 1)
    throw ConfigError("mel_filterbank: n_mels must be >= 1");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0))
    throw ConfigError("mel_filterbank: need 0 <= fmin < fmax <= sr/2");
  if (n_fft <= 0 || (n_fft & (n_fft - 1)) != 0)
    throw ConfigError("mel_filterbank: n_fft must be a power of two");

  const int n_bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);

  std::vector<double> edge_hz(size_t(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edge_hz[size_t(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * double(i) / double(n_mels + 1));

  MelFilterbank fb;
  fb.sample_rate = sample_rate;
  fb.fmin = fmin;
  fb.fmax = fmax;
  fb.weights = DMatrix(n_mels, n_bins);

  const double bin_hz = sample_rate / double(n_fft);
  for (int m = 0; m < n_mels; ++m) {
    const double left = edge_hz[size_t(m)];
    const double center = edge_hz[size_t(m) + 1];
    const double right = edge_hz[size_t(m) + 2];
    auto row = fb.weights.row(m);
    double sum = 0.0;
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f > left && f < right)
        w = f <= center ? (f - left) / (center - left)
                        : (right - f) / (right - center);
      row[size_t(k)] = w;
      sum += w;
    }
    if (sum <= 0.0) {
      // Triangle fell between bin centers; pin it to the nearest bin.
      int k = int(std::lround(center / bin_hz));
      k = std::clamp(k, 0, n_bins - 1);
      row[size_t(k)] = 1.0;
      sum = 1.0;
    }
    for (double &w : row)
      w /= sum;
  }
  return fb;
}

DMatrix apply_log_mel(const DMatrix &power, const MelFilterbank &fb) {
  if (power.cols != fb.weights.cols)
    throw DimensionError("apply_log_mel: spectrum width " +
                         std::to_string(power.cols) + " != filterbank width " +
                         std::to_string(fb.weights.cols));
  const int n_mels = fb.weights.rows;
  DMatrix out(power.rows, n_mels);
  for (int t = 0; t < power.rows; ++t) {
    auto p = power.row(t);
    for (int m = 0; m < n_mels; ++m) {
      auto w = fb.weights.row(m);
      double acc = 0.0;
      for (int k = 0; k < power.cols; ++k)
        acc += w[size_t(k)] * p[size_t(k)];
      out(t, m) = std::log(std::max(acc, kLogFloor));
    }
  }
  return out;
}

DMatrix dct2_matrix(int n_out, int n_in) {
  if (n_out < 1 || n_in < 1 || n_out > n_in)
    throw ConfigError("dct2_matrix: need 1 <= n_out <= n_in");
  DMatrix d(n_out, n_in);
  const double c0 = std::sqrt(1.0 / n_in);
  const double ck = std::sqrt(2.0 / n_in);
  for (int k = 0; k < n_out; ++k)
    for (int i = 0; i < n_in; ++i)
      d(k, i) = (k == 0 ? c0 : ck) * std::cos(kPi / n_in * (i + 0.5) * k);
  return d;
}

DMatrix mfcc_from_log_mel(const DMatrix &log_mel, int n_coeffs) {
  const int n_mels = log_mel.cols;
  if (n_mels < n_coeffs + 1)
    throw DimensionError("mfcc: need at least " + std::to_string(n_coeffs + 1) +
                         " mel bands, got " + std::to_string(n_mels));
  const DMatrix d = dct2_matrix(n_coeffs + 1, n_mels);
  DMatrix out(log_mel.rows, n_coeffs);
  for (int t = 0; t < log_mel.rows; ++t) {
    auto lm = log_mel.row(t);
    for (int k = 1; k <= n_coeffs; ++k) {
      double acc = 0.0;
      for (int i = 0; i < n_mels; ++i)
        acc += d(k, i) * lm[size_t(i)];
      out(t, k - 1) = acc;
    }
  }
  return out;
}

DMatrix deltas(const DMatrix &seq, int half_window) {
  if (half_window < 1)
    throw ConfigError("deltas: half_window must be >= 1");
  if (seq.rows < 1)
    throw DataError("deltas: empty sequence");
  double denom = 0.0;
  for (int n = 1; n <= half_window; ++n)
    denom += double(n) * n;
  denom *= 2.0;

  DMatrix out(seq.rows, seq.cols);
  for (int t = 0; t < seq.rows; ++t) {
    for (int c = 0; c < seq.cols; ++c) {
      double acc = 0.0;
      for (int n = 1; n <= half_window; ++n) {
        const int hi = std::min(t + n, seq.rows - 1);
        const int lo = std::max(t - n, 0);
        acc += double(n) * (seq(hi, c) - seq(lo, c));
      }
      out(t, c) = acc / denom;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Assembled front ends

namespace {

int resolve_n_fft(const FrameConfig &fc, int sample_rate) {
  const int win = int(std::lround(fc.win_sec * sample_rate));
  return fc.n_fft > 0 ? fc.n_fft : next_pow2(win);
}

DMatrix mfcc_static(const MonoSignal &signal, const MfccConfig &cfg) {
  const int n_fft = resolve_n_fft(cfg.frame, signal.sample_rate);
  const DMatrix frames = frame_signal(signal, cfg.frame.win_sec, cfg.frame.hop_sec);
  const DMatrix power = power_spectra(frames, n_fft);
  const MelFilterbank fb = MelFilterbank::make(
      cfg.n_mels, n_fft, signal.sample_rate, cfg.fmin, cfg.fmax);
  return mfcc_from_log_mel(apply_log_mel(power, fb), cfg.n_coeffs);
}

} // namespace

FeatureSequence mfcc61(const MonoSignal &signal, const MfccConfig &cfg) {
  const DMatrix stat = mfcc_static(signal, cfg);
  const DMatrix d1 = deltas(stat, cfg.delta_half_window);
  const DMatrix d2 = deltas(d1, cfg.delta_half_window);

  int keep1, keep2;
  switch (cfg.layout) {
  case MfccLayout::d23_23_15:
    keep1 = cfg.n_coeffs;
    keep2 = 61 - 2 * cfg.n_coeffs;
    break;
  case MfccLayout::d23_19_19:
    keep1 = keep2 = (61 - cfg.n_coeffs) / 2;
    break;
  }
  if (keep1 < 0 || keep2 < 0 || keep1 > cfg.n_coeffs || keep2 > cfg.n_coeffs)
    throw ConfigError("mfcc61: layout incompatible with n_coeffs " +
                      std::to_string(cfg.n_coeffs));

  FeatureSequence seq;
  seq.kind = FeatureKind::mfcc61;
  seq.frame_period =
      std::lround(cfg.frame.hop_sec * signal.sample_rate) / double(signal.sample_rate);
  seq.frames = DMatrix(stat.rows, cfg.n_coeffs + keep1 + keep2);
  for (int t = 0; t < stat.rows; ++t) {
    int c = 0;
    for (int i = 0; i < cfg.n_coeffs; ++i)
      seq.frames(t, c++) = stat(t, i);
    for (int i = 0; i < keep1; ++i)
      seq.frames(t, c++) = d1(t, i);
    for (int i = 0; i < keep2; ++i)
      seq.frames(t, c++) = d2(t, i);
  }
  return seq;
}

FeatureSequence bimfcc(const AudioClip &clip, const MfccConfig &cfg) {
  if (clip.channels() != 2)
    throw DataError("bimfcc: needs a stereo clip");
  const FeatureSequence l = mfcc61(channel_view(clip, ChannelView::left), cfg);
  const FeatureSequence r = mfcc61(channel_view(clip, ChannelView::right), cfg);
  const FeatureSequence d = mfcc61(channel_view(clip, ChannelView::diff), cfg);

  FeatureSequence seq;
  seq.kind = FeatureKind::bimfcc183;
  seq.frame_period = l.frame_period;
  const int w = l.frames.cols;
  seq.frames = DMatrix(l.frames.rows, 3 * w);
  for (int t = 0; t < l.frames.rows; ++t)
    for (int i = 0; i < w; ++i) {
      seq.frames(t, i) = l.frames(t, i);
      seq.frames(t, w + i) = r.frames(t, i);
      seq.frames(t, 2 * w + i) = d.frames(t, i);
    }
  return seq;
}

FeatureSequence logmel(const MonoSignal &signal, const LogMelConfig &cfg) {
  FeatureKind kind;
  if (cfg.n_mels == 60)
    kind = FeatureKind::logmel60;
  else if (cfg.n_mels == 200)
    kind = FeatureKind::logmel200;
  else
    throw ConfigError("logmel: band count must be 60 or 200, got " +
                      std::to_string(cfg.n_mels));

  const int n_fft = resolve_n_fft(cfg.frame, signal.sample_rate);
  const DMatrix frames = frame_signal(signal, cfg.frame.win_sec, cfg.frame.hop_sec);
  const DMatrix power = power_spectra(frames, n_fft);
  const MelFilterbank fb = MelFilterbank::make(
      cfg.n_mels, n_fft, signal.sample_rate, cfg.fmin, cfg.fmax);

  FeatureSequence seq;
  seq.kind = kind;
  seq.frame_period =
      std::lround(cfg.frame.hop_sec * signal.sample_rate) / double(signal.sample_rate);
  seq.frames = apply_log_mel(power, fb);
  return seq;
}

// ---------------------------------------------------------------------------
// Functional features

std::vector<std::string> functional_names() {
  return {"mean", "std",  "min", "max", "range", "skewness",
          "kurtosis", "p25", "p50", "p75", "slope"};
}

std::vector<std::string> descriptor_names(DescriptorSet set) {
  std::vector<std::string> base = {"energy",   "zcr",     "mcr", "pitch",
                                   "centroid", "rolloff", "flux"};
  for (int i = 1; i <= 23; ++i)
    base.push_back("mfcc" + std::to_string(i));
  if (set == DescriptorSet::compact)
    return base;
  std::vector<std::string> out;
  for (const auto &n : base) {
    out.push_back(n);
    out.push_back(n + "_delta");
    out.push_back(n + "_delta2");
  }
  return out;
}

namespace {

double percentile(const std::vector<double> &sorted, double q) {
  const size_t n = sorted.size();
  if (n == 1)
    return sorted[0];
  const double rank = q * double(n - 1);
  const size_t lo = size_t(rank);
  const double frac = rank - double(lo);
  if (lo + 1 >= n)
    return sorted[n - 1];
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

void window_functionals(std::span<const double> vals, double *out) {
  const int n = int(vals.size());
  double mean = 0.0;
  for (double v : vals)
    mean += v;
  mean /= n;

  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : vals) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;

  std::vector<double> sorted(vals.begin(), vals.end());
  std::sort(sorted.begin(), sorted.end());

  double slope = 0.0;
  if (n > 1) {
    const double xbar = 0.5 * (n - 1);
    double sxx = 0.0, sxy = 0.0;
    for (int i = 0; i < n; ++i) {
      sxx += (i - xbar) * (i - xbar);
      sxy += (i - xbar) * (vals[size_t(i)] - mean);
    }
    slope = sxy / sxx;
  }

  out[0] = mean;
  out[1] = std::sqrt(m2);
  out[2] = sorted.front();
  out[3] = sorted.back();
  out[4] = sorted.back() - sorted.front();
  out[5] = m2 < kTiny ? 0.0 : m3 / std::pow(m2, 1.5);
  out[6] = m2 < kTiny ? 0.0 : m4 / (m2 * m2);
  out[7] = percentile(sorted, 0.25);
  out[8] = percentile(sorted, 0.50);
  out[9] = percentile(sorted, 0.75);
  out[10] = slope;
}

DMatrix raw_frames(const MonoSignal &signal, const FrameConfig &fc) {
  const int win = int(std::lround(fc.win_sec * signal.sample_rate));
  const int hop = int(std::lround(fc.hop_sec * signal.sample_rate));
  const size_t n = signal.samples.size();
  if (n < size_t(win))
    throw DataError("functional_features: signal shorter than one frame");
  const int frames = 1 + int((n - size_t(win)) / size_t(hop));
  DMatrix out(frames, win);
  for (int t = 0; t < frames; ++t)
    std::copy_n(signal.samples.data() + size_t(t) * hop, win, out.row(t).data());
  return out;
}

} // namespace

FeatureSequence functional_features(const MonoSignal &signal,
                                    const FunctionalConfig &cfg) {
  if (signal.sample_rate <= 0)
    throw ConfigError("functional_features: signal has no sample rate");
  const double sr = signal.sample_rate;
  const int n_fft = resolve_n_fft(cfg.frame, signal.sample_rate);
  const int n_bins = n_fft / 2 + 1;

  const DMatrix raw = raw_frames(signal, cfg.frame);
  const DMatrix windowed = frame_signal(signal, cfg.frame.win_sec, cfg.frame.hop_sec);
  const DMatrix power = power_spectra(windowed, n_fft);
  const MelFilterbank fb =
      MelFilterbank::make(cfg.n_mels, n_fft, sr, 0.0, 0.0);
  const DMatrix mfcc = mfcc_from_log_mel(apply_log_mel(power, fb), cfg.n_mfcc);

  const int T = raw.rows;
  const int win = raw.cols;
  const int n_base = 7 + cfg.n_mfcc;
  DMatrix desc(T, n_base);

  const int min_lag =
      std::max(1, int(std::lround(sr / cfg.pitch_fmax)));
  const int max_lag =
      std::min(win - 1, int(std::lround(sr / cfg.pitch_fmin)));
  const double bin_hz = sr / double(n_fft);

  std::vector<double> prev_mag(size_t(n_bins), 0.0);
  std::vector<double> mag(size_t(n_bins), 0.0);

  for (int t = 0; t < T; ++t) {
    auto x = raw.row(t);
    double energy = 0.0, mean = 0.0;
    for (double v : x) {
      energy += v * v;
      mean += v;
    }
    energy /= win;
    mean /= win;

    int zc = 0, mc = 0;
    for (int i = 0; i + 1 < win; ++i) {
      if (x[size_t(i)] * x[size_t(i) + 1] < 0.0)
        ++zc;
      if ((x[size_t(i)] - mean) * (x[size_t(i) + 1] - mean) < 0.0)
        ++mc;
    }

    double pitch = 0.0;
    if (energy > 1e-12 && max_lag >= min_lag) {
      double best = 0.0;
      int best_lag = 0;
      for (int lag = min_lag; lag <= max_lag; ++lag) {
        double r = 0.0;
        for (int i = 0; i + lag < win; ++i)
          r += x[size_t(i)] * x[size_t(i) + size_t(lag)];
        if (r > best) {
          best = r;
          best_lag = lag;
        }
      }
      if (best_lag > 0)
        pitch = sr / best_lag;
    }

    auto p = power.row(t);
    double total = 0.0, weighted = 0.0;
    for (int k = 0; k < n_bins; ++k) {
      total += p[size_t(k)];
      weighted += p[size_t(k)] * (k * bin_hz);
    }
    const double centroid = total > kTiny ? weighted / total : 0.0;

    double rolloff = 0.0;
    if (total > kTiny) {
      double acc = 0.0;
      for (int k = 0; k < n_bins; ++k) {
        acc += p[size_t(k)];
        if (acc >= cfg.rolloff_fraction * total) {
          rolloff = k * bin_hz;
          break;
        }
      }
    }

    double mag_norm = 0.0;
    for (int k = 0; k < n_bins; ++k) {
      mag[size_t(k)] = std::sqrt(p[size_t(k)]);
      mag_norm += p[size_t(k)];
    }
    mag_norm = std::sqrt(mag_norm);
    if (mag_norm > kTiny)
      for (double &v : mag)
        v /= mag_norm;
    double flux = 0.0;
    if (t > 0) {
      for (int k = 0; k < n_bins; ++k) {
        const double d = mag[size_t(k)] - prev_mag[size_t(k)];
        flux += d * d;
      }
      flux = std::sqrt(flux);
    }
    prev_mag = mag;

    desc(t, 0) = energy;
    desc(t, 1) = win > 1 ? double(zc) / (win - 1) : 0.0;
    desc(t, 2) = win > 1 ? double(mc) / (win - 1) : 0.0;
    desc(t, 3) = pitch;
    desc(t, 4) = centroid;
    desc(t, 5) = rolloff;
    desc(t, 6) = flux;
    for (int i = 0; i < cfg.n_mfcc; ++i)
      desc(t, 7 + i) = mfcc(t, i);
  }

  DMatrix full = desc;
  if (cfg.set == DescriptorSet::extended) {
    const DMatrix d1 = deltas(desc, 2);
    const DMatrix d2 = deltas(d1, 2);
    full = DMatrix(T, 3 * n_base);
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < n_base; ++i) {
        full(t, 3 * i) = desc(t, i);
        full(t, 3 * i + 1) = d1(t, i);
        full(t, 3 * i + 2) = d2(t, i);
      }
  }

  const int hop = int(std::lround(cfg.frame.hop_sec * sr));
  const int group = std::max(1, int(std::lround(cfg.window_sec / cfg.frame.hop_sec)));
  const int n_groups = T / group;
  if (n_groups < 1)
    throw DataError("functional_features: clip shorter than one functional window");

  const int n_desc = full.cols;
  const int n_func = 11;
  FeatureSequence seq;
  seq.kind = cfg.set == DescriptorSet::compact ? FeatureKind::func983like
                                               : FeatureKind::func6klike;
  seq.frame_period = group * hop / sr;
  seq.frames = DMatrix(n_groups, n_desc * n_func);

  std::vector<double> vals(size_t(group), 0.0);
  for (int g = 0; g < n_groups; ++g) {
    for (int d = 0; d < n_desc; ++d) {
      for (int j = 0; j < group; ++j)
        vals[size_t(j)] = full(g * group + j, d);
      window_functionals(vals, seq.frames.row(g).data() + size_t(d) * n_func);
    }
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Standardization

Standardizer Standardizer::fit(const DMatrix &frames) {
  if (frames.rows < 2)
    throw DataError("standardizer: need at least 2 rows to fit");
  const int d = frames.cols;
  Standardizer s;
  s.mean.assign(size_t(d), 0.0);
  s.stddev.assign(size_t(d), 0.0);

  for (int t = 0; t < frames.rows; ++t) {
    auto row = frames.row(t);
    for (int c = 0; c < d; ++c)
      s.mean[size_t(c)] += row[size_t(c)];
  }
  for (double &m : s.mean)
    m /= frames.rows;

  for (int t = 0; t < frames.rows; ++t) {
    auto row = frames.row(t);
    for (int c = 0; c < d; ++c) {
      const double diff = row[size_t(c)] - s.mean[size_t(c)];
      s.stddev[size_t(c)] += diff * diff;
    }
  }
  for (double &v : s.stddev)
    v = std::max(std::sqrt(v / frames.rows), kStdFloor);
  return s;
}

DMatrix Standardizer::transform(const DMatrix &frames) const {
  DMatrix out = frames;
  transform_in_place(out);
  return out;
}

void Standardizer::transform_in_place(DMatrix &frames) const {
  if (frames.cols != dim())
    throw DimensionError("standardizer: dim " + std::to_string(dim()) +
                         " does not match frames of width " +
                         std::to_string(frames.cols));
  for (int t = 0; t < frames.rows; ++t) {
    auto row = frames.row(t);
    for (int c = 0; c < frames.cols; ++c)
      row[size_t(c)] = (row[size_t(c)] - mean[size_t(c)]) / stddev[size_t(c)];
  }
}

// ---------------------------------------------------------------------------
// Feature files

void write_feature_file(const std::filesystem::path &path,
                        const FeatureSequence &seq,
                        const std::map<std::string, std::string> &meta) {
  BinaryWriter w;
  w.put_magic("SKF1");
  w.put<uint32_t>(uint32_t(seq.frames.cols));
  w.put<uint32_t>(uint32_t(seq.frames.rows));
  w.put<float>(float(seq.frame_period));
  w.put<uint8_t>(uint8_t(seq.kind));
  for (double v : seq.frames.v)
    w.put<float>(float(v));
  atomic_write_file(path, w.bytes());

  std::map<std::string, std::string> all = meta;
  all["kind"] = feature_kind_name(seq.kind);
  all["dim"] = std::to_string(seq.frames.cols);
  all["frames"] = std::to_string(seq.frames.rows);
  std::string side;
  for (const auto &[k, v] : all)
    side += k + "=" + v + "\n";
  atomic_write_file(path.string() + ".meta", side);
}

FeatureSequence read_feature_file(const std::filesystem::path &path) {
  const std::vector<uint8_t> bytes = read_file(path);
  BinaryReader r(bytes);
  r.expect_magic("SKF1", path.string());
  const uint32_t dim = r.get<uint32_t>();
  const uint32_t frames = r.get<uint32_t>();
  FeatureSequence seq;
  seq.frame_period = r.get<float>();
  const uint8_t kind = r.get<uint8_t>();
  if (kind > 5)
    throw DataError(path.string() + ": unknown feature kind tag " +
                    std::to_string(kind));
  seq.kind = FeatureKind(kind);
  seq.frames = DMatrix(int(frames), int(dim));
  for (double &v : seq.frames.v)
    v = r.get<float>();
  if (!r.at_end())
    throw DataError(path.string() + ": trailing bytes after frame data");
  return seq;
}

std::map<std::string, std::string>
read_feature_meta(const std::filesystem::path &feature_path) {
  const std::filesystem::path side = feature_path.string() + ".meta";
  std::map<std::string, std::string> meta;
  if (!std::filesystem::exists(side))
    return meta;
  const std::vector<uint8_t> bytes = read_file(side);
  std::string text(bytes.begin(), bytes.end());
  size_t pos = 0;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos)
      eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    const size_t eq = line.find('=');
    if (eq != std::string::npos)
      meta[line.substr(0, eq)] = line.substr(eq + 1);
    pos = eol + 1;
  }
  return meta;
}

} // namespace skald
