// SPDX-License-Identifier: Apache-2.0

#include "skald/diagnostics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <sstream>

#include "skald/dsp.hpp"
#include "skald/io_util.hpp"
#include "skald/neural/layers.hpp"

namespace skald {

namespace {

constexpr double kPi = std::numbers::pi;

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n)
    p <<= 1;
  return p;
}

} // namespace

std::vector<std::complex<double>> dft(std::vector<std::complex<double>> x,
                                      bool inverse) {
  const size_t n = x.size();
  if (n == 0)
    throw DataError("dft: empty input");
  if (is_pow2(n)) {
    fft_radix2(x, inverse);
    return x;
  }

  // Bluestein: X_k = w_k * (a circ b)_k with a_j = x_j w_j and the chirp
  // b wrapped circularly, w_j = exp(sign * i*pi*j^2 / n). Reducing j^2 mod
  // 2n keeps the twiddle argument small and exact.
  const double sign = inverse ? 1.0 : -1.0;
  const size_t m = next_pow2(2 * n - 1);
  std::vector<std::complex<double>> w(n), a(m), b(m);
  for (size_t j = 0; j < n; ++j) {
    const double angle = sign * kPi * double((j * j) % (2 * n)) / double(n);
    w[j] = {std::cos(angle), std::sin(angle)};
    a[j] = x[j] * w[j];
  }
  b[0] = {1.0, 0.0};
  for (size_t j = 1; j < n; ++j)
    b[j] = b[m - j] = std::conj(w[j]);
  fft_radix2(a, false);
  fft_radix2(b, false);
  for (size_t j = 0; j < m; ++j)
    a[j] *= b[j];
  fft_radix2(a, true); // carries 1/m, completing the circular convolution

  std::vector<std::complex<double>> out(n);
  const double scale = inverse ? 1.0 / double(n) : 1.0;
  for (size_t k = 0; k < n; ++k)
    out[k] = w[k] * a[k] * scale;
  return out;
}

DMatrix weight_spectrum(const DMatrix &weights) {
  if (weights.cols < 2)
    throw DimensionError("weight_spectrum: rows need at least 2 samples");
  if (weights.rows < 1)
    throw DataError("weight_spectrum: no rows");
  const int d = weights.cols;
  const int bins = d / 2 + 1;
  DMatrix out(weights.rows, bins);
  std::vector<std::complex<double>> x(size_t(d), std::complex<double>{});
  for (int r = 0; r < weights.rows; ++r) {
    for (int j = 0; j < d; ++j)
      x[size_t(j)] = {weights(r, j), 0.0};
    const auto spec = dft(x);
    for (int k = 0; k < bins; ++k)
      out(r, k) = std::abs(spec[size_t(k)]);
  }
  return out;
}

std::vector<double> savgol_coeffs(int window, int order) {
  if (window < 1 || window % 2 == 0)
    throw ConfigError("savgol: window must be odd and positive");
  if (order < 0 || order >= window)
    throw ConfigError("savgol: order must be in [0, window)");
  const int half = window / 2;
  Eigen::MatrixXd a(window, order + 1);
  for (int i = 0; i < window; ++i) {
    double p = 1.0;
    for (int j = 0; j <= order; ++j) {
      a(i, j) = p;
      p *= double(i - half);
    }
  }
  // Smoothed center value is coefficient 0 of the least-squares fit, so the
  // kernel is A (A^T A)^{-1} e_0.
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(order + 1);
  e0(0) = 1.0;
  const Eigen::VectorXd c = a * (a.transpose() * a).ldlt().solve(e0);
  return std::vector<double>(c.data(), c.data() + window);
}

std::vector<double> savgol_smooth(const std::vector<double> &v, int window,
                                  int order) {
  const std::vector<double> c = savgol_coeffs(window, order);
  const int n = int(v.size());
  const int half = window / 2;
  if (n < window)
    throw DataError("savgol: input shorter than the window");
  std::vector<double> out(size_t(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = -half; j <= half; ++j) {
      int idx = i + j;
      if (idx < 0)
        idx = -idx;
      if (idx >= n)
        idx = 2 * n - 2 - idx;
      acc += c[size_t(j + half)] * v[size_t(idx)];
    }
    out[size_t(i)] = acc;
  }
  return out;
}

DMatrix activation_trace(Net<float> &net, int layer_index,
                         const Tensor<float> &sequence) {
  if (layer_index < 0 || layer_index >= net.n_layers())
    throw ConfigError("activation_trace: layer index out of range");
  if (sequence.shape.size() != 2)
    throw DimensionError("activation_trace: sequence must be steps x dim");

  GruLayer<float> *gru =
      dynamic_cast<GruLayer<float> *>(&net.layer(layer_index));
  if (auto *bi = dynamic_cast<BiGruLayer<float> *>(&net.layer(layer_index)))
    gru = &bi->forward_half();
  if (gru == nullptr)
    throw ConfigError("activation_trace: layer " +
                      std::to_string(layer_index) + " is not recurrent");

  Tensor<float> x({1, sequence.shape[0], sequence.shape[1]});
  x.data = sequence.data;
  for (int i = 0; i < layer_index; ++i)
    x = net.layer(i).forward(x, false, 0);
  if (x.shape.size() != 3 || x.shape[0] != 1)
    throw DimensionError("activation_trace: the layers before " +
                         std::to_string(layer_index) +
                         " do not preserve a sequence axis");

  const GruParams<float> &p = gru->gru_params();
  const int steps = x.shape[1], dim = x.shape[2];
  const int units = p.bz.shape[0];
  const bool backward = gru->scans_backward();

  Tensor<float> h({1, units});
  Tensor<float> xt({1, dim});
  DMatrix trace(steps, units);
  for (int s = 0; s < steps; ++s) {
    const int t = backward ? steps - 1 - s : s;
    for (int j = 0; j < dim; ++j)
      xt.data[size_t(j)] = x.data[size_t(t) * size_t(dim) + size_t(j)];
    Tensor<float> z, r, hc, h_next;
    gru_cell_forward(p, xt, h, z, r, hc, h_next);
    h = h_next;
    for (int j = 0; j < units; ++j)
      trace(t, j) = double(h.data[size_t(j)]);
  }
  return trace;
}

void write_grid_tsv(const std::filesystem::path &path, const DMatrix &grid) {
  std::ostringstream os;
  os.precision(17);
  for (int i = 0; i < grid.rows; ++i) {
    for (int j = 0; j < grid.cols; ++j) {
      if (j > 0)
        os << '\t';
      os << grid(i, j);
    }
    os << '\n';
  }
  atomic_write_file(path, os.str());
}

DMatrix read_grid_tsv(const std::filesystem::path &path) {
  const auto bytes = read_file(path);
  std::istringstream is(std::string(bytes.begin(), bytes.end()));
  std::vector<std::vector<double>> rows;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    std::vector<double> row;
    size_t start = 0;
    while (start <= line.size()) {
      const size_t tab = line.find('\t', start);
      const std::string cell =
          line.substr(start, tab == std::string::npos ? tab : tab - start);
      try {
        size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size())
          throw DataError("trailing characters");
      } catch (const std::exception &) {
        throw DataError("grid " + path.string() + " line " +
                        std::to_string(line_no) + ": bad number '" + cell +
                        "'");
      }
      if (tab == std::string::npos)
        break;
      start = tab + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw DataError("grid " + path.string() + " line " +
                      std::to_string(line_no) + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty())
    throw DataError("grid " + path.string() + " is empty");
  DMatrix out{int(rows.size()), int(rows.front().size())};
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j)
      out(int(i), int(j)) = rows[i][j];
  return out;
}

} // namespace skald
