// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <filesystem>
#include <vector>

#include "skald/common.hpp"
#include "skald/neural/net.hpp"

namespace skald {

/// Discrete Fourier transform of any length. Power-of-two sizes run on the
/// radix-2 kernel directly; other sizes go through the Bluestein chirp
/// reformulation over that kernel. The inverse carries the 1/N factor.
std::vector<std::complex<double>> dft(std::vector<std::complex<double>> x,
                                      bool inverse = false);

/// Row-wise DFT magnitude half-spectrum of a weight matrix: units x D in,
/// units x (D/2 + 1) out, row order preserved.
DMatrix weight_spectrum(const DMatrix &weights);

/// Interior Savitzky-Golay kernel: least-squares polynomial of degree
/// `order` over `window` samples, evaluated at the center.
std::vector<double> savgol_coeffs(int window, int order);

/// Convolves v with the kernel; edges are mirror padded.
std::vector<double> savgol_smooth(const std::vector<double> &v, int window,
                                  int order);

/// Hidden-state trajectory of the recurrent layer at layer_index for one
/// sequence (steps x dim, no batch axis), as a steps x units grid in
/// original time order. A bidirectional layer is traced on its forward half.
DMatrix activation_trace(Net<float> &net, int layer_index,
                         const Tensor<float> &sequence);

/// Plain tab-separated numeric grids for external plotting tools.
void write_grid_tsv(const std::filesystem::path &path, const DMatrix &grid);
DMatrix read_grid_tsv(const std::filesystem::path &path);

} // namespace skald
