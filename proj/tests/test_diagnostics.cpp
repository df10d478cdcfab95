// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>

#include "skald/diagnostics.hpp"
#include "skald/io_util.hpp"
#include "skald/neural/layers.hpp"
#include "skald/neural/net.hpp"

using namespace skald;
namespace fs = std::filesystem;

namespace {

// Direct O(n^2) DFT summation, the independent oracle for the fast path.
std::vector<std::complex<double>> naive_dft(
    const std::vector<std::complex<double>> &x) {
  const size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc{0.0, 0.0};
    for (size_t j = 0; j < n; ++j) {
      const double angle =
          -2.0 * std::numbers::pi * double(k * j % n) / double(n);
      acc += x[j] * std::complex<double>{std::cos(angle), std::sin(angle)};
    }
    out[k] = acc;
  }
  return out;
}

} // namespace

TEST_CASE("dft matches the direct summation at awkward lengths") {
  Rng rng(11);
  for (int n : {2, 3, 5, 8, 12, 61, 100, 183}) {
    std::vector<std::complex<double>> x(size_t(n), std::complex<double>{});
    for (auto &v : x)
      v = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    const auto fast = dft(x);
    const auto direct = naive_dft(x);
    for (size_t k = 0; k < x.size(); ++k)
      CHECK(std::abs(fast[k] - direct[k]) < 1e-9);

    // The inverse undoes the transform.
    const auto back = dft(fast, true);
    for (size_t k = 0; k < x.size(); ++k)
      CHECK(std::abs(back[k] - x[k]) < 1e-9);
  }
  CHECK_THROWS_AS(dft({}), DataError);
}

TEST_CASE("weight_spectrum") {
  SUBCASE("constant rows put all magnitude at the DC bin") {
    DMatrix w(2, 10, 0.0);
    for (int j = 0; j < 10; ++j) {
      w(0, j) = 0.7;
      w(1, j) = -1.5;
    }
    DMatrix s = weight_spectrum(w);
    REQUIRE(s.rows == 2);
    REQUIRE(s.cols == 6);
    CHECK(s(0, 0) == doctest::Approx(7.0).epsilon(1e-9));
    CHECK(s(1, 0) == doctest::Approx(15.0).epsilon(1e-9));
    for (int k = 1; k < 6; ++k) {
      CHECK(s(0, k) < 1e-9);
      CHECK(s(1, k) < 1e-9);
    }
  }
  SUBCASE("a sampled cosine peaks at its own bin") {
    for (int d : {16, 61}) {
      for (int freq : {1, 3, 5}) {
        DMatrix w(1, d);
        for (int j = 0; j < d; ++j)
          w(0, j) = std::cos(2.0 * std::numbers::pi * freq * j / d);
        DMatrix s = weight_spectrum(w);
        int peak = 0;
        for (int k = 1; k < s.cols; ++k)
          if (s(0, k) > s(0, peak))
            peak = k;
        CHECK(peak == freq);
        CHECK(s(0, freq) == doctest::Approx(d / 2.0).epsilon(1e-9));
      }
    }
  }
  SUBCASE("random rows match the direct DFT and satisfy Parseval") {
    Rng rng(23);
    for (int d : {12, 61}) { // one even, one odd length
      DMatrix w(3, d);
      for (auto &v : w.v)
        v = rng.uniform(-1.0, 1.0);
      DMatrix s = weight_spectrum(w);
      CHECK(s.rows == 3);
      CHECK(s.cols == d / 2 + 1);
      for (int r = 0; r < 3; ++r) {
        std::vector<std::complex<double>> x(size_t(d),
                                            std::complex<double>{});
        for (int j = 0; j < d; ++j)
          x[size_t(j)] = {w(r, j), 0.0};
        const auto direct = naive_dft(x);
        for (int k = 0; k < s.cols; ++k)
          CHECK(std::abs(s(r, k) - std::abs(direct[size_t(k)])) < 1e-9);

        // Parseval: sum |x|^2 = (1/D) sum over the full spectrum. Real
        // input makes the upper half mirror the lower.
        double time_energy = 0.0;
        for (int j = 0; j < d; ++j)
          time_energy += w(r, j) * w(r, j);
        double spec_energy = s(r, 0) * s(r, 0);
        if (d % 2 == 0)
          spec_energy += s(r, d / 2) * s(r, d / 2);
        const int top = (d % 2 == 0) ? d / 2 - 1 : d / 2;
        for (int k = 1; k <= top; ++k)
          spec_energy += 2.0 * s(r, k) * s(r, k);
        CHECK(time_energy == doctest::Approx(spec_energy / d).epsilon(1e-9));
      }
    }
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(weight_spectrum(DMatrix(3, 1)), DimensionError);
    CHECK_THROWS_AS(weight_spectrum(DMatrix(0, 8)), DataError);
  }
}

TEST_CASE("savgol_coeffs solves the least-squares kernel") {
  SUBCASE("window 5, order 2 gives the classic kernel") {
    const std::vector<double> c = savgol_coeffs(5, 2);
    const std::vector<double> expected = {-3.0 / 35.0, 12.0 / 35.0,
                                          17.0 / 35.0, 12.0 / 35.0,
                                          -3.0 / 35.0};
    REQUIRE(c.size() == 5);
    for (size_t i = 0; i < 5; ++i)
      CHECK(c[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
  SUBCASE("kernels sum to one") {
    for (int window : {3, 5, 7, 9, 11})
      for (int order = 0; order < window && order <= 4; ++order) {
        const std::vector<double> c = savgol_coeffs(window, order);
        double sum = 0.0;
        for (double v : c)
          sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-10));
      }
  }
  SUBCASE("order 0 averages uniformly") {
    const std::vector<double> c = savgol_coeffs(7, 0);
    for (double v : c)
      CHECK(v == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  }
  SUBCASE("invalid arguments") {
    CHECK_THROWS_AS(savgol_coeffs(4, 2), ConfigError);
    CHECK_THROWS_AS(savgol_coeffs(-3, 1), ConfigError);
    CHECK_THROWS_AS(savgol_coeffs(5, 5), ConfigError);
    CHECK_THROWS_AS(savgol_coeffs(5, -1), ConfigError);
  }
}

TEST_CASE("savgol_smooth") {
  SUBCASE("constant input is unchanged everywhere") {
    std::vector<double> v(20, 4.25);
    const std::vector<double> out = savgol_smooth(v, 9, 3);
    REQUIRE(out.size() == v.size());
    for (double x : out)
      CHECK(x == doctest::Approx(4.25).epsilon(1e-12));
  }
  SUBCASE("polynomials up to the fit order pass through in the interior") {
    const int n = 30, window = 7, order = 3, half = window / 2;
    std::vector<double> v(size_t(n), 0.0);
    for (int i = 0; i < n; ++i) {
      const double t = double(i);
      v[size_t(i)] = 2.0 - 1.5 * t + 0.25 * t * t + 0.01 * t * t * t;
    }
    const std::vector<double> out = savgol_smooth(v, window, order);
    for (int i = half; i < n - half; ++i)
      CHECK(out[size_t(i)] == doctest::Approx(v[size_t(i)]).epsilon(1e-9));
  }
  SUBCASE("linear in its input") {
    Rng rng(7);
    std::vector<double> a(25), b(25);
    for (size_t i = 0; i < a.size(); ++i) {
      a[i] = rng.uniform(-2.0, 2.0);
      b[i] = rng.uniform(-2.0, 2.0);
    }
    std::vector<double> mix(25);
    for (size_t i = 0; i < mix.size(); ++i)
      mix[i] = 3.0 * a[i] - 0.5 * b[i];
    const auto sa = savgol_smooth(a, 9, 3);
    const auto sb = savgol_smooth(b, 9, 3);
    const auto sm = savgol_smooth(mix, 9, 3);
    for (size_t i = 0; i < mix.size(); ++i)
      CHECK(sm[i] == doctest::Approx(3.0 * sa[i] - 0.5 * sb[i]).epsilon(1e-10));
  }
  SUBCASE("translation equivariant away from the edges") {
    Rng rng(9);
    std::vector<double> v(40);
    for (auto &x : v)
      x = rng.uniform(-1.0, 1.0);
    std::vector<double> shifted(40);
    for (size_t i = 0; i + 1 < v.size(); ++i)
      shifted[i + 1] = v[i];
    shifted[0] = rng.uniform(-1.0, 1.0);
    const auto sv = savgol_smooth(v, 7, 2);
    const auto ss = savgol_smooth(shifted, 7, 2);
    // Interior of the shifted smoothing equals the shifted interior.
    for (size_t i = 7; i + 8 < v.size(); ++i)
      CHECK(ss[i + 1] == doctest::Approx(sv[i]).epsilon(1e-10));
  }
  SUBCASE("input shorter than the window is rejected") {
    std::vector<double> v(4, 1.0);
    CHECK_THROWS_AS(savgol_smooth(v, 5, 2), DataError);
  }
}

TEST_CASE("activation_trace") {
  SUBCASE("zero params and zero input give a zero trace") {
    NetSpec spec;
    spec.layers = {LayerDesc::gru(6, false, true), LayerDesc::flatten(),
                   LayerDesc::dense(3), LayerDesc::softmax()};
    Net<float> net(spec, {10, 4}, 1);
    auto &gru = dynamic_cast<GruLayer<float> &>(net.layer(0));
    for (auto &p : gru.params())
      p.value->fill(0.0f);
    Tensor<float> seq({10, 4});
    seq.fill(0.0f);
    DMatrix trace = activation_trace(net, 0, seq);
    REQUIRE(trace.rows == 10);
    REQUIRE(trace.cols == 6);
    for (double v : trace.v)
      CHECK(v == 0.0);
  }
  SUBCASE("the trace replays the layer's own sequence output") {
    NetSpec spec;
    spec.layers = {LayerDesc::gru(5, false, true), LayerDesc::flatten(),
                   LayerDesc::dense(2), LayerDesc::softmax()};
    Net<float> net(spec, {8, 3}, 77);
    Tensor<float> seq({8, 3});
    Rng rng(5);
    for (auto &v : seq.data)
      v = float(rng.uniform(-1.0, 1.0));
    DMatrix trace = activation_trace(net, 0, seq);

    Tensor<float> batched({1, 8, 3});
    batched.data = seq.data;
    Tensor<float> out = net.layer(0).forward(batched, false, 0);
    REQUIRE(out.shape == std::vector<int>{1, 8, 5});
    for (int t = 0; t < 8; ++t)
      for (int j = 0; j < 5; ++j)
        CHECK(trace(t, j) ==
              doctest::Approx(double(out.data[size_t(t) * 5 + size_t(j)]))
                  .epsilon(1e-6));
  }
  SUBCASE("bidirectional layers trace the forward half only") {
    NetSpec spec;
    spec.layers = {LayerDesc::bigru(4, true), LayerDesc::flatten(),
                   LayerDesc::dense(2), LayerDesc::softmax()};
    Net<float> net(spec, {6, 3}, 13);
    auto &bi = dynamic_cast<BiGruLayer<float> &>(net.layer(0));
    Tensor<float> seq({6, 3});
    Rng rng(6);
    for (auto &v : seq.data)
      v = float(rng.uniform(-1.0, 1.0));
    DMatrix trace = activation_trace(net, 0, seq);
    REQUIRE(trace.rows == 6);
    REQUIRE(trace.cols == 4); // units, not the concatenated 2*units

    // Scrambling the backward half must not move the trace.
    for (auto &p : bi.backward_half().params())
      p.value->fill(9.0f);
    DMatrix again = activation_trace(net, 0, seq);
    CHECK(again.v == trace.v);
  }
  SUBCASE("constant input settles toward a fixed point on damped nets") {
    int settled = 0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
      NetSpec spec;
      spec.layers = {LayerDesc::gru(8, false, true), LayerDesc::flatten(),
                     LayerDesc::dense(2), LayerDesc::softmax()};
      Net<float> net(spec, {60, 3}, seed);
      // Shrink the weights so the state map is a contraction.
      for (auto &p : net.layer(0).params())
        for (auto &v : p.value->data)
          v *= 0.3f;
      Tensor<float> seq({60, 3});
      for (int t = 0; t < 60; ++t)
        for (int j = 0; j < 3; ++j)
          seq(t, j) = 0.5f;
      DMatrix trace = activation_trace(net, 0, seq);
      std::vector<double> diff;
      for (int t = 1; t < trace.rows; ++t) {
        double d = 0.0;
        for (int j = 0; j < trace.cols; ++j)
          d += (trace(t, j) - trace(t - 1, j)) * (trace(t, j) - trace(t - 1, j));
        diff.push_back(std::sqrt(d));
      }
      // After burn-in the step-to-step movement has decayed hard.
      if (diff[58] < 1e-4 && diff[58] < diff[10] + 1e-12)
        ++settled;
    }
    CHECK(settled >= 4); // statistical: allow one unlucky draw
  }
  SUBCASE("non-recurrent layers are rejected") {
    NetSpec spec;
    spec.layers = {LayerDesc::dense(4), LayerDesc::relu(),
                   LayerDesc::dense(2), LayerDesc::softmax()};
    Net<float> net(spec, {5}, 3);
    Tensor<float> seq({4, 5});
    seq.fill(0.1f);
    CHECK_THROWS_AS(activation_trace(net, 1, seq), ConfigError);
    CHECK_THROWS_AS(activation_trace(net, 9, seq), ConfigError);
  }
}

TEST_CASE("grid files round-trip bit-exactly") {
  const fs::path dir = fs::temp_directory_path() / "skald_test_diag";
  fs::create_directories(dir);
  const fs::path path = dir / "grid.tsv";

  Rng rng(15);
  DMatrix grid(7, 5);
  for (auto &v : grid.v)
    v = rng.uniform(-10.0, 10.0);
  grid(0, 0) = 1.0 / 3.0;
  write_grid_tsv(path, grid);
  DMatrix back = read_grid_tsv(path);
  CHECK(back.rows == grid.rows);
  CHECK(back.cols == grid.cols);
  CHECK(back.v == grid.v);

  atomic_write_file(path, std::string("1\t2\n3\n"));
  CHECK_THROWS_AS(read_grid_tsv(path), DataError);
  atomic_write_file(path, std::string("1\tx\n"));
  CHECK_THROWS_AS(read_grid_tsv(path), DataError);
  atomic_write_file(path, std::string(""));
  CHECK_THROWS_AS(read_grid_tsv(path), DataError);
  fs::remove_all(dir);
}
