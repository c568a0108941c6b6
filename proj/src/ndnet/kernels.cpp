#include "jsa/kernels.hpp"

#include <algorithm>
#include <cstdint>

namespace jsa::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

bool worth_parallel(AffineDims d) { return d.batch * d.in * d.out >= kParallelWork; }

}  // namespace

void affine_forward(AffineDims d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  const auto batch = static_cast<std::int64_t>(d.batch);
  const std::size_t in = d.in, out = d.out;
  const double* xp = x.data();
  const double* wp = w.data();
  const double* bp = bias.data();
  double* yp = y.data();
#pragma omp parallel for schedule(static) if (worth_parallel(d))
  for (std::int64_t b = 0; b < batch; ++b) {
    double* yr = yp + b * out;
    const double* xr = xp + b * in;
    std::copy_n(bp, out, yr);
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xr[k];
      if (xv == 0.0) continue;
      const double* wr = wp + k * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xv * wr[j];
    }
  }
}

void affine_forward_reference(AffineDims d, std::span<const double> x, std::span<const double> w,
                              std::span<const double> bias, std::span<double> y) {
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t j = 0; j < d.out; ++j) {
      double acc = bias[j];
      for (std::size_t k = 0; k < d.in; ++k) acc += x[b * d.in + k] * w[k * d.out + j];
      y[b * d.out + j] = acc;
    }
  }
}

void affine_backward_input(AffineDims d, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx) {
  const auto batch = static_cast<std::int64_t>(d.batch);
  const std::size_t in = d.in, out = d.out;
  const double* dyp = dy.data();
  const double* wp = w.data();
  double* dxp = dx.data();
#pragma omp parallel for schedule(static) if (worth_parallel(d))
  for (std::int64_t b = 0; b < batch; ++b) {
    const double* g = dyp + b * out;
    double* dr = dxp + b * in;
    for (std::size_t k = 0; k < in; ++k) {
      const double* wr = wp + k * out;
      double acc = 0.0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t j = 0; j < out; ++j) acc += g[j] * wr[j];
      dr[k] = acc;
    }
  }
}

void affine_backward_input_reference(AffineDims d, std::span<const double> dy,
                                     std::span<const double> w, std::span<double> dx) {
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t k = 0; k < d.in; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d.out; ++j) acc += dy[b * d.out + j] * w[k * d.out + j];
      dx[b * d.in + k] = acc;
    }
  }
}

void affine_backward_params(AffineDims d, std::span<const double> x, std::span<const double> dy,
                            std::span<double> dw, std::span<double> dbias) {
  const std::size_t batch = d.batch, out = d.out;
  const auto in = static_cast<std::int64_t>(d.in);
  const double* xp = x.data();
  const double* dyp = dy.data();
  double* dwp = dw.data();
  // Each thread owns whole rows of dw, so there are no write conflicts.
#pragma omp parallel for schedule(static) if (worth_parallel(d))
  for (std::int64_t k = 0; k < in; ++k) {
    double* dwr = dwp + k * out;
    for (std::size_t b = 0; b < batch; ++b) {
      const double xv = xp[b * d.in + k];
      if (xv == 0.0) continue;
      const double* g = dyp + b * out;
      for (std::size_t j = 0; j < out; ++j) dwr[j] += xv * g[j];
    }
  }
  for (std::size_t b = 0; b < batch; ++b) {
    const double* g = dyp + b * out;
    for (std::size_t j = 0; j < out; ++j) dbias[j] += g[j];
  }
}

void affine_backward_params_reference(AffineDims d, std::span<const double> x,
                                      std::span<const double> dy, std::span<double> dw,
                                      std::span<double> dbias) {
  for (std::size_t k = 0; k < d.in; ++k) {
    for (std::size_t j = 0; j < d.out; ++j) {
      double acc = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b) acc += x[b * d.in + k] * dy[b * d.out + j];
      dw[k * d.out + j] += acc;
    }
  }
  for (std::size_t j = 0; j < d.out; ++j) {
    double acc = 0.0;
    for (std::size_t b = 0; b < d.batch; ++b) acc += dy[b * d.out + j];
    dbias[j] += acc;
  }
}

}  // namespace jsa::kernels
