#pragma once

#include <cstddef>
#include <span>

// Dense affine-map kernels behind every Linear layer.
//
// Weights are stored row-major as [in, out], so y = x W + b. Each kernel has
// an OpenMP version used by the library and a serial `_reference` version kept
// for tests and benchmarks. The OpenMP versions skip zero inputs, which is the
// common case for binary pixels and latent codes.
namespace jsa::kernels {

struct AffineDims {
  std::size_t batch;
  std::size_t in;
  std::size_t out;
};

// y[b, :] = x[b, :] W + bias
void affine_forward(AffineDims d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
void affine_forward_reference(AffineDims d, std::span<const double> x, std::span<const double> w,
                              std::span<const double> bias, std::span<double> y);

// dx[b, :] = dy[b, :] W^T   (overwrites dx)
void affine_backward_input(AffineDims d, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx);
void affine_backward_input_reference(AffineDims d, std::span<const double> dy,
                                     std::span<const double> w, std::span<double> dx);

// dw += x^T dy, dbias += column sums of dy   (accumulates)
void affine_backward_params(AffineDims d, std::span<const double> x, std::span<const double> dy,
                            std::span<double> dw, std::span<double> dbias);
void affine_backward_params_reference(AffineDims d, std::span<const double> x,
                                      std::span<const double> dy, std::span<double> dw,
                                      std::span<double> dbias);

}  // namespace jsa::kernels
