// Parallel vs serial-reference kernels at the shapes the presets use.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "jsa/architecture.hpp"
#include "jsa/kernels.hpp"
#include "jsa/models.hpp"

namespace {

using jsa::kernels::AffineDims;

struct Buffers {
  std::vector<double> x, w, b, y, dy, dx, dw, db;
  Buffers(AffineDims d, double density) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1), z(0, 1);
    auto fill = [&](std::vector<double>& v, std::size_t n, double dens) {
      v.resize(n);
      for (double& e : v) e = z(rng) < dens ? u(rng) : 0.0;
    };
    fill(x, d.batch * d.in, density);
    fill(w, d.in * d.out, 1.0);
    fill(b, d.out, 1.0);
    fill(dy, d.batch * d.out, 1.0);
    y.assign(d.batch * d.out, 0.0);
    dx.assign(d.batch * d.in, 0.0);
    dw.assign(d.in * d.out, 0.0);
    db.assign(d.out, 0.0);
  }
};

AffineDims dims(const benchmark::State& s) {
  return {static_cast<std::size_t>(s.range(0)), static_cast<std::size_t>(s.range(1)),
          static_cast<std::size_t>(s.range(2))};
}

// Binary inputs are about half zeros; that is what the zero-skipping exploits.
constexpr double kDensity = 0.5;

void BM_forward(benchmark::State& s) {
  const AffineDims d = dims(s);
  Buffers b(d, kDensity);
  for (auto _ : s) {
    jsa::kernels::affine_forward(d, b.x, b.w, b.b, b.y);
    benchmark::DoNotOptimize(b.y.data());
  }
  s.SetItemsProcessed(s.iterations() * static_cast<int64_t>(d.batch * d.in * d.out));
}

void BM_forward_reference(benchmark::State& s) {
  const AffineDims d = dims(s);
  Buffers b(d, kDensity);
  for (auto _ : s) {
    jsa::kernels::affine_forward_reference(d, b.x, b.w, b.b, b.y);
    benchmark::DoNotOptimize(b.y.data());
  }
  s.SetItemsProcessed(s.iterations() * static_cast<int64_t>(d.batch * d.in * d.out));
}

void BM_backward_params(benchmark::State& s) {
  const AffineDims d = dims(s);
  Buffers b(d, kDensity);
  for (auto _ : s) {
    jsa::kernels::affine_backward_params(d, b.x, b.dy, b.dw, b.db);
    benchmark::DoNotOptimize(b.dw.data());
  }
  s.SetItemsProcessed(s.iterations() * static_cast<int64_t>(d.batch * d.in * d.out));
}

void BM_backward_params_reference(benchmark::State& s) {
  const AffineDims d = dims(s);
  Buffers b(d, kDensity);
  for (auto _ : s) {
    jsa::kernels::affine_backward_params_reference(d, b.x, b.dy, b.dw, b.db);
    benchmark::DoNotOptimize(b.dw.data());
  }
  s.SetItemsProcessed(s.iterations() * static_cast<int64_t>(d.batch * d.in * d.out));
}

void BM_backward_input(benchmark::State& s) {
  const AffineDims d = dims(s);
  Buffers b(d, kDensity);
  for (auto _ : s) {
    jsa::kernels::affine_backward_input(d, b.dy, b.w, b.dx);
    benchmark::DoNotOptimize(b.dx.data());
  }
  s.SetItemsProcessed(s.iterations() * static_cast<int64_t>(d.batch * d.in * d.out));
}

void BM_backward_input_reference(benchmark::State& s) {
  const AffineDims d = dims(s);
  Buffers b(d, kDensity);
  for (auto _ : s) {
    jsa::kernels::affine_backward_input_reference(d, b.dy, b.w, b.dx);
    benchmark::DoNotOptimize(b.dx.data());
  }
  s.SetItemsProcessed(s.iterations() * static_cast<int64_t>(d.batch * d.in * d.out));
}

// Decoder of the linear preset on a minibatch of 50 points x 2 particles,
// and the first encoder layer of the categorical preset.
#define JSA_SHAPES ->Args({100, 200, 784})->Args({50, 784, 512})->Args({200, 512, 256})

BENCHMARK(BM_forward) JSA_SHAPES;
BENCHMARK(BM_forward_reference) JSA_SHAPES;
BENCHMARK(BM_backward_params) JSA_SHAPES;
BENCHMARK(BM_backward_params_reference) JSA_SHAPES;
BENCHMARK(BM_backward_input) JSA_SHAPES;
BENCHMARK(BM_backward_input_reference) JSA_SHAPES;

void BM_log_joint_linear_preset(benchmark::State& s) {
  const jsa::ModelPair pair = jsa::build_architecture("linear", 1);
  std::mt19937_64 rng(2);
  jsa::DenseArray x = jsa::DenseArray::matrix(static_cast<std::size_t>(s.range(0)), 784);
  std::bernoulli_distribution pix(0.15);
  for (double& v : x.storage()) v = pix(rng) ? 1.0 : 0.0;
  const auto prop = jsa::propose(pair.inf, x, jsa::no_context(), 1, rng);
  for (auto _ : s) benchmark::DoNotOptimize(jsa::log_joint_rows(pair.gen, x, prop.h, jsa::no_context()));
}
BENCHMARK(BM_log_joint_linear_preset)->Arg(100);

}  // namespace

BENCHMARK_MAIN();
