// Serial reference vs OpenMP kernels at surrogate-sized shapes.
// Run: ./build/bench/covdistill_bench [--benchmark_filter=matmul]

#include <benchmark/benchmark.h>
#include <omp.h>

#include "covdistill/kernels.hpp"
#include "covdistill/rng.hpp"

using namespace covdistill;

namespace {

Matrix filled(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (double& v : m.flat()) v = rng.normal();
  return m;
}

// rows x inner x cols, e.g. a 256-scene batch through a 256->512 linear.
template <void (*Kernel)(const Matrix&, const Matrix&, Matrix&)>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto m = static_cast<std::size_t>(state.range(2));
  const Matrix a = filled(n, k, 1), b = filled(k, m, 2);
  Matrix out;
  for (auto _ : state) {
    Kernel(a, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * k * m));
  state.counters["threads"] = omp_get_max_threads();
}

template <void (*Kernel)(const Matrix&, const Matrix&, Matrix&, bool)>
void BM_MatmulAtB(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto m = static_cast<std::size_t>(state.range(2));
  const Matrix a = filled(n, k, 3), b = filled(n, m, 4);
  Matrix out;
  for (auto _ : state) {
    Kernel(a, b, out, false);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * k * m));
}

template <void (*Kernel)(const Matrix&, const Matrix&, Matrix&)>
void BM_MatmulABt(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto m = static_cast<std::size_t>(state.range(2));
  const Matrix a = filled(n, k, 5), b = filled(m, k, 6);
  Matrix out;
  for (auto _ : state) {
    Kernel(a, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * k * m));
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 128, 256})->Args({256, 256, 512})->Args({1600, 256, 128})->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(BM_Matmul<kernels::serial::matmul>)->Name("matmul/serial")->Apply(shapes);
BENCHMARK(BM_Matmul<kernels::omp::matmul>)->Name("matmul/omp")->Apply(shapes);
BENCHMARK(BM_MatmulAtB<kernels::serial::matmul_at_b>)->Name("matmul_at_b/serial")->Apply(shapes);
BENCHMARK(BM_MatmulAtB<kernels::omp::matmul_at_b>)->Name("matmul_at_b/omp")->Apply(shapes);
BENCHMARK(BM_MatmulABt<kernels::serial::matmul_a_bt>)->Name("matmul_a_bt/serial")->Apply(shapes);
BENCHMARK(BM_MatmulABt<kernels::omp::matmul_a_bt>)->Name("matmul_a_bt/omp")->Apply(shapes);

BENCHMARK_MAIN();
