#include <benchmark/benchmark.h>

#include <cstdint>
#include <random>
#include <vector>

#include "matex/kernels.hpp"

namespace k = matex::kernels;

namespace {

template <class T>
std::vector<T> noise(std::size_t n, unsigned seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

// Range(0) is the patch count; 12 layers, 768 channels as in a ViT-B encoder.
constexpr std::size_t kLayers = 12;
constexpr std::size_t kChannels = 768;

template <auto Fn>
void BM_weighted_layer_sum(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto rows = noise<float>(kLayers * n, 1);
  const auto w = noise<double>(kLayers, 2);
  std::vector<double> out(n);
  for (auto _ : st) {
    Fn(rows, w, n, out);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<int64_t>(kLayers * n));
}

template <auto Fn>
void BM_layer_std(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto rows = noise<float>(kLayers * n, 3);
  std::vector<double> out(n);
  for (auto _ : st) {
    Fn(rows, kLayers, n, out);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<int64_t>(kLayers * n));
}

template <auto Fn>
void BM_grad_times_activation(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto g = noise<float>(n * kChannels, 4, -1, 1);
  const auto a = noise<float>(n * kChannels, 5, -1, 1);
  std::vector<double> out(n);
  for (auto _ : st) {
    Fn(g, a, n, kChannels, out);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<int64_t>(n * kChannels));
}

template <auto Fn>
void BM_fuse(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto g = noise<double>(n, 6), f = noise<double>(n, 7), c = noise<double>(n, 8), m = noise<double>(n, 9, 1, 2.5);
  const k::FusionCoefficients coef{0.5, 0.2, 0.35, 0.2};
  std::vector<double> out(n);
  for (auto _ : st) {
    Fn(g, f, c, m, coef, out);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<int64_t>(n));
}

// Range(0) is the output side; input is a 14x14 patch grid.
template <auto Fn>
void BM_resize_bilinear(benchmark::State& st) {
  const auto side = static_cast<std::size_t>(st.range(0));
  const auto in = noise<double>(14 * 14, 10);
  std::vector<double> out(side * side);
  for (auto _ : st) {
    Fn(in, 14, 14, out, side, side);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<int64_t>(side * side));
}

template <auto Fn>
void BM_blend_overlay(benchmark::State& st) {
  const auto side = static_cast<std::size_t>(st.range(0));
  const auto n = side * side;
  std::vector<std::uint8_t> gray(n);
  for (std::size_t i = 0; i < n; ++i) gray[i] = static_cast<std::uint8_t>(i * 31);
  const auto heat = noise<double>(n, 11);
  std::vector<std::uint8_t> rgb(3 * n);
  for (auto _ : st) {
    Fn(gray, heat, 0.5, 0.5, rgb);
    benchmark::DoNotOptimize(rgb.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<int64_t>(n));
}

}  // namespace

#define MATEX_PAIR(name, ...)                                              \
  BENCHMARK(BM_##name<&k::serial::name>)->Name("serial/" #name)->__VA_ARGS__; \
  BENCHMARK(BM_##name<&k::omp::name>)->Name("omp/" #name)->__VA_ARGS__

MATEX_PAIR(weighted_layer_sum, Arg(196)->Arg(4096)->Arg(65536));
MATEX_PAIR(layer_std, Arg(196)->Arg(4096)->Arg(65536));
MATEX_PAIR(grad_times_activation, Arg(196)->Arg(1024));
MATEX_PAIR(fuse, Arg(196)->Arg(65536));
MATEX_PAIR(resize_bilinear, Arg(224)->Arg(1024));
MATEX_PAIR(blend_overlay, Arg(224)->Arg(1024));

BENCHMARK_MAIN();
