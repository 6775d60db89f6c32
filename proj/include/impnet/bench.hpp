#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <numeric>
#include <random>
#include <thread>
#include <vector>

#include "impnet/model.hpp"

namespace impnet {

struct BenchOptions {
  int iterations = 50;
  int warmup = 5;
  int lanes = 1;
  /// One frame = forward on the image and on its flip.
  bool mirror = true;
  std::uint64_t seed = 0;
};

struct LatencyStats {
  double mean_ms = 0;
  double p50_ms = 0;
  double p95_ms = 0;
};

struct BenchReport {
  LatencyStats latency;  // single lane, per frame
  double fps_single_lane = 0;
  double fps_aggregate = 0;  // all lanes together
  std::vector<double> fps_per_lane;
  int lanes = 1;
  int iterations = 0;
  int warmup = 0;
  bool mirror = true;
  std::int64_t param_count = 0;
  /// Ensemble probabilities for the bench input; deterministic given the seed.
  std::vector<float> probabilities;
};

/// Fixed pseudo-random input in [-1, 1]; image decoding stays out of the timing.
inline Tensor<float> bench_input(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  Tensor<float> t({1, size, size});
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

namespace detail {

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

}  // namespace detail

/// Lanes share the frozen parameters; each owns its tapes and scratch.
inline BenchReport run_bench(const ModelParams<float>& params, const ModelConfig& config, const BenchOptions& opt) {
  using clock = std::chrono::steady_clock;
  const Tensor<float> input = bench_input(config.input_size, opt.seed);
  BenchReport r;
  r.lanes = std::max(1, opt.lanes);
  r.iterations = std::max(1, opt.iterations);
  r.warmup = std::max(0, opt.warmup);
  r.mirror = opt.mirror;
  r.param_count = count_params(params).total;

  for (int i = 0; i < r.warmup; ++i) predict(params, config, input, opt.mirror);

  std::vector<double> lat;
  const auto t0 = clock::now();
  for (int i = 0; i < r.iterations; ++i) {
    const auto a = clock::now();
    r.probabilities = predict(params, config, input, opt.mirror);
    lat.push_back(std::chrono::duration<double, std::milli>(clock::now() - a).count());
  }
  const double wall = std::chrono::duration<double>(clock::now() - t0).count();
  r.fps_single_lane = r.iterations / wall;
  r.latency.mean_ms = std::accumulate(lat.begin(), lat.end(), 0.0) / static_cast<double>(lat.size());
  r.latency.p50_ms = detail::percentile(lat, 0.5);
  r.latency.p95_ms = detail::percentile(lat, 0.95);

  if (r.lanes == 1) {
    r.fps_aggregate = r.fps_single_lane;
    r.fps_per_lane = {r.fps_single_lane};
    return r;
  }
  std::vector<double> lane_seconds(static_cast<std::size_t>(r.lanes));
  const auto m0 = clock::now();
  {
    std::vector<std::jthread> workers;
    for (int l = 0; l < r.lanes; ++l) {
      workers.emplace_back([&, l] {
        const auto a = clock::now();
        for (int i = 0; i < r.iterations; ++i) predict(params, config, input, opt.mirror);
        lane_seconds[static_cast<std::size_t>(l)] = std::chrono::duration<double>(clock::now() - a).count();
      });
    }
  }
  const double multi_wall = std::chrono::duration<double>(clock::now() - m0).count();
  r.fps_aggregate = static_cast<double>(r.lanes) * r.iterations / multi_wall;
  for (double s : lane_seconds) r.fps_per_lane.push_back(r.iterations / s);
  return r;
}

}  // namespace impnet
