#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kvl/attention.hpp"

namespace kvl {

struct BenchSettings {
    std::vector<std::size_t> n_values{256, 512, 1024, 2048, 4096};
    std::vector<std::size_t> m_values{32};
    std::size_t head_dim = 8;
    std::size_t repetitions = 9;
    std::size_t warmup = 2;
    int pinv_iters = 12;
    LandmarkMode mode = LandmarkMode::SegmentMeans;
    std::uint64_t seed = 42;
};

struct BenchRow {
    std::string method;  // "exact" | "nystrom"
    std::size_t n = 0;
    std::size_t m = 0;
    std::size_t heads = 1;
    double wall_ns_median = 0.0;
    double wall_ns_p10 = 0.0;
    double wall_ns_p90 = 0.0;
    double rel_frobenius_err = 0.0;
};

struct BenchResult {
    std::vector<BenchRow> rows;
    double exact_slope = 0.0;                      // log-log fit of median runtime vs N
    std::map<std::size_t, double> nystrom_slopes;  // per landmark count
};

// Times exact vs Nystrom attention over the configured grid; median of
// `repetitions` runs after `warmup` discarded runs, per-cell relative
// Frobenius error against the exact output, least-squares log-log slopes.
BenchResult run_attention_bench(const BenchSettings& settings);

// Least-squares slope of ln(y) against ln(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace kvl
