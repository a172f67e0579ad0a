#include "kvl/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "kvl/rng.hpp"

namespace kvl {

namespace {

struct TimingStats {
    double median, p10, p90;
};

TimingStats stats_ns(std::vector<double> samples) {
    std::sort(samples.begin(), samples.end());
    const std::size_t n = samples.size();
    auto nearest_rank = [&](double p) {
        std::size_t r = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
        r = std::clamp<std::size_t>(r, 1, n);
        return samples[r - 1];
    };
    return {nearest_rank(0.5), nearest_rank(0.1), nearest_rank(0.9)};
}

template <class Fn>
TimingStats time_fn(Fn&& fn, std::size_t reps, std::size_t warmup) {
    for (std::size_t i = 0; i < warmup; ++i) fn();
    std::vector<double> ns;
    ns.reserve(reps);
    for (std::size_t i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        ns.push_back(static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    }
    return stats_ns(std::move(ns));
}

}  // namespace

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ArgError("loglog_slope: need >= 2 points");
    const std::size_t n = x.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double lx = std::log(x[i]);
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double denom = static_cast<double>(n) * sxx - sx * sx;
    return (static_cast<double>(n) * sxy - sx * sy) / denom;
}

BenchResult run_attention_bench(const BenchSettings& settings) {
    if (settings.n_values.empty() || settings.m_values.empty()) {
        throw ConfigError("bench: need at least one N and one m value");
    }
    for (std::size_t n : settings.n_values) {
        for (std::size_t m : settings.m_values) {
            if (m > n) {
                throw ConfigError("bench: m=" + std::to_string(m) + " exceeds N=" + std::to_string(n));
            }
        }
    }
    if (settings.repetitions < 1) throw ConfigError("bench: repetitions must be >= 1");

    BenchResult result;
    Rng root(settings.seed);
    std::vector<double> n_as_double;
    std::vector<double> exact_medians;
    std::map<std::size_t, std::vector<double>> nystrom_medians;

    for (std::size_t n : settings.n_values) {
        Rng rng = root.substream(n);
        const std::size_t d = settings.head_dim;
        const Tensor q = rng.normal_tensor({n, d}, 0.0, 1.0);
        const Tensor k = rng.normal_tensor({n, d}, 0.0, 1.0);
        const Tensor v = rng.normal_tensor({n, d}, 0.0, 1.0);

        Tensor exact_out;
        const TimingStats exact_t =
            time_fn([&] { exact_out = exact_attention(q, k, v); }, settings.repetitions, settings.warmup);
        n_as_double.push_back(static_cast<double>(n));
        exact_medians.push_back(exact_t.median);

        for (std::size_t m : settings.m_values) {
            AttentionConfig cfg;
            cfg.landmarks = m;
            cfg.mode = settings.mode;
            cfg.pinv_iters = settings.pinv_iters;

            NystromOutput ny;
            const TimingStats ny_t =
                time_fn([&] { ny = nystrom_attention(q, k, v, cfg); }, settings.repetitions, settings.warmup);
            const double err = rel_frobenius_error(ny.out, exact_out);

            result.rows.push_back({"exact", n, m, 1, exact_t.median, exact_t.p10, exact_t.p90, 0.0});
            result.rows.push_back({"nystrom", n, m, 1, ny_t.median, ny_t.p10, ny_t.p90, err});
            nystrom_medians[m].push_back(ny_t.median);
        }
    }

    if (settings.n_values.size() >= 2) {
        result.exact_slope = loglog_slope(n_as_double, exact_medians);
        for (const auto& [m, medians] : nystrom_medians) {
            result.nystrom_slopes[m] = loglog_slope(n_as_double, medians);
        }
    }
    return result;
}

}  // namespace kvl
