#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "kvl/params.hpp"
#include "kvl/tensor.hpp"

namespace kvl {

// Central finite differences (f(p+h) - f(p-h)) / 2h per coordinate for the
// parameters named by `ids`. `f` must be a deterministic function of the
// store values. This is the independent oracle the analytic tape gradients
// are verified against.
std::vector<Tensor> finite_diff_grad(ParamStore& store, const std::vector<std::size_t>& ids,
                                     const std::function<double()>& f, double h = 1e-5);

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t checks = 0;
    std::string worst_param;
};

// Compares analytic gradients (keyed by store id; absent = zero) against the
// finite-difference oracle. Relative error uses a small denominator floor so
// near-zero coordinates are compared absolutely.
GradCheckResult compare_grads(const ParamStore& store, const std::vector<std::size_t>& ids,
                              const std::unordered_map<std::size_t, Tensor>& analytic,
                              const std::vector<Tensor>& fd);

inline constexpr double kGradTolerance = 1e-4;

struct GradCheckCase {
    std::string op;
    std::function<GradCheckResult(std::uint64_t seed)> run;
};

// One fixture per parameterized op; "every registered parameterized op
// exactly once" is what cmd_gradcheck reports over.
const std::vector<GradCheckCase>& gradcheck_registry();

struct GradCheckReport {
    struct Row {
        std::string op;
        double max_rel_err;
        std::size_t checks;
        bool pass;
    };
    std::vector<Row> rows;
    bool all_pass = true;
    std::string worst_op;
    double worst_err = 0.0;
};

// Runs the whole registry. `fault_op`, when non-empty, perturbs that op's
// analytic gradients before comparison (test hook for the failure path).
GradCheckReport run_gradcheck(std::uint64_t seed, const std::string& fault_op = "");

}  // namespace kvl
