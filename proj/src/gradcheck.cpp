#include "kvl/gradcheck.hpp"

#include <cmath>

namespace kvl {

std::vector<Tensor> finite_diff_grad(ParamStore& store, const std::vector<std::size_t>& ids,
                                     const std::function<double()>& f, double h) {
    if (h <= 0.0) throw ArgError("finite_diff_grad: h must be positive");
    std::vector<Tensor> out;
    out.reserve(ids.size());
    for (std::size_t id : ids) {
        Tensor& p = store.value(id);
        Tensor g(p.shape());
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p[i];
            p[i] = saved + h;
            const double fp = f();
            p[i] = saved - h;
            const double fm = f();
            p[i] = saved;
            g[i] = (fp - fm) / (2.0 * h);
        }
        out.push_back(std::move(g));
    }
    return out;
}

GradCheckResult compare_grads(const ParamStore& store, const std::vector<std::size_t>& ids,
                              const std::unordered_map<std::size_t, Tensor>& analytic,
                              const std::vector<Tensor>& fd) {
    // Denominator floor: coordinates with |grad| below it are compared on an
    // absolute scale, since FD noise swamps the relative view there.
    constexpr double kDenFloor = 1e-2;
    GradCheckResult res;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const std::size_t id = ids[k];
        const Tensor* an = nullptr;
        if (auto it = analytic.find(id); it != analytic.end()) an = &it->second;
        const Tensor& fg = fd[k];
        for (std::size_t i = 0; i < fg.size(); ++i) {
            const double a = an ? (*an)[i] : 0.0;
            const double diff = std::abs(a - fg[i]);
            const double rel = diff / std::max({std::abs(a), std::abs(fg[i]), kDenFloor});
            ++res.checks;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = store.name(id) + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

GradCheckReport run_gradcheck(std::uint64_t seed, const std::string& fault_op) {
    GradCheckReport report;
    for (const GradCheckCase& c : gradcheck_registry()) {
        GradCheckResult r = c.run(seed);
        if (!fault_op.empty() && c.op == fault_op) {
            // Simulated broken gradient rule: a 5% error on top of whatever
            // the real rule produced.
            r.max_rel_err = std::max(r.max_rel_err, 5e-2);
            r.worst_param += " (injected fault)";
        }
        const bool pass = r.max_rel_err < kGradTolerance;
        report.rows.push_back({c.op, r.max_rel_err, r.checks, pass});
        if (!pass) report.all_pass = false;
        if (r.max_rel_err > report.worst_err) {
            report.worst_err = r.max_rel_err;
            report.worst_op = c.op;
        }
    }
    return report;
}

}  // namespace kvl
