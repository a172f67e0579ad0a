#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvl/ops.hpp"
#include "kvl/params.hpp"
#include "kvl/rng.hpp"
#include "kvl/tape.hpp"

namespace kvl {

// Uniform B-spline basis of degree k over g intervals spanning [lo, hi],
// extended by k knots on each side. g + k basis functions; on [lo, hi] they
// are nonnegative and form a partition of unity. Inputs are clamped to
// [lo, hi] before evaluation.
struct SplineBasis {
    int degree = 3;
    std::size_t grid_size = 5;
    double lo = -1.0;
    double hi = 1.0;

    SplineBasis() = default;
    SplineBasis(int k, std::size_t g, double lo_, double hi_);

    std::size_t count() const { return grid_size + static_cast<std::size_t>(degree); }
    double step() const { return (hi - lo) / static_cast<double>(grid_size); }
    // Knot array index a in [0, g+2k]; knot value lo + (a-k)*step.
    double knot(std::size_t a) const { return lo + (static_cast<double>(a) - degree) * step(); }

    // Cox-de Boor evaluation at clamped x: the degree+1 possibly-nonzero
    // basis values B_first..B_{first+degree}.
    void eval_local(double x, std::size_t& first, double* vals) const;
    // Values and first derivatives (derivative of the clamped input is 0
    // outside the grid).
    void eval_local_deriv(double x, std::size_t& first, double* vals, double* ders) const;

    // Dense vector of all g+k basis values at x.
    Tensor eval_dense(double x) const;

    // Greville abscissae: coefficients for which the spline reproduces
    // y = x exactly on [lo, hi] (degree >= 1).
    std::vector<double> identity_coeffs() const;
};

struct PhiEdgeInit {
    double w1 = 1.0;
    double w2 = 1.0;
    double coeff_std = 0.1;
};

// One learnable edge function phi(x) = w1 * spline(x) + w2 * silu(x).
struct PhiEdgeParams {
    SplineBasis basis;
    std::size_t coeffs = 0;  // [count]
    std::size_t w1 = 0;      // rank-0
    std::size_t w2 = 0;      // rank-0
};

PhiEdgeParams make_phi_edge(ParamStore& store, const std::string& prefix, const SplineBasis& basis, Rng& rng,
                            const PhiEdgeInit& init = {});
// w1 = 1, w2 = 0, coeffs = identity_coeffs(): phi(x) = x on the grid.
PhiEdgeParams make_identity_phi_edge(ParamStore& store, const std::string& prefix, const SplineBasis& basis);

// Elementwise phi over any tensor; differentiable in x, coeffs, w1, w2.
Var phi_eval(Tape& tape, const ParamStore& store, const PhiEdgeParams& edge, Var x);

// KAN layer: out_q = sum_p phi_{q,p}(x_p), one independent edge per (q,p).
// Packed parameters: coeffs [out,in,count], w1/w2 [out,in].
struct KanLayerParams {
    SplineBasis basis;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::size_t coeffs = 0;
    std::size_t w1 = 0;
    std::size_t w2 = 0;
};

KanLayerParams make_kan_layer(ParamStore& store, const std::string& prefix, std::size_t in_dim, std::size_t out_dim,
                              const SplineBasis& basis, Rng& rng, const PhiEdgeInit& init = {});
KanLayerParams make_identity_kan_layer(ParamStore& store, const std::string& prefix, std::size_t in_dim,
                                       std::size_t out_dim, const SplineBasis& basis);

Var kan_linear_forward(Tape& tape, const ParamStore& store, const KanLayerParams& layer, Var x);

// Composition of layers; adjacent dimensions must chain.
Var kan_stack_forward(Tape& tape, const ParamStore& store, const std::vector<KanLayerParams>& layers, Var x);

// KAN convolution kernel: every kernel cell of every (c_out, c_in) pair is
// an independent edge function; an output pixel is the sum of
// phi^{(co,ci)}_{ky,kx}(window pixel) over the window and input channels.
// Packed parameters: coeffs [co,ci,kh,kw,count], w1/w2 [co,ci,kh,kw].
struct KanConvParams {
    SplineBasis basis;
    std::size_t c_out = 0;
    std::size_t c_in = 0;
    std::size_t kh = 0;
    std::size_t kw = 0;
    std::size_t coeffs = 0;
    std::size_t w1 = 0;
    std::size_t w2 = 0;
};

KanConvParams make_kan_conv(ParamStore& store, const std::string& prefix, std::size_t c_out, std::size_t c_in,
                            std::size_t kh, std::size_t kw, const SplineBasis& basis, Rng& rng,
                            const PhiEdgeInit& init = {});
KanConvParams make_identity_kan_conv(ParamStore& store, const std::string& prefix, std::size_t c_out, std::size_t c_in,
                                     std::size_t kh, std::size_t kw, const SplineBasis& basis);

Var kan_conv2d(Tape& tape, const ParamStore& store, const KanConvParams& kernel, Var x, std::size_t stride = 1,
               std::size_t padding = 0);

}  // namespace kvl
