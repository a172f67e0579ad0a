#include "kvl/spline.hpp"

#include <algorithm>
#include <cmath>

namespace kvl {

namespace {
constexpr int kMaxDegree = 7;
}

SplineBasis::SplineBasis(int k, std::size_t g, double lo_, double hi_) : degree(k), grid_size(g), lo(lo_), hi(hi_) {
    if (k < 0 || k > kMaxDegree) throw ConfigError("spline degree must be in [0, 7], got " + std::to_string(k));
    if (g < 1) throw ConfigError("spline grid needs at least one interval");
    if (!(hi_ > lo_)) throw ConfigError("spline grid range must have hi > lo (knots strictly increasing)");
}

void SplineBasis::eval_local(double x, std::size_t& first, double* vals) const {
    const int k = degree;
    const double xc = std::clamp(x, lo, hi);
    long cell = static_cast<long>(std::floor((xc - lo) / step()));
    cell = std::clamp(cell, 0L, static_cast<long>(grid_size) - 1);
    const std::size_t s = static_cast<std::size_t>(k) + static_cast<std::size_t>(cell);

    double left[kMaxDegree + 1];
    double right[kMaxDegree + 1];
    vals[0] = 1.0;
    for (int j = 1; j <= k; ++j) {
        left[j] = xc - knot(s + 1 - static_cast<std::size_t>(j));
        right[j] = knot(s + static_cast<std::size_t>(j)) - xc;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double temp = vals[r] / (right[r + 1] + left[j - r]);
            vals[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        vals[j] = saved;
    }
    first = s - static_cast<std::size_t>(k);
}

void SplineBasis::eval_local_deriv(double x, std::size_t& first, double* vals, double* ders) const {
    const int k = degree;
    eval_local(x, first, vals);
    if (k == 0) {
        ders[0] = 0.0;
        return;
    }
    // Degree-(k-1) values at the same span give the derivative:
    // B'_j = (B^{k-1}_j - B^{k-1}_{j+1}) / h on a uniform grid.
    SplineBasis lower(k - 1, grid_size, lo, hi);
    // Same clamped cell, so the lower-degree nonzeros align with ours.
    double low[kMaxDegree + 1];
    std::size_t lfirst = 0;
    lower.eval_local(x, lfirst, low);
    const double inv_h = 1.0 / step();
    for (int t = 0; t <= k; ++t) {
        const double a = (t >= 1) ? low[t - 1] : 0.0;
        const double b = (t <= k - 1) ? low[t] : 0.0;
        ders[t] = (a - b) * inv_h;
    }
    if (x < lo || x > hi) {
        for (int t = 0; t <= k; ++t) ders[t] = 0.0;  // clamped input
    }
}

Tensor SplineBasis::eval_dense(double x) const {
    Tensor out({count()});
    double vals[kMaxDegree + 1];
    std::size_t first = 0;
    eval_local(x, first, vals);
    for (int t = 0; t <= degree; ++t) out[first + static_cast<std::size_t>(t)] = vals[t];
    return out;
}

std::vector<double> SplineBasis::identity_coeffs() const {
    if (degree < 1) throw ArgError("identity_coeffs requires degree >= 1");
    std::vector<double> xi(count());
    for (std::size_t j = 0; j < count(); ++j) {
        double acc = 0.0;
        for (int a = 1; a <= degree; ++a) acc += knot(j + static_cast<std::size_t>(a));
        xi[j] = acc / degree;
    }
    return xi;
}

namespace {

// Per-element basis/silu values cached at forward time and reused by the
// backward closure.
struct EdgeCache {
    std::size_t nloc = 0;
    std::vector<std::uint32_t> first;
    std::vector<double> bvals;
    std::vector<double> bders;
    std::vector<double> siluv;
    std::vector<double> silud;
};

EdgeCache build_cache(const SplineBasis& basis, const Tensor& x) {
    EdgeCache c;
    c.nloc = static_cast<std::size_t>(basis.degree) + 1;
    const std::size_t n = x.size();
    c.first.resize(n);
    c.bvals.resize(n * c.nloc);
    c.bders.resize(n * c.nloc);
    c.siluv.resize(n);
    c.silud.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t f = 0;
        basis.eval_local_deriv(x[i], f, c.bvals.data() + i * c.nloc, c.bders.data() + i * c.nloc);
        c.first[i] = static_cast<std::uint32_t>(f);
        c.siluv[i] = silu_scalar(x[i]);
        c.silud[i] = silu_deriv(x[i]);
    }
    return c;
}

double dot_local(const double* coeffs, std::uint32_t first, const double* vals, std::size_t nloc) {
    double acc = 0.0;
    for (std::size_t t = 0; t < nloc; ++t) acc += coeffs[first + t] * vals[t];
    return acc;
}

}  // namespace

PhiEdgeParams make_phi_edge(ParamStore& store, const std::string& prefix, const SplineBasis& basis, Rng& rng,
                            const PhiEdgeInit& init) {
    PhiEdgeParams e;
    e.basis = basis;
    e.coeffs = store.add(prefix + ".coeffs", rng.normal_tensor({basis.count()}, 0.0, init.coeff_std));
    e.w1 = store.add(prefix + ".w1", Tensor::scalar(init.w1));
    e.w2 = store.add(prefix + ".w2", Tensor::scalar(init.w2));
    return e;
}

PhiEdgeParams make_identity_phi_edge(ParamStore& store, const std::string& prefix, const SplineBasis& basis) {
    PhiEdgeParams e;
    e.basis = basis;
    const std::vector<double> xi = basis.identity_coeffs();
    e.coeffs = store.add(prefix + ".coeffs", Tensor({basis.count()}, xi));
    e.w1 = store.add(prefix + ".w1", Tensor::scalar(1.0));
    e.w2 = store.add(prefix + ".w2", Tensor::scalar(0.0));
    return e;
}

Var phi_eval(Tape& tape, const ParamStore& store, const PhiEdgeParams& edge, Var x) {
    Var c = store.leaf(tape, edge.coeffs);
    Var w1 = store.leaf(tape, edge.w1);
    Var w2 = store.leaf(tape, edge.w2);
    const Tensor& xv = x.val();
    auto cache = std::make_shared<const EdgeCache>(build_cache(edge.basis, xv));

    const Tensor& cv = c.val();
    const double w1v = w1.val()[0];
    const double w2v = w2.val()[0];
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = w1v * dot_local(cv.data(), cache->first[i], cache->bvals.data() + i * cache->nloc, cache->nloc) +
                 w2v * cache->siluv[i];
    }
    return tape.node(
        std::move(out), {x.id, c.id, w1.id, w2.id},
        [cache](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
            const Tensor& xv = tp.value(ps[0]);
            const Tensor& cv = tp.value(ps[1]);
            const double w1v = tp.value(ps[2])[0];
            const double w2v = tp.value(ps[3])[0];
            const std::size_t nloc = cache->nloc;
            Tensor* gx = tp.wants_grad(ps[0]) ? &gb.acc(ps[0], xv.shape()) : nullptr;
            Tensor* gc = tp.wants_grad(ps[1]) ? &gb.acc(ps[1], cv.shape()) : nullptr;
            Tensor* gw1 = tp.wants_grad(ps[2]) ? &gb.acc(ps[2], Shape{}) : nullptr;
            Tensor* gw2 = tp.wants_grad(ps[3]) ? &gb.acc(ps[3], Shape{}) : nullptr;
            for (std::size_t i = 0; i < xv.size(); ++i) {
                const double gi = g[i];
                if (gi == 0.0) continue;
                const double* bv = cache->bvals.data() + i * nloc;
                const double* bd = cache->bders.data() + i * nloc;
                const std::uint32_t f = cache->first[i];
                if (gx) (*gx)[i] += gi * (w1v * dot_local(cv.data(), f, bd, nloc) + w2v * cache->silud[i]);
                if (gc) {
                    for (std::size_t t = 0; t < nloc; ++t) (*gc)[f + t] += gi * w1v * bv[t];
                }
                if (gw1) (*gw1)[0] += gi * dot_local(cv.data(), f, bv, nloc);
                if (gw2) (*gw2)[0] += gi * cache->siluv[i];
            }
        });
}

KanLayerParams make_kan_layer(ParamStore& store, const std::string& prefix, std::size_t in_dim, std::size_t out_dim,
                              const SplineBasis& basis, Rng& rng, const PhiEdgeInit& init) {
    if (in_dim == 0 || out_dim == 0) throw ConfigError("kan layer dims must be positive");
    KanLayerParams l;
    l.basis = basis;
    l.in_dim = in_dim;
    l.out_dim = out_dim;
    l.coeffs = store.add_edges(prefix, rng.normal_tensor({out_dim, in_dim, basis.count()}, 0.0, init.coeff_std),
                               {out_dim, in_dim}, "coeffs");
    l.w1 = store.add_edges(prefix, Tensor::full({out_dim, in_dim}, init.w1), {out_dim, in_dim}, "w1");
    l.w2 = store.add_edges(prefix, Tensor::full({out_dim, in_dim}, init.w2), {out_dim, in_dim}, "w2");
    return l;
}

KanLayerParams make_identity_kan_layer(ParamStore& store, const std::string& prefix, std::size_t in_dim,
                                       std::size_t out_dim, const SplineBasis& basis) {
    KanLayerParams l;
    l.basis = basis;
    l.in_dim = in_dim;
    l.out_dim = out_dim;
    const std::vector<double> xi = basis.identity_coeffs();
    Tensor coeffs({out_dim, in_dim, basis.count()});
    for (std::size_t q = 0; q < out_dim; ++q)
        for (std::size_t p = 0; p < in_dim; ++p)
            for (std::size_t t = 0; t < basis.count(); ++t) coeffs(q, p, t) = xi[t];
    l.coeffs = store.add_edges(prefix, std::move(coeffs), {out_dim, in_dim}, "coeffs");
    l.w1 = store.add_edges(prefix, Tensor::ones({out_dim, in_dim}), {out_dim, in_dim}, "w1");
    l.w2 = store.add_edges(prefix, Tensor::zeros({out_dim, in_dim}), {out_dim, in_dim}, "w2");
    return l;
}

Var kan_linear_forward(Tape& tape, const ParamStore& store, const KanLayerParams& layer, Var x) {
    const Tensor& xv = x.val();
    if (xv.rank() != 1 || xv.dim(0) != layer.in_dim) {
        throw ArgError("kan_linear_forward: input " + shape_str(xv.shape()) + " does not match in_dim " +
                       std::to_string(layer.in_dim));
    }
    Var c = store.leaf(tape, layer.coeffs);
    Var w1 = store.leaf(tape, layer.w1);
    Var w2 = store.leaf(tape, layer.w2);
    auto cache = std::make_shared<const EdgeCache>(build_cache(layer.basis, xv));

    const std::size_t in = layer.in_dim, out = layer.out_dim, nb = layer.basis.count(), nloc = cache->nloc;
    const Tensor& cv = c.val();
    const Tensor& w1v = w1.val();
    const Tensor& w2v = w2.val();
    Tensor y({out});
    for (std::size_t q = 0; q < out; ++q) {
        double acc = 0.0;
        for (std::size_t p = 0; p < in; ++p) {
            const double* crow = cv.data() + (q * in + p) * nb;
            acc += w1v(q, p) * dot_local(crow, cache->first[p], cache->bvals.data() + p * nloc, nloc) +
                   w2v(q, p) * cache->siluv[p];
        }
        y[q] = acc;
    }
    return tape.node(
        std::move(y), {x.id, c.id, w1.id, w2.id},
        [cache, in, out, nb](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
            const Tensor& cv = tp.value(ps[1]);
            const Tensor& w1v = tp.value(ps[2]);
            const Tensor& w2v = tp.value(ps[3]);
            const std::size_t nloc = cache->nloc;
            Tensor* gx = tp.wants_grad(ps[0]) ? &gb.acc(ps[0], tp.value(ps[0]).shape()) : nullptr;
            Tensor* gc = tp.wants_grad(ps[1]) ? &gb.acc(ps[1], cv.shape()) : nullptr;
            Tensor* gw1 = tp.wants_grad(ps[2]) ? &gb.acc(ps[2], w1v.shape()) : nullptr;
            Tensor* gw2 = tp.wants_grad(ps[3]) ? &gb.acc(ps[3], w2v.shape()) : nullptr;
            for (std::size_t q = 0; q < out; ++q) {
                const double gq = g[q];
                if (gq == 0.0) continue;
                for (std::size_t p = 0; p < in; ++p) {
                    const double* crow = cv.data() + (q * in + p) * nb;
                    const double* bv = cache->bvals.data() + p * nloc;
                    const double* bd = cache->bders.data() + p * nloc;
                    const std::uint32_t f = cache->first[p];
                    if (gx) {
                        (*gx)[p] += gq * (w1v(q, p) * dot_local(crow, f, bd, nloc) + w2v(q, p) * cache->silud[p]);
                    }
                    if (gc) {
                        double* grow = gc->data() + (q * in + p) * nb;
                        for (std::size_t t = 0; t < nloc; ++t) grow[f + t] += gq * w1v(q, p) * bv[t];
                    }
                    if (gw1) (*gw1)(q, p) += gq * dot_local(crow, f, bv, nloc);
                    if (gw2) (*gw2)(q, p) += gq * cache->siluv[p];
                }
            }
        });
}

Var kan_stack_forward(Tape& tape, const ParamStore& store, const std::vector<KanLayerParams>& layers, Var x) {
    if (layers.empty()) throw ConfigError("kan_stack_forward: empty stack");
    for (std::size_t i = 1; i < layers.size(); ++i) {
        if (layers[i].in_dim != layers[i - 1].out_dim) {
            throw ConfigError("kan_stack_forward: layer " + std::to_string(i) + " expects " +
                              std::to_string(layers[i].in_dim) + " inputs but previous layer emits " +
                              std::to_string(layers[i - 1].out_dim));
        }
    }
    Var h = x;
    for (const KanLayerParams& l : layers) h = kan_linear_forward(tape, store, l, h);
    return h;
}

KanConvParams make_kan_conv(ParamStore& store, const std::string& prefix, std::size_t c_out, std::size_t c_in,
                            std::size_t kh, std::size_t kw, const SplineBasis& basis, Rng& rng,
                            const PhiEdgeInit& init) {
    if (c_out == 0 || c_in == 0 || kh == 0 || kw == 0) throw ConfigError("kan conv dims must be positive");
    KanConvParams k;
    k.basis = basis;
    k.c_out = c_out;
    k.c_in = c_in;
    k.kh = kh;
    k.kw = kw;
    const std::vector<std::size_t> edims{c_out, c_in, kh, kw};
    k.coeffs = store.add_edges(prefix, rng.normal_tensor({c_out, c_in, kh, kw, basis.count()}, 0.0, init.coeff_std),
                               edims, "coeffs");
    k.w1 = store.add_edges(prefix, Tensor::full({c_out, c_in, kh, kw}, init.w1), edims, "w1");
    k.w2 = store.add_edges(prefix, Tensor::full({c_out, c_in, kh, kw}, init.w2), edims, "w2");
    return k;
}

KanConvParams make_identity_kan_conv(ParamStore& store, const std::string& prefix, std::size_t c_out, std::size_t c_in,
                                     std::size_t kh, std::size_t kw, const SplineBasis& basis) {
    KanConvParams k;
    k.basis = basis;
    k.c_out = c_out;
    k.c_in = c_in;
    k.kh = kh;
    k.kw = kw;
    const std::vector<double> xi = basis.identity_coeffs();
    Tensor coeffs({c_out, c_in, kh, kw, basis.count()});
    const std::size_t edges = c_out * c_in * kh * kw;
    for (std::size_t e = 0; e < edges; ++e)
        for (std::size_t t = 0; t < basis.count(); ++t) coeffs[e * basis.count() + t] = xi[t];
    const std::vector<std::size_t> edims{c_out, c_in, kh, kw};
    k.coeffs = store.add_edges(prefix, std::move(coeffs), edims, "coeffs");
    k.w1 = store.add_edges(prefix, Tensor::ones({c_out, c_in, kh, kw}), edims, "w1");
    k.w2 = store.add_edges(prefix, Tensor::zeros({c_out, c_in, kh, kw}), edims, "w2");
    return k;
}

Var kan_conv2d(Tape& tape, const ParamStore& store, const KanConvParams& kernel, Var x, std::size_t stride,
               std::size_t padding) {
    const Tensor& xv = x.val();
    if (xv.rank() != 3) throw DimError("kan_conv2d: input must be [C,H,W], got " + shape_str(xv.shape()));
    if (xv.dim(0) != kernel.c_in) {
        throw DimError("kan_conv2d: input channels " + std::to_string(xv.dim(0)) + " != kernel c_in " +
                       std::to_string(kernel.c_in));
    }
    if (stride == 0) throw ArgError("kan_conv2d: stride must be >= 1");
    const std::size_t h = xv.dim(1), w = xv.dim(2);
    if (kernel.kh > h + 2 * padding || kernel.kw > w + 2 * padding) {
        throw DimError("kan_conv2d: kernel " + std::to_string(kernel.kh) + "x" + std::to_string(kernel.kw) +
                       " larger than padded input " + shape_str(xv.shape()));
    }
    const std::size_t oh = (h + 2 * padding - kernel.kh) / stride + 1;
    const std::size_t ow = (w + 2 * padding - kernel.kw) / stride + 1;

    Var c = store.leaf(tape, kernel.coeffs);
    Var w1 = store.leaf(tape, kernel.w1);
    Var w2 = store.leaf(tape, kernel.w2);
    auto cache = std::make_shared<const EdgeCache>(build_cache(kernel.basis, xv));

    // Cache entry for zero-padded pixels (index n = x.size()).
    EdgeCache pad;
    pad.nloc = cache->nloc;
    pad.first.resize(1);
    pad.bvals.resize(pad.nloc);
    pad.bders.resize(pad.nloc);
    {
        std::size_t f = 0;
        kernel.basis.eval_local_deriv(0.0, f, pad.bvals.data(), pad.bders.data());
        pad.first[0] = static_cast<std::uint32_t>(f);
    }
    auto padc = std::make_shared<const EdgeCache>(std::move(pad));

    const std::size_t nb = kernel.basis.count(), nloc = cache->nloc;
    const std::size_t ci = kernel.c_in, co = kernel.c_out, kh = kernel.kh, kw = kernel.kw;
    const Tensor& cv = c.val();
    const Tensor& w1v = w1.val();
    const Tensor& w2v = w2.val();

    Tensor y({co, oh, ow});
    for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
            for (std::size_t ic = 0; ic < ci; ++ic) {
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                        const bool padded = iy < 0 || iy >= static_cast<long>(h) || ix < 0 || ix >= static_cast<long>(w);
                        const double* bv;
                        std::uint32_t f;
                        double sv;
                        if (padded) {
                            bv = padc->bvals.data();
                            f = padc->first[0];
                            sv = 0.0;  // silu(0) = 0
                        } else {
                            const std::size_t pix =
                                (ic * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
                            bv = cache->bvals.data() + pix * nloc;
                            f = cache->first[pix];
                            sv = cache->siluv[pix];
                        }
                        for (std::size_t oc = 0; oc < co; ++oc) {
                            const std::size_t e = ((oc * ci + ic) * kh + ky) * kw + kx;
                            y(oc, oy, ox) += w1v[e] * dot_local(cv.data() + e * nb, f, bv, nloc) + w2v[e] * sv;
                        }
                    }
                }
            }
        }
    }

    return tape.node(
        std::move(y), {x.id, c.id, w1.id, w2.id},
        [cache, padc, stride, padding, nb, ci, co, kh, kw](const Tensor& g, const Tape& tp,
                                                           const std::vector<std::size_t>& ps, GradBuf& gb) {
            const Tensor& xv = tp.value(ps[0]);
            const Tensor& cv = tp.value(ps[1]);
            const Tensor& w1v = tp.value(ps[2]);
            const Tensor& w2v = tp.value(ps[3]);
            const std::size_t h = xv.dim(1), w = xv.dim(2);
            const std::size_t oh = g.dim(1), ow = g.dim(2);
            const std::size_t nloc = cache->nloc;
            Tensor* gx = tp.wants_grad(ps[0]) ? &gb.acc(ps[0], xv.shape()) : nullptr;
            Tensor* gc = tp.wants_grad(ps[1]) ? &gb.acc(ps[1], cv.shape()) : nullptr;
            Tensor* gw1 = tp.wants_grad(ps[2]) ? &gb.acc(ps[2], w1v.shape()) : nullptr;
            Tensor* gw2 = tp.wants_grad(ps[3]) ? &gb.acc(ps[3], w2v.shape()) : nullptr;
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    for (std::size_t ic = 0; ic < ci; ++ic) {
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                                const bool padded =
                                    iy < 0 || iy >= static_cast<long>(h) || ix < 0 || ix >= static_cast<long>(w);
                                const double* bv;
                                const double* bd;
                                std::uint32_t f;
                                double sv = 0.0, sd = 0.0;
                                std::size_t pix = 0;
                                if (padded) {
                                    bv = padc->bvals.data();
                                    bd = padc->bders.data();
                                    f = padc->first[0];
                                } else {
                                    pix = (ic * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
                                    bv = cache->bvals.data() + pix * nloc;
                                    bd = cache->bders.data() + pix * nloc;
                                    f = cache->first[pix];
                                    sv = cache->siluv[pix];
                                    sd = cache->silud[pix];
                                }
                                for (std::size_t oc = 0; oc < co; ++oc) {
                                    const double gv = g(oc, oy, ox);
                                    if (gv == 0.0) continue;
                                    const std::size_t e = ((oc * ci + ic) * kh + ky) * kw + kx;
                                    const double* crow = cv.data() + e * nb;
                                    if (gx && !padded) {
                                        (*gx)[pix] += gv * (w1v[e] * dot_local(crow, f, bd, nloc) + w2v[e] * sd);
                                    }
                                    if (gc) {
                                        double* grow = gc->data() + e * nb;
                                        const double s = gv * w1v[e];
                                        for (std::size_t t = 0; t < nloc; ++t) grow[f + t] += s * bv[t];
                                    }
                                    if (gw1) (*gw1)[e] += gv * dot_local(crow, f, bv, nloc);
                                    if (gw2) (*gw2)[e] += gv * sv;
                                }
                            }
                        }
                    }
                }
            }
        });
}

}  // namespace kvl
