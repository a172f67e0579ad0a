#include "kvl/attention.hpp"

#include <cmath>

namespace kvl {

const char* landmark_mode_name(LandmarkMode mode) {
    return mode == LandmarkMode::SegmentMeans ? "segment-means" : "strided-subset";
}

LandmarkMode landmark_mode_from_name(const std::string& name) {
    if (name == "segment-means") return LandmarkMode::SegmentMeans;
    if (name == "strided-subset") return LandmarkMode::StridedSubset;
    throw ConfigError("unknown landmark mode '" + name + "' (expected segment-means or strided-subset)");
}

namespace {

void check_qkv(const Shape& q, const Shape& k, const Shape& v, const char* op) {
    if (q.size() != 2 || k.size() != 2 || v.size() != 2) {
        throw DimError(std::string(op) + ": Q/K/V must be rank-2, got " + shape_str(q) + ", " + shape_str(k) + ", " +
                       shape_str(v));
    }
    if (q[1] != k[1]) {
        throw DimError(std::string(op) + ": Q " + shape_str(q) + " and K " + shape_str(k) + " disagree on d_k");
    }
    if (k[0] != v[0]) {
        throw DimError(std::string(op) + ": K " + shape_str(k) + " and V " + shape_str(v) + " disagree on rows");
    }
}

std::vector<std::size_t> strided_indices(std::size_t n, std::size_t m) {
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) idx[i] = i * n / m;
    return idx;
}

}  // namespace

Tensor exact_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    check_qkv(q.shape(), k.shape(), v.shape(), "exact_attention");
    const double s = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
    Tensor logits = matmul(q, transpose2d(k));
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] *= s;
    return matmul(softmax(logits, 1), v);
}

Tensor select_landmarks(const Tensor& k, std::size_t m, LandmarkMode mode) {
    if (k.rank() != 2) throw DimError("select_landmarks: K must be rank-2, got " + shape_str(k.shape()));
    if (m == 0 || m > k.dim(0)) {
        throw ArgError("select_landmarks: m=" + std::to_string(m) + " must be in [1, N=" + std::to_string(k.dim(0)) +
                       "]");
    }
    if (mode == LandmarkMode::SegmentMeans) return segment_mean_rows(k, m);
    return gather_rows(k, strided_indices(k.dim(0), m));
}

Tensor pinv_newton(const Tensor& a, int iterations) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
        throw DimError("pinv_newton: square matrix required, got " + shape_str(a.shape()));
    }
    if (!a.all_finite()) throw ArgError("pinv_newton: non-finite input");
    const std::size_t m = a.dim(0);
    double norm1 = 0.0, norminf = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        double cs = 0.0;
        for (std::size_t i = 0; i < m; ++i) cs += std::abs(a(i, j));
        norm1 = std::max(norm1, cs);
    }
    for (std::size_t i = 0; i < m; ++i) {
        double rs = 0.0;
        for (std::size_t j = 0; j < m; ++j) rs += std::abs(a(i, j));
        norminf = std::max(norminf, rs);
    }
    if (norm1 == 0.0 || norminf == 0.0) return Tensor({m, m});  // pinv(0) = 0
    Tensor z = scale(transpose2d(a), 1.0 / (norm1 * norminf));
    for (int it = 0; it < iterations; ++it) {
        Tensor az = matmul(a, z);
        for (std::size_t i = 0; i < az.size(); ++i) az[i] = -az[i];
        for (std::size_t i = 0; i < m; ++i) az(i, i) += 2.0;
        z = matmul(z, az);
    }
    return z;
}

double pinv_rel_residual(const Tensor& a, const Tensor& z) {
    Tensor aza = matmul(matmul(a, z), a);
    return rel_frobenius_error(aza, a);
}

NystromOutput nystrom_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionConfig& cfg) {
    check_qkv(q.shape(), k.shape(), v.shape(), "nystrom_attention");
    const std::size_t n = k.dim(0), m = cfg.landmarks;
    if (m > n) {
        throw ArgError("nystrom_attention: landmarks m=" + std::to_string(m) + " exceeds sequence length N=" +
                       std::to_string(n));
    }
    const double s = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));

    Tensor km = select_landmarks(k, m, cfg.mode);
    Tensor kmt = transpose2d(km);
    Tensor f1 = softmax(scale(matmul(q, kmt), s), 1);       // [N,m]
    Tensor a = softmax(scale(matmul(km, kmt), s), 1);       // [m,m]
    Tensor f3 = softmax(scale(matmul(km, transpose2d(k)), s), 1);  // [m,N]
    Tensor z = pinv_newton(a, cfg.pinv_iters);

    NystromOutput out;
    out.pinv_residual = pinv_rel_residual(a, z);
    out.quality_warning = out.pinv_residual > cfg.pinv_warn_threshold;
    out.out = matmul(f1, matmul(z, matmul(f3, v)));
    return out;
}

Tensor add_registers(const Tensor& x, const Tensor& r) {
    if (x.rank() != 2 || r.rank() != 2 || x.dim(1) != r.dim(1)) {
        throw DimError("add_registers: width mismatch " + shape_str(x.shape()) + " vs registers " +
                       shape_str(r.shape()));
    }
    return concat_rows(x, r);
}

Tensor strip_registers(const Tensor& y, std::size_t r) {
    if (y.rank() != 2) throw DimError("strip_registers: rank-2 input required, got " + shape_str(y.shape()));
    if (r == 0) return y;
    if (y.dim(0) <= r) {
        throw ArgError("strip_registers: row count " + std::to_string(y.dim(0)) + " must exceed r=" +
                       std::to_string(r));
    }
    return slice_rows(y, 0, y.dim(0) - r);
}

// ---------------------------------------------------------------------------
// Tape layer
// ---------------------------------------------------------------------------

Var exact_attention(Var q, Var k, Var v) {
    check_qkv(q.shape(), k.shape(), v.shape(), "exact_attention");
    const double s = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));
    Var attn = softmax(scale(matmul(q, transpose2d(k)), s), 1);
    return matmul(attn, v);
}

Var select_landmarks(Var k, std::size_t m, LandmarkMode mode) {
    if (k.shape().size() != 2) throw DimError("select_landmarks: K must be rank-2, got " + shape_str(k.shape()));
    const std::size_t n = k.shape()[0];
    if (m == 0 || m > n) {
        throw ArgError("select_landmarks: m=" + std::to_string(m) + " must be in [1, N=" + std::to_string(n) + "]");
    }
    if (mode == LandmarkMode::SegmentMeans) return segment_mean_rows(k, m);
    return gather_rows(k, strided_indices(n, m));
}

Var pinv_newton(Var a, int iterations) {
    const Shape& sh = a.shape();
    if (sh.size() != 2 || sh[0] != sh[1]) {
        throw DimError("pinv_newton: square matrix required, got " + shape_str(sh));
    }
    const Tensor& av = a.val();
    if (!av.all_finite()) throw ArgError("pinv_newton: non-finite input");
    const std::size_t m = sh[0];
    double norm1 = 0.0, norminf = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        double cs = 0.0, rs = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            cs += std::abs(av(i, j));
            rs += std::abs(av(j, i));
        }
        norm1 = std::max(norm1, cs);
        norminf = std::max(norminf, rs);
    }
    Tape& tape = *a.tape;
    if (norm1 == 0.0 || norminf == 0.0) return tape.constant(Tensor({m, m}));
    // The init scale is treated as a constant: after convergence the result's
    // dependence on the starting point is negligible.
    Var z = scale(transpose2d(a), 1.0 / (norm1 * norminf));
    Tensor eye2({m, m});
    for (std::size_t i = 0; i < m; ++i) eye2(i, i) = 2.0;
    Var two_i = tape.constant(std::move(eye2));
    for (int it = 0; it < iterations; ++it) {
        z = matmul(z, sub(two_i, matmul(a, z)));
    }
    return z;
}

NystromVarOutput nystrom_attention(Var q, Var k, Var v, const AttentionConfig& cfg) {
    check_qkv(q.shape(), k.shape(), v.shape(), "nystrom_attention");
    const std::size_t n = k.shape()[0], m = cfg.landmarks;
    if (m > n) {
        throw ArgError("nystrom_attention: landmarks m=" + std::to_string(m) + " exceeds sequence length N=" +
                       std::to_string(n));
    }
    const double s = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));

    Var km = select_landmarks(k, m, cfg.mode);
    Var kmt = transpose2d(km);
    Var f1 = softmax(scale(matmul(q, kmt), s), 1);
    Var a = softmax(scale(matmul(km, kmt), s), 1);
    Var f3 = softmax(scale(matmul(km, transpose2d(k)), s), 1);
    Var z = pinv_newton(a, cfg.pinv_iters);

    NystromVarOutput out;
    out.pinv_residual = pinv_rel_residual(a.val(), z.val());
    out.quality_warning = out.pinv_residual > cfg.pinv_warn_threshold;
    out.out = matmul(f1, matmul(z, matmul(f3, v)));
    return out;
}

Var add_registers(Var x, Var r) {
    if (x.shape().size() != 2 || r.shape().size() != 2 || x.shape()[1] != r.shape()[1]) {
        throw DimError("add_registers: width mismatch " + shape_str(x.shape()) + " vs registers " +
                       shape_str(r.shape()));
    }
    return concat_rows(x, r);
}

Var strip_registers(Var y, std::size_t r) {
    if (y.shape().size() != 2) throw DimError("strip_registers: rank-2 input required, got " + shape_str(y.shape()));
    if (r == 0) return y;
    if (y.shape()[0] <= r) {
        throw ArgError("strip_registers: row count " + std::to_string(y.shape()[0]) + " must exceed r=" +
                       std::to_string(r));
    }
    return slice_rows(y, 0, y.shape()[0] - r);
}

RelPosParams make_rel_pos(ParamStore& store, const std::string& prefix, std::size_t heads, std::size_t head_dim,
                          std::size_t max_len, Rng& rng, double init_std) {
    RelPosParams p;
    p.heads = heads;
    p.head_dim = head_dim;
    p.max_len = max_len;
    p.p_rel = store.add(prefix + ".p_rel", rng.normal_tensor({heads, head_dim, max_len}, 0.0, init_std));
    return p;
}

Var apply_rel_pos(Var q3, Var p_rel) {
    const Shape& qs = q3.shape();
    const Shape& ps_ = p_rel.shape();
    if (qs.size() != 3 || ps_.size() != 3) {
        throw DimError("apply_rel_pos: expected [h,N,D] and [h,D,L], got " + shape_str(qs) + " and " + shape_str(ps_));
    }
    if (qs[0] != ps_[0] || qs[2] != ps_[1]) {
        throw DimError("apply_rel_pos: head layout mismatch " + shape_str(qs) + " vs " + shape_str(ps_));
    }
    if (qs[1] > ps_[2]) {
        throw ArgError("apply_rel_pos: sequence length " + std::to_string(qs[1]) + " exceeds max_len " +
                       std::to_string(ps_[2]));
    }
    Tape& tape = same_tape(q3, p_rel, "apply_rel_pos");
    const Tensor& qv = q3.val();
    const Tensor& pv = p_rel.val();
    const std::size_t h = qs[0], n = qs[1], d = qs[2];
    Tensor out = qv;
    for (std::size_t hh = 0; hh < h; ++hh)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) out(hh, i, j) += pv(hh, j, i);
    return tape.node(std::move(out), {q3.id, p_rel.id},
                     [h, n, d](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                         if (tp.wants_grad(ps[0])) {
                             Tensor& acc = gb.acc(ps[0], tp.value(ps[0]).shape());
                             for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
                         }
                         if (tp.wants_grad(ps[1])) {
                             Tensor& acc = gb.acc(ps[1], tp.value(ps[1]).shape());
                             for (std::size_t hh = 0; hh < h; ++hh)
                                 for (std::size_t i = 0; i < n; ++i)
                                     for (std::size_t j = 0; j < d; ++j) acc(hh, j, i) += g(hh, i, j);
                         }
                     });
}

std::size_t make_registers(ParamStore& store, const std::string& prefix, std::size_t r, std::size_t model_dim,
                           Rng& rng, double init_std) {
    return store.add(prefix + ".registers", rng.normal_tensor({r, model_dim}, 0.0, init_std));
}

}  // namespace kvl
