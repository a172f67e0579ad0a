#include <algorithm>
#include <cmath>
#include <string>

#include "kvl/ops.hpp"

namespace kvl {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimError(std::string(op) + ": expected rank-" + std::to_string(rank) + " tensor, got " +
                       shape_str(t.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw DimError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    const double* ad = a.data();
    const double* bd = b.data();
    double* od = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = ad + i * k;
        double* orow = od + i * n;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = arow[t];
            const double* brow = bd + t * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor transpose2d(const Tensor& a) {
    require_rank(a, 2, "transpose2d");
    Tensor out({a.dim(1), a.dim(0)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < a.dim(1); ++j) out(j, i) = a(i, j);
    return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw ArgError("softmax: axis " + std::to_string(axis) + " out of range for shape " + shape_str(x.shape()));
    }
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];

    Tensor out(s);
    const double* xd = x.data();
    double* od = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = xd[base];
            for (std::size_t t = 1; t < len; ++t) mx = std::max(mx, xd[base + t * inner]);
            double sum = 0.0;
            for (std::size_t t = 0; t < len; ++t) {
                double e = std::exp(xd[base + t * inner] - mx);
                od[base + t * inner] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (std::size_t t = 0; t < len; ++t) od[base + t * inner] *= inv;
        }
    }
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
    require_rank(x, 3, "conv2d");
    require_rank(w, 4, "conv2d");
    if (stride == 0) throw ArgError("conv2d: stride must be >= 1");
    if (w.dim(2) != w.dim(3)) throw DimError("conv2d: kernel must be square, got " + shape_str(w.shape()));
    if (w.dim(1) != x.dim(0)) {
        throw DimError("conv2d: channel mismatch, input " + shape_str(x.shape()) + " vs kernel " +
                       shape_str(w.shape()));
    }
    const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::size_t co = w.dim(0), k = w.dim(2);
    if (k > h + 2 * padding || k > wd + 2 * padding) {
        throw DimError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " + shape_str(x.shape()) +
                       " (padding " + std::to_string(padding) + ")");
    }
    const std::size_t oh = (h + 2 * padding - k) / stride + 1;
    const std::size_t ow = (wd + 2 * padding - k) / stride + 1;

    Tensor out({co, oh, ow});
    for (std::size_t c = 0; c < co; ++c) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (std::size_t ic = 0; ic < ci; ++ic) {
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                            if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                            acc += x(ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) * w(c, ic, ky, kx);
                        }
                    }
                }
                out(c, oy, ox) = acc;
            }
        }
    }
    return out;
}

Tensor bias_add_channels(const Tensor& x, const Tensor& b) {
    require_rank(x, 3, "bias_add_channels");
    require_rank(b, 1, "bias_add_channels");
    if (b.dim(0) != x.dim(0)) {
        throw DimError("bias_add_channels: " + shape_str(x.shape()) + " vs bias " + shape_str(b.shape()));
    }
    Tensor out = x;
    const std::size_t plane = x.dim(1) * x.dim(2);
    for (std::size_t c = 0; c < x.dim(0); ++c) {
        double* p = out.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += b[c];
    }
    return out;
}

Tensor deconv2d(const Tensor& x, const Tensor& w, std::size_t stride) {
    require_rank(x, 3, "deconv2d");
    require_rank(w, 4, "deconv2d");
    if (stride < 1) throw ArgError("deconv2d: stride must be >= 1");
    if (w.dim(2) != w.dim(3) || w.dim(2) != stride) {
        throw ConfigError("deconv2d: kernel " + shape_str(w.shape()) + " with stride " + std::to_string(stride) +
                          " does not yield an exact stride-times upsample (kernel size must equal stride)");
    }
    if (w.dim(0) != x.dim(0)) {
        throw DimError("deconv2d: channel mismatch, input " + shape_str(x.shape()) + " vs kernel " +
                       shape_str(w.shape()));
    }
    const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::size_t co = w.dim(1), k = w.dim(2);
    Tensor out({co, h * stride, wd * stride});
    for (std::size_t ic = 0; ic < ci; ++ic) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < wd; ++j) {
                const double v = x(ic, i, j);
                for (std::size_t c = 0; c < co; ++c) {
                    for (std::size_t dy = 0; dy < k; ++dy) {
                        for (std::size_t dx = 0; dx < k; ++dx) {
                            out(c, i * stride + dy, j * stride + dx) += v * w(ic, c, dy, dx);
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t s) {
    require_rank(x, 3, "adaptive_avg_pool2d");
    if (s == 0) throw ArgError("adaptive_avg_pool2d: output size must be >= 1");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out({c, s, s});
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < s; ++i) {
            const std::size_t y0 = i * h / s;
            const std::size_t y1 = ((i + 1) * h + s - 1) / s;
            for (std::size_t j = 0; j < s; ++j) {
                const std::size_t x0 = j * w / s;
                const std::size_t x1 = ((j + 1) * w + s - 1) / s;
                double acc = 0.0;
                for (std::size_t y = y0; y < y1; ++y)
                    for (std::size_t xx = x0; xx < x1; ++xx) acc += x(ch, y, xx);
                out(ch, i, j) = acc / static_cast<double>((y1 - y0) * (x1 - x0));
            }
        }
    }
    return out;
}

Tensor nearest_resize(const Tensor& x, std::size_t oh, std::size_t ow) {
    require_rank(x, 3, "nearest_resize");
    if (oh == 0 || ow == 0) throw ArgError("nearest_resize: output size must be >= 1");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out({c, oh, ow});
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < oh; ++i) {
            const std::size_t sy = i * h / oh;
            for (std::size_t j = 0; j < ow; ++j) {
                out(ch, i, j) = x(ch, sy, j * w / ow);
            }
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return out;
}

Tensor add_scalar(const Tensor& a, double c) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
    return out;
}

Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
    return Tensor::scalar(acc);
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double silu_scalar(double x) { return x * sigmoid_scalar(x); }

double silu_deriv(double x) {
    const double s = sigmoid_scalar(x);
    return s * (1.0 + x * (1.0 - s));
}

Tensor silu(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = silu_scalar(out[i]);
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(out[i]);
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return out;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) throw ArgError("concat_channels: no inputs");
    const std::size_t h = parts[0]->dim(1), w = parts[0]->dim(2);
    std::size_t ctot = 0;
    for (const Tensor* p : parts) {
        require_rank(*p, 3, "concat_channels");
        if (p->dim(1) != h || p->dim(2) != w) {
            throw DimError("concat_channels: spatial mismatch " + shape_str(parts[0]->shape()) + " vs " +
                           shape_str(p->shape()));
        }
        ctot += p->dim(0);
    }
    Tensor out({ctot, h, w});
    double* od = out.data();
    for (const Tensor* p : parts) {
        std::copy(p->data(), p->data() + p->size(), od);
        od += p->size();
    }
    return out;
}

Tensor channel_slice(const Tensor& x, std::size_t c0, std::size_t c1) {
    require_rank(x, 3, "channel_slice");
    if (c0 >= c1 || c1 > x.dim(0)) {
        throw ArgError("channel_slice: invalid range [" + std::to_string(c0) + "," + std::to_string(c1) +
                       ") for shape " + shape_str(x.shape()));
    }
    const std::size_t plane = x.dim(1) * x.dim(2);
    Tensor out({c1 - c0, x.dim(1), x.dim(2)});
    std::copy(x.data() + c0 * plane, x.data() + c1 * plane, out.data());
    return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "concat_rows");
    require_rank(b, 2, "concat_rows");
    if (a.dim(1) != b.dim(1)) {
        throw DimError("concat_rows: width mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out({a.dim(0) + b.dim(0), a.dim(1)});
    std::copy(a.data(), a.data() + a.size(), out.data());
    std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
    return out;
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    require_rank(a, 2, "slice_rows");
    if (r0 >= r1 || r1 > a.dim(0)) {
        throw ArgError("slice_rows: invalid range [" + std::to_string(r0) + "," + std::to_string(r1) + ") for shape " +
                       shape_str(a.shape()));
    }
    Tensor out({r1 - r0, a.dim(1)});
    std::copy(a.data() + r0 * a.dim(1), a.data() + r1 * a.dim(1), out.data());
    return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
    require_rank(a, 2, "gather_rows");
    Tensor out({idx.size(), a.dim(1)});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= a.dim(0)) throw ArgError("gather_rows: index " + std::to_string(idx[i]) + " out of range");
        std::copy(a.data() + idx[i] * a.dim(1), a.data() + (idx[i] + 1) * a.dim(1), out.data() + i * a.dim(1));
    }
    return out;
}

Tensor segment_mean_rows(const Tensor& a, std::size_t m) {
    require_rank(a, 2, "segment_mean_rows");
    const std::size_t n = a.dim(0), d = a.dim(1);
    if (m == 0 || m > n) {
        throw ArgError("segment_mean_rows: m=" + std::to_string(m) + " must be in [1, N=" + std::to_string(n) + "]");
    }
    Tensor out({m, d});
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t r0 = i * n / m, r1 = (i + 1) * n / m;
        const double inv = 1.0 / static_cast<double>(r1 - r0);
        for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t c = 0; c < d; ++c) out(i, c) += a(r, c);
        for (std::size_t c = 0; c < d; ++c) out(i, c) *= inv;
    }
    return out;
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
    require_rank(x, 2, "split_heads");
    if (heads == 0 || x.dim(1) % heads != 0) {
        throw DimError("split_heads: width " + std::to_string(x.dim(1)) + " not divisible by " +
                       std::to_string(heads) + " heads");
    }
    const std::size_t n = x.dim(0), d = x.dim(1) / heads;
    Tensor out({heads, n, d});
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) out(h, i, j) = x(i, h * d + j);
    return out;
}

Tensor head_of(const Tensor& x3, std::size_t head) {
    require_rank(x3, 3, "head_of");
    if (head >= x3.dim(0)) throw ArgError("head_of: head index out of range");
    const std::size_t n = x3.dim(1), d = x3.dim(2);
    Tensor out({n, d});
    std::copy(x3.data() + head * n * d, x3.data() + (head + 1) * n * d, out.data());
    return out;
}

Tensor concat_cols(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) throw ArgError("concat_cols: no inputs");
    const std::size_t n = parts[0]->dim(0);
    std::size_t dtot = 0;
    for (const Tensor* p : parts) {
        require_rank(*p, 2, "concat_cols");
        if (p->dim(0) != n) {
            throw DimError("concat_cols: row mismatch " + shape_str(parts[0]->shape()) + " vs " +
                           shape_str(p->shape()));
        }
        dtot += p->dim(1);
    }
    Tensor out({n, dtot});
    std::size_t off = 0;
    for (const Tensor* p : parts) {
        const std::size_t d = p->dim(1);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) out(i, off + j) = (*p)(i, j);
        off += d;
    }
    return out;
}

Tensor chw_to_lc(const Tensor& x) {
    require_rank(x, 3, "chw_to_lc");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out({h * w, c});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) out(i * w + j, ch) = x(ch, i, j);
    return out;
}

Tensor lc_to_chw(const Tensor& x, std::size_t h, std::size_t w) {
    require_rank(x, 2, "lc_to_chw");
    if (x.dim(0) != h * w) {
        throw DimError("lc_to_chw: " + std::to_string(h) + "x" + std::to_string(w) + " does not match rows of " +
                       shape_str(x.shape()));
    }
    const std::size_t c = x.dim(1);
    Tensor out({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) out(ch, i, j) = x(i * w + j, ch);
    return out;
}

double frobenius_norm(const Tensor& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * a[i];
    return std::sqrt(acc);
}

double rel_frobenius_error(const Tensor& approx, const Tensor& exact) {
    check_same_shape(approx, exact, "rel_frobenius_error");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < approx.size(); ++i) {
        const double d = approx[i] - exact[i];
        num += d * d;
        den += exact[i] * exact[i];
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace kvl
