#include <algorithm>
#include <cmath>
#include <utility>

#include "kvl/ops.hpp"

namespace kvl {

namespace {

Tape& tape_of(Var a, const char* op) {
    if (a.tape == nullptr) throw ArgError(std::string(op) + ": var not bound to a tape");
    return *a.tape;
}

}  // namespace

Var add(Var a, Var b) {
    Tape& t = same_tape(a, b, "add");
    return t.node(add(a.val(), b.val()), {a.id, b.id},
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      for (std::size_t side = 0; side < 2; ++side) {
                          if (!tp.wants_grad(ps[side])) continue;
                          Tensor& acc = gb.acc(ps[side], tp.value(ps[side]).shape());
                          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
                      }
                  });
}

Var sub(Var a, Var b) {
    Tape& t = same_tape(a, b, "sub");
    return t.node(sub(a.val(), b.val()), {a.id, b.id},
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      if (tp.wants_grad(ps[0])) {
                          Tensor& acc = gb.acc(ps[0], tp.value(ps[0]).shape());
                          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
                      }
                      if (tp.wants_grad(ps[1])) {
                          Tensor& acc = gb.acc(ps[1], tp.value(ps[1]).shape());
                          for (std::size_t i = 0; i < g.size(); ++i) acc[i] -= g[i];
                      }
                  });
}

Var mul(Var a, Var b) {
    Tape& t = same_tape(a, b, "mul");
    return t.node(mul(a.val(), b.val()), {a.id, b.id},
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& av = tp.value(ps[0]);
                      const Tensor& bv = tp.value(ps[1]);
                      if (tp.wants_grad(ps[0])) {
                          Tensor& acc = gb.acc(ps[0], av.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * bv[i];
                      }
                      if (tp.wants_grad(ps[1])) {
                          Tensor& acc = gb.acc(ps[1], bv.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * av[i];
                      }
                  });
}

Var scale(Var a, double c) {
    Tape& t = tape_of(a, "scale");
    return t.node(scale(a.val(), c), {a.id},
                  [c](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      Tensor& acc = gb.acc(ps[0], tp.value(ps[0]).shape());
                      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += c * g[i];
                  });
}

Var add_scalar(Var a, double c) {
    Tape& t = tape_of(a, "add_scalar");
    return t.node(add_scalar(a.val(), c), {a.id},
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      Tensor& acc = gb.acc(ps[0], tp.value(ps[0]).shape());
                      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
                  });
}

Var sum_all(Var a) {
    Tape& t = tape_of(a, "sum_all");
    return t.node(sum_all(a.val()), {a.id},
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const double gv = g[0];
                      Tensor& acc = gb.acc(ps[0], tp.value(ps[0]).shape());
                      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gv;
                  });
}

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b, "matmul");
    return t.node(matmul(a.val(), b.val()), {a.id, b.id},
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& av = tp.value(ps[0]);
                      const Tensor& bv = tp.value(ps[1]);
                      if (tp.wants_grad(ps[0])) {
                          Tensor ga = matmul(g, transpose2d(bv));
                          Tensor& acc = gb.acc(ps[0], av.shape());
                          for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += ga[i];
                      }
                      if (tp.wants_grad(ps[1])) {
                          Tensor gbm = matmul(transpose2d(av), g);
                          Tensor& acc = gb.acc(ps[1], bv.shape());
                          for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gbm[i];
                      }
                  });
}

Var transpose2d(Var a) {
    Tape& t = tape_of(a, "transpose2d");
    return t.node(transpose2d(a.val()), {a.id},
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      Tensor gt = transpose2d(g);
                      Tensor& acc = gb.acc(ps[0], tp.value(ps[0]).shape());
                      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gt[i];
                  });
}

Var softmax(Var x, std::size_t axis) {
    Tape& t = tape_of(x, "softmax");
    auto out = std::make_shared<const Tensor>(softmax(x.val(), axis));
    return t.node(out, {x.id},
                  [out, axis](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& s = *out;
                      const auto& sh = s.shape();
                      std::size_t outer = 1, inner = 1;
                      for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
                      for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
                      const std::size_t len = sh[axis];
                      Tensor& acc = gb.acc(ps[0], tp.value(ps[0]).shape());
                      for (std::size_t o = 0; o < outer; ++o) {
                          for (std::size_t in = 0; in < inner; ++in) {
                              const std::size_t base = o * len * inner + in;
                              double dot = 0.0;
                              for (std::size_t k = 0; k < len; ++k) {
                                  const std::size_t ix = base + k * inner;
                                  dot += g[ix] * s[ix];
                              }
                              for (std::size_t k = 0; k < len; ++k) {
                                  const std::size_t ix = base + k * inner;
                                  acc[ix] += s[ix] * (g[ix] - dot);
                              }
                          }
                      }
                  });
}

Var conv2d(Var x, Var w, std::size_t stride, std::size_t padding) {
    Tape& t = same_tape(x, w, "conv2d");
    return t.node(
        conv2d(x.val(), w.val(), stride, padding), {x.id, w.id},
        [stride, padding](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
            const Tensor& xv = tp.value(ps[0]);
            const Tensor& wv = tp.value(ps[1]);
            const bool wx = tp.wants_grad(ps[0]);
            const bool ww = tp.wants_grad(ps[1]);
            Tensor* gx = wx ? &gb.acc(ps[0], xv.shape()) : nullptr;
            Tensor* gw = ww ? &gb.acc(ps[1], wv.shape()) : nullptr;
            const std::size_t ci = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
            const std::size_t co = wv.dim(0), k = wv.dim(2);
            const std::size_t oh = g.dim(1), ow = g.dim(2);
            for (std::size_t c = 0; c < co; ++c) {
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const double gv = g(c, oy, ox);
                        if (gv == 0.0) continue;
                        for (std::size_t ic = 0; ic < ci; ++ic) {
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                                    if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                                    const auto uy = static_cast<std::size_t>(iy);
                                    const auto ux = static_cast<std::size_t>(ix);
                                    if (gx) (*gx)(ic, uy, ux) += gv * wv(c, ic, ky, kx);
                                    if (gw) (*gw)(c, ic, ky, kx) += gv * xv(ic, uy, ux);
                                }
                            }
                        }
                    }
                }
            }
        });
}

Var bias_add_channels(Var x, Var b) {
    Tape& t = same_tape(x, b, "bias_add_channels");
    return t.node(bias_add_channels(x.val(), b.val()), {x.id, b.id},
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& xv = tp.value(ps[0]);
                      const std::size_t plane = xv.dim(1) * xv.dim(2);
                      if (tp.wants_grad(ps[0])) {
                          Tensor& acc = gb.acc(ps[0], xv.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
                      }
                      if (tp.wants_grad(ps[1])) {
                          Tensor& acc = gb.acc(ps[1], tp.value(ps[1]).shape());
                          for (std::size_t c = 0; c < xv.dim(0); ++c) {
                              double s = 0.0;
                              const double* gp = g.data() + c * plane;
                              for (std::size_t i = 0; i < plane; ++i) s += gp[i];
                              acc[c] += s;
                          }
                      }
                  });
}

Var deconv2d(Var x, Var w, std::size_t stride) {
    Tape& t = same_tape(x, w, "deconv2d");
    return t.node(deconv2d(x.val(), w.val(), stride), {x.id, w.id},
                  [stride](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& xv = tp.value(ps[0]);
                      const Tensor& wv = tp.value(ps[1]);
                      Tensor* gx = tp.wants_grad(ps[0]) ? &gb.acc(ps[0], xv.shape()) : nullptr;
                      Tensor* gw = tp.wants_grad(ps[1]) ? &gb.acc(ps[1], wv.shape()) : nullptr;
                      const std::size_t ci = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
                      const std::size_t co = wv.dim(1), k = wv.dim(2);
                      for (std::size_t ic = 0; ic < ci; ++ic) {
                          for (std::size_t i = 0; i < h; ++i) {
                              for (std::size_t j = 0; j < wd; ++j) {
                                  double acc = 0.0;
                                  for (std::size_t c = 0; c < co; ++c) {
                                      for (std::size_t dy = 0; dy < k; ++dy) {
                                          for (std::size_t dx = 0; dx < k; ++dx) {
                                              const double gv = g(c, i * stride + dy, j * stride + dx);
                                              acc += gv * wv(ic, c, dy, dx);
                                              if (gw) (*gw)(ic, c, dy, dx) += gv * xv(ic, i, j);
                                          }
                                      }
                                  }
                                  if (gx) (*gx)(ic, i, j) += acc;
                              }
                          }
                      }
                  });
}

Var adaptive_avg_pool2d(Var x, std::size_t s) {
    Tape& t = tape_of(x, "adaptive_avg_pool2d");
    return t.node(adaptive_avg_pool2d(x.val(), s), {x.id},
                  [s](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& xv = tp.value(ps[0]);
                      const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
                      Tensor& acc = gb.acc(ps[0], xv.shape());
                      for (std::size_t ch = 0; ch < c; ++ch) {
                          for (std::size_t i = 0; i < s; ++i) {
                              const std::size_t y0 = i * h / s, y1 = ((i + 1) * h + s - 1) / s;
                              for (std::size_t j = 0; j < s; ++j) {
                                  const std::size_t x0 = j * w / s, x1 = ((j + 1) * w + s - 1) / s;
                                  const double gv = g(ch, i, j) / static_cast<double>((y1 - y0) * (x1 - x0));
                                  for (std::size_t y = y0; y < y1; ++y)
                                      for (std::size_t xx = x0; xx < x1; ++xx) acc(ch, y, xx) += gv;
                              }
                          }
                      }
                  });
}

Var nearest_resize(Var x, std::size_t oh, std::size_t ow) {
    Tape& t = tape_of(x, "nearest_resize");
    return t.node(nearest_resize(x.val(), oh, ow), {x.id},
                  [oh, ow](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& xv = tp.value(ps[0]);
                      const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
                      Tensor& acc = gb.acc(ps[0], xv.shape());
                      for (std::size_t ch = 0; ch < c; ++ch)
                          for (std::size_t i = 0; i < oh; ++i)
                              for (std::size_t j = 0; j < ow; ++j) acc(ch, i * h / oh, j * w / ow) += g(ch, i, j);
                  });
}

Var silu(Var x) {
    Tape& t = tape_of(x, "silu");
    return t.node(silu(x.val()), {x.id},
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& xv = tp.value(ps[0]);
                      Tensor& acc = gb.acc(ps[0], xv.shape());
                      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * silu_deriv(xv[i]);
                  });
}

Var sigmoid(Var x) {
    Tape& t = tape_of(x, "sigmoid");
    auto out = std::make_shared<const Tensor>(sigmoid(x.val()));
    return t.node(out, {x.id},
                  [out](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      Tensor& acc = gb.acc(ps[0], tp.value(ps[0]).shape());
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          const double s = (*out)[i];
                          acc[i] += g[i] * s * (1.0 - s);
                      }
                  });
}

Var relu(Var x) {
    Tape& t = tape_of(x, "relu");
    return t.node(relu(x.val()), {x.id},
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& xv = tp.value(ps[0]);
                      Tensor& acc = gb.acc(ps[0], xv.shape());
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          if (xv[i] > 0.0) acc[i] += g[i];
                      }
                  });
}

Var concat_channels(const std::vector<Var>& parts) {
    if (parts.empty()) throw ArgError("concat_channels: no inputs");
    Tape& t = tape_of(parts[0], "concat_channels");
    std::vector<const Tensor*> vals;
    std::vector<std::size_t> ids;
    for (const Var& p : parts) {
        same_tape(parts[0], p, "concat_channels");
        vals.push_back(&p.val());
        ids.push_back(p.id);
    }
    return t.node(concat_channels(vals), ids,
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      std::size_t off = 0;
                      for (std::size_t pi = 0; pi < ps.size(); ++pi) {
                          const Tensor& pv = tp.value(ps[pi]);
                          if (tp.wants_grad(ps[pi])) {
                              Tensor& acc = gb.acc(ps[pi], pv.shape());
                              for (std::size_t i = 0; i < pv.size(); ++i) acc[i] += g[off + i];
                          }
                          off += pv.size();
                      }
                  });
}

Var channel_slice(Var x, std::size_t c0, std::size_t c1) {
    Tape& t = tape_of(x, "channel_slice");
    return t.node(channel_slice(x.val(), c0, c1), {x.id},
                  [c0](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& xv = tp.value(ps[0]);
                      const std::size_t plane = xv.dim(1) * xv.dim(2);
                      Tensor& acc = gb.acc(ps[0], xv.shape());
                      double* dst = acc.data() + c0 * plane;
                      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                  });
}

Var concat_rows(Var a, Var b) {
    Tape& t = same_tape(a, b, "concat_rows");
    return t.node(concat_rows(a.val(), b.val()), {a.id, b.id},
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& av = tp.value(ps[0]);
                      if (tp.wants_grad(ps[0])) {
                          Tensor& acc = gb.acc(ps[0], av.shape());
                          for (std::size_t i = 0; i < av.size(); ++i) acc[i] += g[i];
                      }
                      if (tp.wants_grad(ps[1])) {
                          const Tensor& bv = tp.value(ps[1]);
                          Tensor& acc = gb.acc(ps[1], bv.shape());
                          for (std::size_t i = 0; i < bv.size(); ++i) acc[i] += g[av.size() + i];
                      }
                  });
}

Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
    Tape& t = tape_of(a, "slice_rows");
    return t.node(slice_rows(a.val(), r0, r1), {a.id},
                  [r0](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& av = tp.value(ps[0]);
                      Tensor& acc = gb.acc(ps[0], av.shape());
                      double* dst = acc.data() + r0 * av.dim(1);
                      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                  });
}

Var gather_rows(Var a, std::vector<std::size_t> idx) {
    Tape& t = tape_of(a, "gather_rows");
    return t.node(gather_rows(a.val(), idx), {a.id},
                  [idx = std::move(idx)](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps,
                                         GradBuf& gb) {
                      const Tensor& av = tp.value(ps[0]);
                      const std::size_t d = av.dim(1);
                      Tensor& acc = gb.acc(ps[0], av.shape());
                      for (std::size_t i = 0; i < idx.size(); ++i)
                          for (std::size_t j = 0; j < d; ++j) acc(idx[i], j) += g(i, j);
                  });
}

Var segment_mean_rows(Var a, std::size_t m) {
    Tape& t = tape_of(a, "segment_mean_rows");
    return t.node(segment_mean_rows(a.val(), m), {a.id},
                  [m](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& av = tp.value(ps[0]);
                      const std::size_t n = av.dim(0), d = av.dim(1);
                      Tensor& acc = gb.acc(ps[0], av.shape());
                      for (std::size_t i = 0; i < m; ++i) {
                          const std::size_t r0 = i * n / m, r1 = (i + 1) * n / m;
                          const double inv = 1.0 / static_cast<double>(r1 - r0);
                          for (std::size_t r = r0; r < r1; ++r)
                              for (std::size_t c = 0; c < d; ++c) acc(r, c) += g(i, c) * inv;
                      }
                  });
}

Var split_heads(Var x, std::size_t heads) {
    Tape& t = tape_of(x, "split_heads");
    return t.node(split_heads(x.val(), heads), {x.id},
                  [heads](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& xv = tp.value(ps[0]);
                      const std::size_t n = xv.dim(0), d = xv.dim(1) / heads;
                      Tensor& acc = gb.acc(ps[0], xv.shape());
                      for (std::size_t h = 0; h < heads; ++h)
                          for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < d; ++j) acc(i, h * d + j) += g(h, i, j);
                  });
}

Var head_of(Var x3, std::size_t head) {
    Tape& t = tape_of(x3, "head_of");
    return t.node(head_of(x3.val(), head), {x3.id},
                  [head](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& xv = tp.value(ps[0]);
                      const std::size_t nd = xv.dim(1) * xv.dim(2);
                      Tensor& acc = gb.acc(ps[0], xv.shape());
                      double* dst = acc.data() + head * nd;
                      for (std::size_t i = 0; i < nd; ++i) dst[i] += g[i];
                  });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ArgError("concat_cols: no inputs");
    Tape& t = tape_of(parts[0], "concat_cols");
    std::vector<const Tensor*> vals;
    std::vector<std::size_t> ids;
    for (const Var& p : parts) {
        same_tape(parts[0], p, "concat_cols");
        vals.push_back(&p.val());
        ids.push_back(p.id);
    }
    return t.node(concat_cols(vals), ids,
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      std::size_t off = 0;
                      const std::size_t n = g.dim(0);
                      for (std::size_t pi = 0; pi < ps.size(); ++pi) {
                          const Tensor& pv = tp.value(ps[pi]);
                          const std::size_t d = pv.dim(1);
                          if (tp.wants_grad(ps[pi])) {
                              Tensor& acc = gb.acc(ps[pi], pv.shape());
                              for (std::size_t i = 0; i < n; ++i)
                                  for (std::size_t j = 0; j < d; ++j) acc(i, j) += g(i, off + j);
                          }
                          off += d;
                      }
                  });
}

Var chw_to_lc(Var x) {
    Tape& t = tape_of(x, "chw_to_lc");
    return t.node(chw_to_lc(x.val()), {x.id},
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& xv = tp.value(ps[0]);
                      const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
                      Tensor& acc = gb.acc(ps[0], xv.shape());
                      for (std::size_t ch = 0; ch < c; ++ch)
                          for (std::size_t i = 0; i < h; ++i)
                              for (std::size_t j = 0; j < w; ++j) acc(ch, i, j) += g(i * w + j, ch);
                  });
}

Var lc_to_chw(Var x, std::size_t h, std::size_t w) {
    Tape& t = tape_of(x, "lc_to_chw");
    return t.node(lc_to_chw(x.val(), h, w), {x.id},
                  [h, w](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& xv = tp.value(ps[0]);
                      const std::size_t c = xv.dim(1);
                      Tensor& acc = gb.acc(ps[0], xv.shape());
                      for (std::size_t ch = 0; ch < c; ++ch)
                          for (std::size_t i = 0; i < h; ++i)
                              for (std::size_t j = 0; j < w; ++j) acc(i * w + j, ch) += g(ch, i, j);
                  });
}

Var reshape(Var x, Shape shape) {
    Tape& t = tape_of(x, "reshape");
    return t.node(x.val().reshaped(std::move(shape)), {x.id},
                  [](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      Tensor& acc = gb.acc(ps[0], tp.value(ps[0]).shape());
                      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
                  });
}

Var bce_with_logits_sum(Var logits, Tensor targets, Tensor weights) {
    Tape& t = tape_of(logits, "bce_with_logits_sum");
    const Tensor& z = logits.val();
    check_same_shape(z, targets, "bce_with_logits_sum");
    check_same_shape(z, weights, "bce_with_logits_sum");
    double loss = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        // max(z,0) - z*t + log(1 + exp(-|z|)) is the stable form.
        loss += weights[i] * (std::max(z[i], 0.0) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i]))));
    }
    auto tgt = std::make_shared<const Tensor>(std::move(targets));
    auto wts = std::make_shared<const Tensor>(std::move(weights));
    return t.node(Tensor::scalar(loss), {logits.id},
                  [tgt, wts](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& zv = tp.value(ps[0]);
                      const double gv = g[0];
                      Tensor& acc = gb.acc(ps[0], zv.shape());
                      for (std::size_t i = 0; i < zv.size(); ++i) {
                          acc[i] += gv * (*wts)[i] * (sigmoid_scalar(zv[i]) - (*tgt)[i]);
                      }
                  });
}

Var smooth_l1_sum(Var pred, Tensor target, Tensor mask) {
    Tape& t = tape_of(pred, "smooth_l1_sum");
    const Tensor& p = pred.val();
    check_same_shape(p, target, "smooth_l1_sum");
    check_same_shape(p, mask, "smooth_l1_sum");
    double loss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - target[i];
        const double ad = std::abs(d);
        loss += mask[i] * (ad < 1.0 ? 0.5 * d * d : ad - 0.5);
    }
    auto tgt = std::make_shared<const Tensor>(std::move(target));
    auto msk = std::make_shared<const Tensor>(std::move(mask));
    return t.node(Tensor::scalar(loss), {pred.id},
                  [tgt, msk](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps, GradBuf& gb) {
                      const Tensor& pv = tp.value(ps[0]);
                      const double gv = g[0];
                      Tensor& acc = gb.acc(ps[0], pv.shape());
                      for (std::size_t i = 0; i < pv.size(); ++i) {
                          const double d = pv[i] - (*tgt)[i];
                          acc[i] += gv * (*msk)[i] * std::clamp(d, -1.0, 1.0);
                      }
                  });
}

Var softmax_ce_sum(Var logits, std::vector<int> labels, Tensor mask) {
    Tape& t = tape_of(logits, "softmax_ce_sum");
    const Tensor& z = logits.val();
    if (z.rank() != 3) throw DimError("softmax_ce_sum: logits must be [nc,H,W], got " + shape_str(z.shape()));
    const std::size_t nc = z.dim(0), cells = z.dim(1) * z.dim(2);
    if (labels.size() != cells || mask.size() != cells) {
        throw DimError("softmax_ce_sum: labels/mask size must match cell count " + std::to_string(cells));
    }
    auto probs = std::make_shared<Tensor>(z.shape());
    double loss = 0.0;
    for (std::size_t cell = 0; cell < cells; ++cell) {
        double mx = z[cell];
        for (std::size_t c = 1; c < nc; ++c) mx = std::max(mx, z[c * cells + cell]);
        double sum = 0.0;
        for (std::size_t c = 0; c < nc; ++c) {
            const double e = std::exp(z[c * cells + cell] - mx);
            (*probs)[c * cells + cell] = e;
            sum += e;
        }
        for (std::size_t c = 0; c < nc; ++c) (*probs)[c * cells + cell] /= sum;
        if (mask[cell] != 0.0) {
            const int lab = labels[cell];
            if (lab < 0 || static_cast<std::size_t>(lab) >= nc) {
                throw ArgError("softmax_ce_sum: label out of range");
            }
            loss -= mask[cell] * std::log(std::max((*probs)[static_cast<std::size_t>(lab) * cells + cell], 1e-300));
        }
    }
    auto msk = std::make_shared<const Tensor>(std::move(mask));
    auto labs = std::make_shared<const std::vector<int>>(std::move(labels));
    return t.node(Tensor::scalar(loss), {logits.id},
                  [probs, msk, labs, nc, cells](const Tensor& g, const Tape& tp, const std::vector<std::size_t>& ps,
                                                GradBuf& gb) {
                      const double gv = g[0];
                      Tensor& acc = gb.acc(ps[0], tp.value(ps[0]).shape());
                      for (std::size_t cell = 0; cell < cells; ++cell) {
                          const double m = (*msk)[cell];
                          if (m == 0.0) continue;
                          const auto lab = static_cast<std::size_t>((*labs)[cell]);
                          for (std::size_t c = 0; c < nc; ++c) {
                              const double ind = (c == lab) ? 1.0 : 0.0;
                              acc[c * cells + cell] += gv * m * ((*probs)[c * cells + cell] - ind);
                          }
                      }
                  });
}

}  // namespace kvl
