#include "kvl/neck.hpp"

#include <cmath>

namespace kvl {

void check_pyramid_shapes(const Shape& f1, const Shape& f2, const Shape& f3) {
    if (f1.size() != 3 || f2.size() != 3 || f3.size() != 3) {
        throw DimError("pyramid levels must be [C,H,W]: " + shape_str(f1) + ", " + shape_str(f2) + ", " +
                       shape_str(f3));
    }
    if (f1[1] != 2 * f2[1] || f1[2] != 2 * f2[2] || f2[1] != 2 * f3[1] || f2[2] != 2 * f3[2]) {
        throw DimError("pyramid spatial sizes must halve per level: " + shape_str(f1) + ", " + shape_str(f2) + ", " +
                       shape_str(f3));
    }
}

Var Conv1x1::forward(Tape& tape, const ParamStore& store, Var x) const {
    Var y = conv2d(x, store.leaf(tape, w), 1, 0);
    if (with_bias) y = bias_add_channels(y, store.leaf(tape, b));
    return y;
}

Conv1x1 make_conv1x1(ParamStore& store, const std::string& prefix, std::size_t c_in, std::size_t c_out, Rng& rng,
                     bool with_bias) {
    Conv1x1 c;
    c.c_in = c_in;
    c.c_out = c_out;
    c.with_bias = with_bias;
    const double std = std::sqrt(2.0 / static_cast<double>(c_in));
    c.w = store.add(prefix + ".w", rng.normal_tensor({c_out, c_in, 1, 1}, 0.0, std));
    if (with_bias) c.b = store.add(prefix + ".b", Tensor({c_out}));
    return c;
}

Var ConvLayer::forward(Tape& tape, const ParamStore& store, Var x) const {
    Var y = conv2d(x, store.leaf(tape, w), stride, padding);
    return bias_add_channels(y, store.leaf(tape, b));
}

ConvLayer make_conv(ParamStore& store, const std::string& prefix, std::size_t c_in, std::size_t c_out, std::size_t k,
                    std::size_t stride, std::size_t padding, Rng& rng) {
    ConvLayer c;
    c.c_in = c_in;
    c.c_out = c_out;
    c.k = k;
    c.stride = stride;
    c.padding = padding;
    const double std = std::sqrt(2.0 / static_cast<double>(c_in * k * k));
    c.w = store.add(prefix + ".w", rng.normal_tensor({c_out, c_in, k, k}, 0.0, std));
    c.b = store.add(prefix + ".b", Tensor({c_out}));
    return c;
}

CksppParams make_ckspp(ParamStore& store, const std::string& prefix, std::size_t c_in, std::size_t c_out,
                       const std::vector<std::size_t>& scales, const SplineBasis& basis, const PhiEdgeInit& phi_init,
                       Rng& rng) {
    if (scales.empty()) throw ConfigError("ckspp: at least one pooling scale required");
    for (std::size_t s : scales) {
        if (s == 0) throw ConfigError("ckspp: pooling scales must be >= 1");
    }
    CksppParams p;
    p.scales = scales;
    p.c_in = c_in;
    p.c_out = c_out;
    for (std::size_t s : scales) {
        p.branch_kan.push_back(
            make_kan_conv(store, prefix + ".s" + std::to_string(s), c_out, c_in, 1, 1, basis, rng, phi_init));
    }
    p.fuse = make_conv1x1(store, prefix + ".fuse", scales.size() * c_out + c_in, c_out, rng, false);
    return p;
}

Var ckspp_forward(Tape& tape, const ParamStore& store, const CksppParams& params, Var x) {
    const Shape& xs = x.shape();
    if (xs.size() != 3) throw DimError("ckspp_forward: input must be [C,H,W], got " + shape_str(xs));
    if (xs[0] != params.c_in) {
        throw ConfigError("ckspp_forward: input channels " + std::to_string(xs[0]) + " do not match configured c_in " +
                          std::to_string(params.c_in));
    }
    const std::size_t h = xs[1], w = xs[2];
    std::vector<Var> parts;
    parts.reserve(params.scales.size() + 1);
    for (std::size_t i = 0; i < params.scales.size(); ++i) {
        Var pooled = adaptive_avg_pool2d(x, params.scales[i]);
        Var refined = kan_conv2d(tape, store, params.branch_kan[i], pooled, 1, 0);
        parts.push_back(nearest_resize(refined, h, w));
    }
    parts.push_back(x);
    Var fused = params.fuse.forward(tape, store, concat_channels(parts));
    ensure_finite(fused.val(), "ckspp_forward");
    return fused;
}

EnauParams make_enau(ParamStore& store, const std::string& prefix, std::size_t c_in, std::size_t c_out,
                     std::size_t c_red, const AttentionConfig& att, std::size_t max_h, std::size_t max_w, Rng& rng) {
    if (att.model_dim() != c_red) {
        throw ConfigError("enau: heads*head_dim = " + std::to_string(att.model_dim()) +
                          " must equal reduced channels c_red = " + std::to_string(c_red));
    }
    EnauParams p;
    p.att = att;
    p.c_in = c_in;
    p.c_out = c_out;
    p.c_red = c_red;
    p.reduce = make_conv1x1(store, prefix + ".reduce", c_in, c_red, rng, false);
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(c_red));
    p.wq = store.add(prefix + ".wq", rng.normal_tensor({c_red, att.model_dim()}, 0.0, proj_std));
    p.wk = store.add(prefix + ".wk", rng.normal_tensor({c_red, att.model_dim()}, 0.0, proj_std));
    p.wv = store.add(prefix + ".wv", rng.normal_tensor({c_red, att.model_dim()}, 0.0, proj_std));
    if (att.registers > 0) {
        p.registers = make_registers(store, prefix, att.registers, att.model_dim(), rng);
    }
    const std::size_t max_len = max_h * max_w + att.registers;
    p.rel_pos = make_rel_pos(store, prefix, att.heads, att.head_dim, max_len, rng);
    // Mild upsampler start: roughly uniform 2x2 spread plus noise.
    Tensor up = rng.normal_tensor({c_red, c_out, 2, 2}, 0.0, std::sqrt(0.5 / static_cast<double>(c_red)));
    p.deconv_w = store.add(prefix + ".up", std::move(up));
    return p;
}

Var enau_forward(Tape& tape, const ParamStore& store, const EnauParams& params, Var x) {
    const Shape& xs = x.shape();
    if (xs.size() != 3) throw DimError("enau_forward: input must be [C,H,W], got " + shape_str(xs));
    if (xs[0] != params.c_in) {
        throw ConfigError("enau_forward: input channels " + std::to_string(xs[0]) + " do not match configured c_in " +
                          std::to_string(params.c_in));
    }
    const std::size_t h = xs[1], w = xs[2];
    const std::size_t len = h * w;
    const std::size_t r = params.att.registers;
    if (params.att.landmarks > len + r) {
        throw ConfigError("enau_forward: landmarks m=" + std::to_string(params.att.landmarks) +
                          " exceed sequence length L=" + std::to_string(len) + " plus registers r=" +
                          std::to_string(r));
    }

    Var reduced = params.reduce.forward(tape, store, x);
    Var seq = chw_to_lc(reduced);  // [L, c_red]
    Var q = matmul(seq, store.leaf(tape, params.wq));
    Var k = matmul(seq, store.leaf(tape, params.wk));
    Var v = matmul(seq, store.leaf(tape, params.wv));
    if (r > 0) {
        Var regs = store.leaf(tape, params.registers);
        q = add_registers(q, regs);
        k = add_registers(k, regs);
        v = add_registers(v, regs);
    }
    Var q3 = apply_rel_pos(split_heads(q, params.att.heads), store.leaf(tape, params.rel_pos.p_rel));
    Var k3 = split_heads(k, params.att.heads);
    Var v3 = split_heads(v, params.att.heads);

    std::vector<Var> head_outs;
    head_outs.reserve(params.att.heads);
    for (std::size_t hd = 0; hd < params.att.heads; ++hd) {
        NystromVarOutput att =
            nystrom_attention(head_of(q3, hd), head_of(k3, hd), head_of(v3, hd), params.att);
        head_outs.push_back(att.out);
    }
    Var y2 = strip_registers(concat_cols(head_outs), r);
    Var spatial = lc_to_chw(y2, h, w);
    Var up = deconv2d(spatial, store.leaf(tape, params.deconv_w), 2);
    ensure_finite(up.val(), "enau_forward");
    return up;
}

Tensor fuse_add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw DimError("fuse_add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    return add(a, b);
}

Var fuse_add(Var a, Var b) {
    if (a.shape() != b.shape()) {
        throw DimError("fuse_add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    return add(a, b);
}

const char* upsample_mode_name(UpsampleMode mode) { return mode == UpsampleMode::Enau ? "enau" : "nearest"; }

UpsampleMode upsample_mode_from_name(const std::string& name) {
    if (name == "enau") return UpsampleMode::Enau;
    if (name == "nearest") return UpsampleMode::Nearest;
    throw ConfigError("unknown upsample mode '" + name + "' (expected enau or nearest)");
}

NeckParams make_neck(ParamStore& store, const std::string& prefix, std::size_t c_in1, std::size_t c_in2,
                     std::size_t c_in3, std::size_t base_h, std::size_t base_w, const NeckConfig& cfg, Rng& rng) {
    if (base_h % 4 != 0 || base_w % 4 != 0) {
        throw ConfigError("neck: finest level size " + std::to_string(base_h) + "x" + std::to_string(base_w) +
                          " must be a multiple of 4");
    }
    NeckParams p;
    p.cfg = cfg;
    p.lat1 = make_conv1x1(store, prefix + ".lat1", c_in1, cfg.c_out, rng, false);
    p.lat2 = make_conv1x1(store, prefix + ".lat2", c_in2, cfg.c_out, rng, false);
    p.lat3 = make_conv1x1(store, prefix + ".lat3", c_in3, cfg.c_out, rng, false);
    if (cfg.use_ckspp) {
        for (int lvl = 1; lvl <= 3; ++lvl) {
            p.ckspp.push_back(make_ckspp(store, prefix + ".ck" + std::to_string(lvl), cfg.c_out, cfg.c_out, cfg.scales,
                                         cfg.basis, cfg.phi_init, rng));
        }
    }
    if (cfg.upsample == UpsampleMode::Enau) {
        // P3 -> P2 works at (base/4), P2 -> P1 at (base/2).
        p.enau.push_back(make_enau(store, prefix + ".enau32", cfg.c_out, cfg.c_out, cfg.c_red, cfg.attention,
                                   base_h / 4, base_w / 4, rng));
        p.enau.push_back(make_enau(store, prefix + ".enau21", cfg.c_out, cfg.c_out, cfg.c_red, cfg.attention,
                                   base_h / 2, base_w / 2, rng));
    }
    return p;
}

PyramidVars neck_forward(Tape& tape, const ParamStore& store, const NeckParams& params, Var f1, Var f2, Var f3) {
    check_pyramid_shapes(f1.shape(), f2.shape(), f3.shape());
    Var g1 = params.lat1.forward(tape, store, f1);
    Var g2 = params.lat2.forward(tape, store, f2);
    Var g3 = params.lat3.forward(tape, store, f3);
    if (params.cfg.use_ckspp) {
        g1 = ckspp_forward(tape, store, params.ckspp[0], g1);
        g2 = ckspp_forward(tape, store, params.ckspp[1], g2);
        g3 = ckspp_forward(tape, store, params.ckspp[2], g3);
    }
    auto upsample = [&](Var x, std::size_t which) {
        if (params.cfg.upsample == UpsampleMode::Enau) {
            return enau_forward(tape, store, params.enau[which], x);
        }
        return nearest_resize(x, 2 * x.shape()[1], 2 * x.shape()[2]);
    };
    Var p3 = g3;
    Var p2 = fuse_add(g2, upsample(p3, 0));
    Var p1 = fuse_add(g1, upsample(p2, 1));
    ensure_finite(p1.val(), "neck_forward");
    return PyramidVars{p1, p2, p3};
}

std::size_t attention_param_count(const ParamStore& store, const NeckParams& params) {
    std::size_t n = 0;
    for (const EnauParams& e : params.enau) {
        n += store.value(e.wq).size() + store.value(e.wk).size() + store.value(e.wv).size();
        n += store.value(e.rel_pos.p_rel).size();
        if (e.att.registers > 0) n += store.value(e.registers).size();
    }
    return n;
}

}  // namespace kvl
