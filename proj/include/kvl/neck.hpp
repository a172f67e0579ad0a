#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kvl/attention.hpp"
#include "kvl/spline.hpp"

namespace kvl {

// Ordered fine-to-coarse triple of feature maps; each coarser level has
// exactly half the spatial size of the previous one.
struct FeaturePyramid {
    Tensor f1, f2, f3;
};

void check_pyramid_shapes(const Shape& f1, const Shape& f2, const Shape& f3);

struct Conv1x1 {
    std::size_t w = 0;  // [c_out, c_in, 1, 1]
    std::size_t b = 0;  // [c_out], only when with_bias
    bool with_bias = false;
    std::size_t c_in = 0, c_out = 0;

    Var forward(Tape& tape, const ParamStore& store, Var x) const;
};

Conv1x1 make_conv1x1(ParamStore& store, const std::string& prefix, std::size_t c_in, std::size_t c_out, Rng& rng,
                     bool with_bias = false);

// General square conv (encoder/backbone building block), He-initialized.
struct ConvLayer {
    std::size_t w = 0;  // [c_out, c_in, k, k]
    std::size_t b = 0;
    std::size_t c_in = 0, c_out = 0, k = 3, stride = 1, padding = 1;

    Var forward(Tape& tape, const ParamStore& store, Var x) const;
};

ConvLayer make_conv(ParamStore& store, const std::string& prefix, std::size_t c_in, std::size_t c_out, std::size_t k,
                    std::size_t stride, std::size_t padding, Rng& rng);

// ---------------------------------------------------------------------------
// cKSPP: multi-scale adaptive pooling, per-scale 1x1 KAN convolution, resize
// back, concatenate with the input, fuse with a 1x1 conv.
// ---------------------------------------------------------------------------

struct CksppParams {
    std::vector<std::size_t> scales;
    std::vector<KanConvParams> branch_kan;  // one 1x1 KAN conv per scale
    Conv1x1 fuse;                           // (|scales| * c_out + c_in) -> c_out
    std::size_t c_in = 0, c_out = 0;
};

CksppParams make_ckspp(ParamStore& store, const std::string& prefix, std::size_t c_in, std::size_t c_out,
                       const std::vector<std::size_t>& scales, const SplineBasis& basis, const PhiEdgeInit& phi_init,
                       Rng& rng);

Var ckspp_forward(Tape& tape, const ParamStore& store, const CksppParams& params, Var x);

// ---------------------------------------------------------------------------
// eNAU: 1x1 reduce, flatten, Q/K/V projection, registers, relative positional
// encoding on Q, per-head Nystrom attention, strip registers, reshape,
// 2x deconvolution upsample.
// ---------------------------------------------------------------------------

struct EnauParams {
    Conv1x1 reduce;
    std::size_t wq = 0, wk = 0, wv = 0;  // [c_red, model_dim]
    std::size_t registers = 0;           // [r, model_dim]; unused when r == 0
    RelPosParams rel_pos;
    std::size_t deconv_w = 0;  // [c_red, c_out, 2, 2]
    AttentionConfig att;
    std::size_t c_in = 0, c_out = 0, c_red = 0;
};

EnauParams make_enau(ParamStore& store, const std::string& prefix, std::size_t c_in, std::size_t c_out,
                     std::size_t c_red, const AttentionConfig& att, std::size_t max_h, std::size_t max_w, Rng& rng);

Var enau_forward(Tape& tape, const ParamStore& store, const EnauParams& params, Var x);

// Pair-wise addition fusion; shapes must match exactly.
Tensor fuse_add(const Tensor& a, const Tensor& b);
Var fuse_add(Var a, Var b);

// ---------------------------------------------------------------------------
// Neck: lateral 1x1 convs to a common width, optional cKSPP per level,
// top-down 2x upsampling (eNAU or the nearest-neighbor ablation baseline)
// fused by pairwise addition.
// ---------------------------------------------------------------------------

enum class UpsampleMode { Nearest, Enau };

const char* upsample_mode_name(UpsampleMode mode);
UpsampleMode upsample_mode_from_name(const std::string& name);

struct NeckConfig {
    std::size_t c_out = 64;
    std::size_t c_red = 32;
    std::vector<std::size_t> scales{1, 2, 3, 6};
    AttentionConfig attention;
    bool use_ckspp = true;
    UpsampleMode upsample = UpsampleMode::Enau;
    SplineBasis basis{3, 5, -1.0, 1.0};
    PhiEdgeInit phi_init;
};

struct NeckParams {
    NeckConfig cfg;
    Conv1x1 lat1, lat2, lat3;
    std::vector<CksppParams> ckspp;  // one per level when enabled
    std::vector<EnauParams> enau;    // {P3->P2, P2->P1} when enabled
};

// base_h/base_w are the finest-level spatial sizes (multiples of 4) the neck
// must support; they bound the rel-pos table length.
NeckParams make_neck(ParamStore& store, const std::string& prefix, std::size_t c_in1, std::size_t c_in2,
                     std::size_t c_in3, std::size_t base_h, std::size_t base_w, const NeckConfig& cfg, Rng& rng);

struct PyramidVars {
    Var p1, p2, p3;
};

PyramidVars neck_forward(Tape& tape, const ParamStore& store, const NeckParams& params, Var f1, Var f2, Var f3);

// Scalar count of attention-specific parameters (projections, registers,
// rel-pos); zero for the nearest-neighbor baseline.
std::size_t attention_param_count(const ParamStore& store, const NeckParams& params);

}  // namespace kvl
