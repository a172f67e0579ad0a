#pragma once

#include <cstdint>
#include <string>

#include "kvl/ops.hpp"
#include "kvl/params.hpp"
#include "kvl/rng.hpp"
#include "kvl/tape.hpp"

namespace kvl {

enum class LandmarkMode { SegmentMeans, StridedSubset };

const char* landmark_mode_name(LandmarkMode mode);
LandmarkMode landmark_mode_from_name(const std::string& name);

struct AttentionConfig {
    std::size_t heads = 4;
    std::size_t head_dim = 8;
    std::size_t landmarks = 16;   // m
    std::size_t registers = 4;    // r
    LandmarkMode mode = LandmarkMode::SegmentMeans;
    int pinv_iters = 12;
    // Residual above this attaches a numerical-quality warning to the result.
    double pinv_warn_threshold = 1e-6;

    std::size_t model_dim() const { return heads * head_dim; }
};

// ---------------------------------------------------------------------------
// Kernel layer (tape-free; this is what the benchmark times).
// ---------------------------------------------------------------------------

// softmax(Q K^T / sqrt(d_k)) V, dense. O(N^2) time and memory.
Tensor exact_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Segment means: rows split into m contiguous segments (sizes differ by <=1),
// averaged. Strided subset: rows floor(i*N/m).
Tensor select_landmarks(const Tensor& k, std::size_t m, LandmarkMode mode);

// Moore-Penrose pseudo-inverse by Newton-Schulz iteration
// Z <- Z (2I - A Z), Z0 = A^T / (||A||_1 ||A||_inf).
Tensor pinv_newton(const Tensor& a, int iterations);

// ||A Z A - A||_F / ||A||_F
double pinv_rel_residual(const Tensor& a, const Tensor& z);

struct NystromOutput {
    Tensor out;
    double pinv_residual = 0.0;
    bool quality_warning = false;
};

// softmax(Q K_m^T/s) pinv(softmax(K_m K_m^T/s)) softmax(K_m K^T/s) V with
// s = sqrt(d_k); no N x N intermediate is ever materialized.
NystromOutput nystrom_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionConfig& cfg);

Tensor add_registers(const Tensor& x, const Tensor& r);
Tensor strip_registers(const Tensor& y, std::size_t r);

// ---------------------------------------------------------------------------
// Tape layer.
// ---------------------------------------------------------------------------

Var exact_attention(Var q, Var k, Var v);
Var select_landmarks(Var k, std::size_t m, LandmarkMode mode);
Var pinv_newton(Var a, int iterations);

struct NystromVarOutput {
    Var out;
    double pinv_residual = 0.0;
    bool quality_warning = false;
};

NystromVarOutput nystrom_attention(Var q, Var k, Var v, const AttentionConfig& cfg);

Var add_registers(Var x, Var r);
Var strip_registers(Var y, std::size_t r);

// Trainable relative positional encoding p_rel [heads, head_dim, max_len].
struct RelPosParams {
    std::size_t p_rel = 0;
    std::size_t heads = 0;
    std::size_t head_dim = 0;
    std::size_t max_len = 0;
};

RelPosParams make_rel_pos(ParamStore& store, const std::string& prefix, std::size_t heads, std::size_t head_dim,
                          std::size_t max_len, Rng& rng, double init_std = 0.02);

// q3: [h,N,D_h]; adds p_rel[:, :, :N] in per-position layout. N <= max_len.
Var apply_rel_pos(Var q3, Var p_rel);

// Trainable register tokens [r, model_dim].
std::size_t make_registers(ParamStore& store, const std::string& prefix, std::size_t r, std::size_t model_dim,
                           Rng& rng, double init_std = 0.02);

}  // namespace kvl
