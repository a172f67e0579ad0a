#pragma once

#include <cstdint>
#include <vector>

#include "kvl/tape.hpp"
#include "kvl/tensor.hpp"

namespace kvl {

// ---------------------------------------------------------------------------
// Kernels: pure tensor functions, no tape. The tape layer below wraps these.
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

// Row-stable softmax along `axis` (max subtraction before exp).
Tensor softmax(const Tensor& x, std::size_t axis);

// x: [C_in,H,W], w: [C_out,C_in,k,k]; zero padding; cross-correlation.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride = 1, std::size_t padding = 0);

// x: [C,H,W], b: [C]
Tensor bias_add_channels(const Tensor& x, const Tensor& b);

// Transposed convolution; w: [C_in,C_out,k,k] with k == stride so the output
// is exactly stride*H x stride*W.
Tensor deconv2d(const Tensor& x, const Tensor& w, std::size_t stride = 2);

// Output cell (i,j) = mean over [floor(iH/s), ceil((i+1)H/s)) x same for W.
Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t s);

// Nearest-neighbor resize of [C,H,W] to [C,oh,ow]; source index floor(i*H/oh).
Tensor nearest_resize(const Tensor& x, std::size_t oh, std::size_t ow);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor sum_all(const Tensor& a);  // rank-0 result

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

double silu_scalar(double x);
double silu_deriv(double x);
double sigmoid_scalar(double x);

Tensor concat_channels(const std::vector<const Tensor*>& parts);  // [Ci,H,W] -> [sum Ci,H,W]
Tensor channel_slice(const Tensor& x, std::size_t c0, std::size_t c1);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx);

// Average rows over m contiguous segments [floor(i*N/m), floor((i+1)*N/m)).
Tensor segment_mean_rows(const Tensor& a, std::size_t m);

Tensor split_heads(const Tensor& x, std::size_t heads);  // [N,C] -> [h,N,C/h]
Tensor head_of(const Tensor& x3, std::size_t head);      // [h,N,D] -> [N,D]
Tensor concat_cols(const std::vector<const Tensor*>& parts);

Tensor chw_to_lc(const Tensor& x);                                    // [C,H,W] -> [H*W,C]
Tensor lc_to_chw(const Tensor& x, std::size_t h, std::size_t w);      // [H*W,C] -> [C,H,W]

double frobenius_norm(const Tensor& a);
double rel_frobenius_error(const Tensor& approx, const Tensor& exact);

// ---------------------------------------------------------------------------
// Tape layer: same operations recorded with their gradient rules.
// ---------------------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var sum_all(Var a);
Var matmul(Var a, Var b);
Var transpose2d(Var a);
Var softmax(Var x, std::size_t axis);
Var conv2d(Var x, Var w, std::size_t stride = 1, std::size_t padding = 0);
Var bias_add_channels(Var x, Var b);
Var deconv2d(Var x, Var w, std::size_t stride = 2);
Var adaptive_avg_pool2d(Var x, std::size_t s);
Var nearest_resize(Var x, std::size_t oh, std::size_t ow);
Var silu(Var x);
Var sigmoid(Var x);
Var relu(Var x);
Var concat_channels(const std::vector<Var>& parts);
Var channel_slice(Var x, std::size_t c0, std::size_t c1);
Var concat_rows(Var a, Var b);
Var slice_rows(Var a, std::size_t r0, std::size_t r1);
Var gather_rows(Var a, std::vector<std::size_t> idx);
Var segment_mean_rows(Var a, std::size_t m);
Var split_heads(Var x, std::size_t heads);
Var head_of(Var x3, std::size_t head);
Var concat_cols(const std::vector<Var>& parts);
Var chw_to_lc(Var x);
Var lc_to_chw(Var x, std::size_t h, std::size_t w);
Var reshape(Var x, Shape shape);

// Loss building blocks; targets/weights/masks are constants (not
// differentiated). All reduce by summation to a rank-0 scalar.
Var bce_with_logits_sum(Var logits, Tensor targets, Tensor weights);
Var smooth_l1_sum(Var pred, Tensor target, Tensor mask);
// logits: [nc,H,W]; labels: flat H*W class ids; mask: [H,W] 0/1.
Var softmax_ce_sum(Var logits, std::vector<int> labels, Tensor mask);

}  // namespace kvl
