#pragma once

#include <cstddef>

#include "ds2net/autodiff.hpp"

// Differentiable tensor operations. Every op records itself on the tape of its
// first input; all inputs must share that tape.
namespace ds2net {

// Cross-correlation (no kernel flip). input [N,Cin,H,W], kernel [Cout,Cin,k,k], bias [Cout].
Var conv2d(Var input, Var kernel, Var bias, std::size_t stride, std::size_t padding);

// [N,C,H,W] -> [N,1,H,W]. Gradient goes to the lowest-index argmax channel.
Var channel_max(Var input);
Var channel_mean(Var input);

// [N,C,H,W] -> [N,C,1,1]
Var global_avg_pool(Var input);

// Mean over a window x window neighbourhood, dividing by the in-bounds tap count.
Var avg_pool_same(Var input, std::size_t window);

// Half-pixel-centre bilinear resize (align_corners = false).
Var upsample_bilinear(Var input, std::size_t out_h, std::size_t out_w);

// Elementwise; either operand of add/mul may have C = 1 and is then broadcast over channels.
Var add(Var a, Var b);
Var mul(Var a, Var b);

// x [N,C,H,W] times per-channel scale s [N,C,1,1] broadcast over H,W.
Var scale_channels(Var x, Var s);

Var concat_channels(Var a, Var b);
Var relu(Var x);
Var sigmoid(Var x);

// 1-D cross-correlation along the channel axis with zero padding (k-1)/2.
// input [N,C,1,1], kernel [k] with k odd.
Var conv1d_channels(Var input, Var kernel);

// Reductions and scalar helpers.
Var sum(Var x);
Var scale(Var x, double factor);

// Plain-tensor conveniences shared by the model and the tests.
Tensor upsample_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w);
Tensor avg_pool_same(const Tensor& input, std::size_t window);
double sigmoid(double x);
Tensor sigmoid(const Tensor& x);

} // namespace ds2net
