#pragma once

#include <vector>

#include "tdn/tensor.hpp"

namespace tdn {

// 2D cross-correlation. input [B,C,H,W], weight [Co,C/groups,kh,kw],
// optional bias [Co]. Output extent: floor((H + 2*padding - kh)/stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, int groups = 1);

Tensor avg_pool2d(const Tensor& input, int k, int stride);
Tensor max_pool2d(const Tensor& input, int k, int stride);

// align_corners=false: source sample for output i is (i+0.5)*scale - 0.5,
// clamped to the input range.
Tensor bilinear_upsample(const Tensor& input, int out_h, int out_w);

// Channel-wise 1D cross-correlation along the segment axis.
// input [B,T,C,H,W], weight [C,kt] with kt odd and padding == (kt-1)/2.
Tensor temporal_conv(const Tensor& input, const Tensor& weight, int padding);

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// [B,C,H,W] -> [B,C], mean over the spatial dims.
Tensor global_avg_pool(const Tensor& input);

// y = x * gamma[c] + beta[c]; the per-channel affine used in place of
// batch norm at desk scale.
Tensor channel_affine(const Tensor& input, const Tensor& gamma, const Tensor& beta);

// y[b,c,h,w] = x[b,c,h,w] * s[b,c]; channel gating.
Tensor scale_channels(const Tensor& input, const Tensor& s);

// Mean over batch of -log softmax at the label, stabilized by max
// subtraction. labels must lie in [0, K).
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// T tensors [B,C,H,W] -> [B,T,C,H,W] and back.
Tensor stack_segments(const std::vector<Tensor>& segments);
Tensor slice_segment(const Tensor& input, int t);

}  // namespace tdn
