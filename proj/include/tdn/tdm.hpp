#pragma once

#include <random>
#include <string>
#include <vector>

#include "tdn/params.hpp"
#include "tdn/tensor.hpp"

namespace tdn {

// Short-term module: stacked RGB differences through a light low-resolution
// CNN, fused laterally into the stage's frame features.
enum class StdmFusion {
  Add,                      // F + H
  Attention,                // F * sigmoid(H)
  AddPlusAttention,         // F + F * sigmoid(H)
  ChannelAttention,         // F * sigmoid(squeeze(H)) per channel
  ChannelAttentionPlusAdd,  // F + F * sigmoid(squeeze(H)) per channel
  ConcatBaseline,           // branch input is stacked raw neighbors, fused as Add
};

struct STDMConfig {
  int out_channels = 0;       // stage width C'
  int width = 0;              // internal width of the light CNN
  StdmFusion fusion = StdmFusion::Add;
  int downsample = 2;         // leading average-pool factor
  int in_channels = 12;       // stacked difference channels
};

struct StdmParams {
  Tensor conv1_w;           // [width, 12, 3, 3]
  Tensor aff_gamma, aff_beta;
  Tensor conv2_w, conv2_b;  // [C', width, 3, 3]; zero-init so fusion starts as identity
};

StdmParams make_stdm_params(ParamStore& store, const std::string& prefix, const STDMConfig& cfg,
                            std::mt19937_64& rng);

// Resolution plan for the branch: pool by `downsample`, then stride the two
// convs (and extra pools if needed) down to about half the stage's output
// resolution, where the CNN runs.
struct StdmBranchPlan {
  int s1 = 1;
  int s2 = 1;
  int extra_pools = 0;
};
StdmBranchPlan stdm_branch_plan(int in_h, int out_h, int downsample);

// H(I) = Upsample(CNN(Downsample(D))); diffs [B,12,H,W] -> [B,C',out_h,out_w].
Tensor stdm_branch(const Tensor& diffs, const STDMConfig& cfg, const StdmParams& params,
                   int out_h, int out_w);

Tensor stdm_fuse(const Tensor& main_features, const Tensor& branch, StdmFusion fusion);

// Full short-term module on precomputed stage features.
Tensor stdm_forward(const Tensor& main_features, const Tensor& diffs, const STDMConfig& cfg,
                    const StdmParams& params);

// Long-term module: compressed cross-segment differences drive a multi-scale
// sigmoid attention over segment features.
enum class LtdmFusion {
  ResidualAttention,  // F + F * G
  PlainAdd,           // F + (G - 0.5)
  ChannelAttention,   // F + F * squeeze(G) per channel
};

struct LTDMConfig {
  int channels = 0;  // C'
  int ratio = 8;     // channel compression ratio r; must divide channels
  bool multi_scale = true;
  bool bidirectional = true;
  LtdmFusion fusion = LtdmFusion::ResidualAttention;
  bool averaging_baseline = false;  // mean instead of difference
};

struct LtdmParams {
  Tensor compress_w, compress_b;    // 1x1, C' -> C'/r
  Tensor smooth_w;                  // depthwise 3x3, delta-init
  Tensor branch3_w, branch3_b;      // 3x3 at full resolution (multi-scale)
  Tensor branchp_w, branchp_b;      // 3x3 after pooling (multi-scale)
  Tensor expand_w, expand_b;        // 1x1, C'/r -> C'
};

LtdmParams make_ltdm_params(ParamStore& store, const std::string& prefix, const LTDMConfig& cfg,
                            std::mt19937_64& rng);

// 1x1 channel compression shared by both difference directions.
Tensor ltdm_compress(const Tensor& features, const LtdmParams& params);

// C(a,b) = a - depthwise3x3(b) on compressed features (or the mean of the two
// for the averaging baseline).
Tensor aligned_difference(const Tensor& a, const Tensor& b, const LtdmParams& params,
                          bool averaging_baseline);

// M(a,b) = sigmoid(expand(sum of multi-scale branches of C(a,b))), values
// strictly in (0,1). Inputs are compressed features.
Tensor motion_attention(const Tensor& a, const Tensor& b, const LTDMConfig& cfg,
                        const LtdmParams& params);

// Per-segment output per the configured fusion. The last segment has no
// successor; it is clamped to itself, so its difference is zero and its
// attention sits at the neutral point.
std::vector<Tensor> ltdm_forward(const std::vector<Tensor>& segments, const LTDMConfig& cfg,
                                 const LtdmParams& params);

// Wrapper over a packed [B,T,C,H,W] tensor.
Tensor ltdm_forward_packed(const Tensor& features, const LTDMConfig& cfg,
                           const LtdmParams& params);

}  // namespace tdn
