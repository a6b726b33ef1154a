#include "tdn/tdm.hpp"

#include <algorithm>

#include "tdn/nn_ops.hpp"
#include "tdn/util.hpp"

namespace tdn {

StdmParams make_stdm_params(ParamStore& store, const std::string& prefix, const STDMConfig& cfg,
                            std::mt19937_64& rng) {
  TDN_REQUIRE(cfg.out_channels >= 1 && cfg.width >= 1, "stdm config needs positive widths");
  StdmParams p;
  p.conv1_w = store.add(prefix + ".conv1.weight",
                        kaiming_uniform({cfg.width, cfg.in_channels, 3, 3}, cfg.in_channels * 9, rng));
  p.aff_gamma = store.add(prefix + ".affine.gamma", ones_param({cfg.width}));
  p.aff_beta = store.add(prefix + ".affine.beta", zeros_param({cfg.width}));
  // Zero init: the branch contributes nothing until trained, so additive
  // fusion starts as an exact identity over the main features.
  p.conv2_w = store.add(prefix + ".conv2.weight",
                        zeros_param({cfg.out_channels, cfg.width, 3, 3}));
  p.conv2_b = store.add(prefix + ".conv2.bias", zeros_param({cfg.out_channels}));
  return p;
}

StdmBranchPlan stdm_branch_plan(int in_h, int out_h, int downsample) {
  TDN_REQUIRE(in_h >= 1 && out_h >= 1 && downsample >= 1, "bad stdm branch extents");
  const int target = std::max(1, out_h / 2);
  int cur = (in_h - downsample) / downsample + 1;
  StdmBranchPlan plan;
  auto conv_out = [](int h, int s) { return (h - 1) / s + 1; };  // 3x3 pad 1
  if (cur > target) {
    plan.s1 = 2;
  }
  cur = conv_out(cur, plan.s1);
  if (cur > target) {
    plan.s2 = 2;
  }
  cur = conv_out(cur, plan.s2);
  while (cur > target && cur >= 2) {
    ++plan.extra_pools;
    cur = (cur - 2) / 2 + 1;
  }
  return plan;
}

Tensor stdm_branch(const Tensor& diffs, const STDMConfig& cfg, const StdmParams& params,
                   int out_h, int out_w) {
  TDN_REQUIRE(diffs.rank() == 4, "stdm branch input must be [B,C,H,W], got ",
              shape_str(diffs.shape()));
  TDN_REQUIRE(diffs.dim(1) == cfg.in_channels, "stdm branch expected ", cfg.in_channels,
              " input channels, got ", diffs.dim(1));
  const StdmBranchPlan plan = stdm_branch_plan(diffs.dim(2), out_h, cfg.downsample);
  Tensor x = diffs;
  if (cfg.downsample > 1) x = avg_pool2d(x, cfg.downsample, cfg.downsample);
  x = conv2d(x, params.conv1_w, Tensor{}, plan.s1, 1);
  x = relu(channel_affine(x, params.aff_gamma, params.aff_beta));
  x = conv2d(x, params.conv2_w, params.conv2_b, plan.s2, 1);
  for (int i = 0; i < plan.extra_pools; ++i) x = avg_pool2d(x, 2, 2);
  if (x.dim(2) != out_h || x.dim(3) != out_w) x = bilinear_upsample(x, out_h, out_w);
  return x;
}

Tensor stdm_fuse(const Tensor& main_features, const Tensor& branch, StdmFusion fusion) {
  switch (fusion) {
    case StdmFusion::Add:
    case StdmFusion::ConcatBaseline:
      return add(main_features, branch);
    case StdmFusion::Attention:
      return mul(main_features, sigmoid(branch));
    case StdmFusion::AddPlusAttention:
      return add(main_features, mul(main_features, sigmoid(branch)));
    case StdmFusion::ChannelAttention:
      return scale_channels(main_features, sigmoid(global_avg_pool(branch)));
    case StdmFusion::ChannelAttentionPlusAdd:
      return add(main_features,
                 scale_channels(main_features, sigmoid(global_avg_pool(branch))));
  }
  fail("unknown stdm fusion");
}

Tensor stdm_forward(const Tensor& main_features, const Tensor& diffs, const STDMConfig& cfg,
                    const StdmParams& params) {
  TDN_REQUIRE(main_features.rank() == 4, "stdm_forward: features must be [B,C,H,W]");
  TDN_REQUIRE(main_features.dim(1) == cfg.out_channels, "stdm_forward: feature channels ",
              main_features.dim(1), " do not match config ", cfg.out_channels);
  Tensor h = stdm_branch(diffs, cfg, params, main_features.dim(2), main_features.dim(3));
  return stdm_fuse(main_features, h, cfg.fusion);
}

LtdmParams make_ltdm_params(ParamStore& store, const std::string& prefix, const LTDMConfig& cfg,
                            std::mt19937_64& rng) {
  TDN_REQUIRE(cfg.channels >= 1, "ltdm config needs positive channels");
  TDN_REQUIRE(cfg.ratio >= 1 && cfg.channels % cfg.ratio == 0, "ltdm ratio ", cfg.ratio,
              " must divide channel width ", cfg.channels);
  const int cr = cfg.channels / cfg.ratio;
  LtdmParams p;
  p.compress_w = store.add(prefix + ".compress.weight",
                           kaiming_uniform({cr, cfg.channels, 1, 1}, cfg.channels, rng));
  p.compress_b = store.add(prefix + ".compress.bias", zeros_param({cr}));
  p.smooth_w = store.add(prefix + ".smooth.weight", delta_depthwise(cr, 3));
  if (cfg.multi_scale) {
    p.branch3_w = store.add(prefix + ".branch3.weight", kaiming_uniform({cr, cr, 3, 3}, cr * 9, rng));
    p.branch3_b = store.add(prefix + ".branch3.bias", zeros_param({cr}));
    p.branchp_w = store.add(prefix + ".branchpool.weight",
                            kaiming_uniform({cr, cr, 3, 3}, cr * 9, rng));
    p.branchp_b = store.add(prefix + ".branchpool.bias", zeros_param({cr}));
  }
  p.expand_w = store.add(prefix + ".expand.weight", kaiming_uniform({cfg.channels, cr, 1, 1}, cr, rng));
  p.expand_b = store.add(prefix + ".expand.bias", zeros_param({cfg.channels}));
  return p;
}

Tensor ltdm_compress(const Tensor& features, const LtdmParams& params) {
  return conv2d(features, params.compress_w, params.compress_b, 1, 0);
}

Tensor aligned_difference(const Tensor& a, const Tensor& b, const LtdmParams& params,
                          bool averaging_baseline) {
  TDN_REQUIRE(same_shape(a.shape(), b.shape()), "aligned_difference: mismatched shapes ",
              shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Tensor smoothed = conv2d(b, params.smooth_w, Tensor{}, 1, 1, a.dim(1));
  if (averaging_baseline) return scale(add(a, smoothed), 0.5);
  return sub(a, smoothed);
}

Tensor motion_attention(const Tensor& a, const Tensor& b, const LTDMConfig& cfg,
                        const LtdmParams& params) {
  Tensor c = aligned_difference(a, b, params, cfg.averaging_baseline);
  Tensor summed = c;  // short connection
  if (cfg.multi_scale) {
    Tensor b2 = conv2d(c, params.branch3_w, params.branch3_b, 1, 1);
    Tensor b3 = conv2d(avg_pool2d(c, 2, 2), params.branchp_w, params.branchp_b, 1, 1);
    b3 = bilinear_upsample(b3, c.dim(2), c.dim(3));
    summed = add(add(c, b2), b3);
  }
  return sigmoid(conv2d(summed, params.expand_w, params.expand_b, 1, 0));
}

namespace {

Tensor ltdm_fuse(const Tensor& f, const Tensor& g, LtdmFusion fusion) {
  switch (fusion) {
    case LtdmFusion::ResidualAttention:
      return add(f, mul(f, g));
    case LtdmFusion::PlainAdd:
      // The pre-sigmoid form Table 1(c) calls "F + G": the post-sigmoid map
      // re-centered at zero, so the untouched module starts near identity.
      return add(f, add_scalar(g, -0.5));
    case LtdmFusion::ChannelAttention:
      return add(f, scale_channels(f, global_avg_pool(g)));
  }
  fail("unknown ltdm fusion");
}

}  // namespace

std::vector<Tensor> ltdm_forward(const std::vector<Tensor>& segments, const LTDMConfig& cfg,
                                 const LtdmParams& params) {
  const int t_count = static_cast<int>(segments.size());
  TDN_REQUIRE(t_count >= 1, "ltdm_forward: empty segment list");
  std::vector<Tensor> compressed;
  compressed.reserve(segments.size());
  for (const auto& f : segments) {
    TDN_REQUIRE(f.dim(1) == cfg.channels, "ltdm_forward: segment channels ", f.dim(1),
                " do not match config ", cfg.channels);
    compressed.push_back(ltdm_compress(f, params));
  }
  std::vector<Tensor> out;
  out.reserve(segments.size());
  for (int t = 0; t < t_count; ++t) {
    const int next = std::min(t + 1, t_count - 1);
    Tensor g = motion_attention(compressed[static_cast<std::size_t>(t)],
                                compressed[static_cast<std::size_t>(next)], cfg, params);
    if (cfg.bidirectional) {
      Tensor back = motion_attention(compressed[static_cast<std::size_t>(next)],
                                     compressed[static_cast<std::size_t>(t)], cfg, params);
      g = scale(add(g, back), 0.5);
    }
    out.push_back(ltdm_fuse(segments[static_cast<std::size_t>(t)], g, cfg.fusion));
  }
  return out;
}

Tensor ltdm_forward_packed(const Tensor& features, const LTDMConfig& cfg,
                           const LtdmParams& params) {
  TDN_REQUIRE(features.rank() == 5, "ltdm_forward: input must be [B,T,C,H,W], got ",
              shape_str(features.shape()));
  const int t_count = features.dim(1);
  TDN_REQUIRE(t_count >= 1, "ltdm_forward: T must be >= 1");
  std::vector<Tensor> segs;
  segs.reserve(static_cast<std::size_t>(t_count));
  for (int t = 0; t < t_count; ++t) segs.push_back(slice_segment(features, t));
  return stack_segments(ltdm_forward(segs, cfg, params));
}

}  // namespace tdn
