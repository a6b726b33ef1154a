#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "tdn/gradcheck.hpp"
#include "tdn/model.hpp"
#include "tdn/nn_ops.hpp"
#include "tdn/tdm.hpp"
#include "tdn/util.hpp"
#include "test_support.hpp"

using namespace tdn;
using testsup::max_abs_diff;
using testsup::random_tensor;

namespace {

STDMConfig tiny_stdm_cfg(StdmFusion fusion = StdmFusion::Add) {
  STDMConfig cfg;
  cfg.out_channels = 8;
  cfg.width = 8;
  cfg.fusion = fusion;
  return cfg;
}

LTDMConfig tiny_ltdm_cfg() {
  LTDMConfig cfg;
  cfg.channels = 16;
  cfg.ratio = 8;
  return cfg;
}

}  // namespace

TEST_CASE("stdm: zero-init branch makes additive fusion an exact identity") {
  std::mt19937_64 rng(1);
  ParamStore store;
  STDMConfig cfg = tiny_stdm_cfg();
  StdmParams p = make_stdm_params(store, "s", cfg, rng);

  Tensor main = random_tensor({2, 8, 8, 8}, rng);
  Tensor diffs = random_tensor({2, 12, 8, 8}, rng);  // nonzero: the zero conv blocks it
  Tensor out = stdm_forward(main, diffs, cfg, p);
  CHECK(max_abs_diff(out.values(), main.values()) == 0.0);

  // zero differences keep every fusion's branch input silent too
  Tensor zero_d = Tensor::zeros({2, 12, 8, 8});
  Tensor out2 = stdm_forward(main, zero_d, cfg, p);
  CHECK(max_abs_diff(out2.values(), main.values()) == 0.0);
}

TEST_CASE("stdm: fusion variants are live and distinct once the branch is nonzero") {
  std::mt19937_64 rng(2);
  ParamStore store;
  STDMConfig cfg = tiny_stdm_cfg();
  StdmParams p = make_stdm_params(store, "s", cfg, rng);
  // wake the zero-initialized conv
  for (auto& v : p.conv2_w.values_mut()) v = 0.05;
  Tensor main = random_tensor({1, 8, 8, 8}, rng);
  Tensor diffs = random_tensor({1, 12, 8, 8}, rng);

  Tensor h = stdm_branch(diffs, cfg, p, 8, 8);
  Tensor add_out = stdm_fuse(main, h, StdmFusion::Add);
  Tensor att_out = stdm_fuse(main, h, StdmFusion::Attention);
  Tensor add_att = stdm_fuse(main, h, StdmFusion::AddPlusAttention);
  Tensor ch_out = stdm_fuse(main, h, StdmFusion::ChannelAttention);
  Tensor ch_add = stdm_fuse(main, h, StdmFusion::ChannelAttentionPlusAdd);
  CHECK(max_abs_diff(add_out.values(), att_out.values()) > 1e-6);
  CHECK(max_abs_diff(att_out.values(), add_att.values()) > 1e-6);
  CHECK(max_abs_diff(ch_out.values(), ch_add.values()) > 1e-6);

  // attention forms: F*sigmoid(H) and F + F*sigmoid(H)
  for (std::size_t i = 0; i < add_att.values().size(); ++i)
    CHECK(add_att.values()[i] ==
          doctest::Approx(main.values()[i] + att_out.values()[i]).epsilon(1e-12));
}

TEST_CASE("aligned_difference: self-difference is zero at delta init, F_next 0 gives F_i") {
  std::mt19937_64 rng(3);
  ParamStore store;
  LTDMConfig cfg = tiny_ltdm_cfg();
  LtdmParams p = make_ltdm_params(store, "l", cfg, rng);

  Tensor z = random_tensor({2, 2, 6, 6}, rng);
  Tensor d = aligned_difference(z, z, p, false);
  for (double v : d.values()) CHECK(v == 0.0);

  Tensor zero = Tensor::zeros({2, 2, 6, 6});
  Tensor d2 = aligned_difference(z, zero, p, false);
  CHECK(max_abs_diff(d2.values(), z.values()) == 0.0);

  // random kernel: matches depthwise-conv-then-subtract composed from oracles
  for (auto& v : p.smooth_w.values_mut()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  Tensor a = random_tensor({1, 2, 5, 5}, rng);
  Tensor b = random_tensor({1, 2, 5, 5}, rng);
  Tensor got = aligned_difference(a, b, p, false);
  oracle::Grid4 bg;
  bg.n = 1;
  bg.c = 2;
  bg.h = 5;
  bg.w = 5;
  bg.v.assign(b.values().begin(), b.values().end());
  oracle::Grid4 wg;
  wg.n = 2;
  wg.c = 1;
  wg.h = 3;
  wg.w = 3;
  wg.v.assign(p.smooth_w.values().begin(), p.smooth_w.values().end());
  oracle::Grid4 sm = oracle::conv2d(bg, wg, {}, 1, 1, 2);
  for (std::size_t i = 0; i < got.values().size(); ++i)
    CHECK(got.values()[i] == doctest::Approx(a.values()[i] - sm.v[i]).epsilon(1e-12));

  // averaging baseline replaces subtraction with the mean
  Tensor avg = aligned_difference(a, b, p, true);
  for (std::size_t i = 0; i < avg.values().size(); ++i)
    CHECK(avg.values()[i] == doctest::Approx(0.5 * (a.values()[i] + sm.v[i])).epsilon(1e-12));
}

TEST_CASE("motion_attention: neutral at zero input, strictly inside (0,1), fixed branch order") {
  std::mt19937_64 rng(4);
  ParamStore store;
  LTDMConfig cfg = tiny_ltdm_cfg();
  LtdmParams p = make_ltdm_params(store, "l", cfg, rng);

  Tensor zero = Tensor::zeros({1, 2, 6, 6});
  Tensor a = motion_attention(zero, zero, cfg, p);
  REQUIRE(a.shape() == Shape{1, 16, 6, 6});
  for (double v : a.values()) CHECK(v == 0.5);

  Tensor x = random_tensor({1, 2, 6, 6}, rng, -3, 3);
  Tensor y = random_tensor({1, 2, 6, 6}, rng, -3, 3);
  Tensor att = motion_attention(x, y, cfg, p);
  for (double v : att.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  // the module's branch reduction equals the hand-built (C + b2) + b3 order
  Tensor c = aligned_difference(x, y, p, false);
  Tensor b2 = conv2d(c, p.branch3_w, p.branch3_b, 1, 1);
  Tensor b3 = bilinear_upsample(conv2d(avg_pool2d(c, 2, 2), p.branchp_w, p.branchp_b, 1, 1), 6, 6);
  Tensor manual = sigmoid(conv2d(add(add(c, b2), b3), p.expand_w, p.expand_b, 1, 0));
  CHECK(max_abs_diff(att.values(), manual.values()) == 0.0);

  // single-scale config: only the short connection feeds the expansion
  LTDMConfig nms = cfg;
  nms.multi_scale = false;
  ParamStore store2;
  std::mt19937_64 rng2(4);
  LtdmParams p2 = make_ltdm_params(store2, "l", nms, rng2);
  CHECK_FALSE(store2.has("l.branch3.weight"));
  Tensor att2 = motion_attention(x, y, nms, p2);
  Tensor manual2 = sigmoid(conv2d(aligned_difference(x, y, p2, false), p2.expand_w, p2.expand_b,
                                  1, 0));
  CHECK(max_abs_diff(att2.values(), manual2.values()) == 0.0);
}

TEST_CASE("ltdm_forward: identical segments give exactly 1.5x features") {
  std::mt19937_64 rng(5);
  ParamStore store;
  LTDMConfig cfg = tiny_ltdm_cfg();
  LtdmParams p = make_ltdm_params(store, "l", cfg, rng);

  Tensor f = random_tensor({2, 16, 6, 6}, rng);
  std::vector<Tensor> segs = {f, f, f};
  std::vector<Tensor> out = ltdm_forward(segs, cfg, p);
  REQUIRE(out.size() == 3);
  for (const Tensor& o : out)
    for (std::size_t i = 0; i < o.values().size(); ++i)
      CHECK(o.values()[i] == doctest::Approx(1.5 * f.values()[i]).epsilon(1e-15));
}

TEST_CASE("ltdm_forward: bidirectional pair attention is exactly swap-symmetric") {
  std::mt19937_64 rng(6);
  ParamStore store;
  LTDMConfig cfg = tiny_ltdm_cfg();
  LtdmParams p = make_ltdm_params(store, "l", cfg, rng);

  Tensor a = random_tensor({1, 2, 6, 6}, rng);
  Tensor b = random_tensor({1, 2, 6, 6}, rng);
  Tensor g_ab = scale(add(motion_attention(a, b, cfg, p), motion_attention(b, a, cfg, p)), 0.5);
  Tensor g_ba = scale(add(motion_attention(b, a, cfg, p), motion_attention(a, b, cfg, p)), 0.5);
  CHECK(max_abs_diff(g_ab.values(), g_ba.values()) == 0.0);
}

TEST_CASE("ltdm_forward: the direction and fusion toggles are live") {
  std::mt19937_64 rng(7);
  ParamStore store;
  LTDMConfig cfg = tiny_ltdm_cfg();
  LtdmParams p = make_ltdm_params(store, "l", cfg, rng);

  std::vector<Tensor> segs;
  for (int t = 0; t < 3; ++t) segs.push_back(random_tensor({1, 16, 6, 6}, rng));

  LTDMConfig uni = cfg;
  uni.bidirectional = false;
  auto bi_out = ltdm_forward(segs, cfg, p);
  auto uni_out = ltdm_forward(segs, uni, p);
  double diff = 0;
  for (std::size_t t = 0; t < segs.size(); ++t)
    diff = std::max(diff, max_abs_diff(bi_out[t].values(), uni_out[t].values()));
  CHECK(diff > 1e-6);

  LTDMConfig plain = cfg;
  plain.fusion = LtdmFusion::PlainAdd;
  LTDMConfig chan = cfg;
  chan.fusion = LtdmFusion::ChannelAttention;
  auto plain_out = ltdm_forward(segs, plain, p);
  auto chan_out = ltdm_forward(segs, chan, p);
  CHECK(max_abs_diff(plain_out[0].values(), bi_out[0].values()) > 1e-6);
  CHECK(max_abs_diff(chan_out[0].values(), bi_out[0].values()) > 1e-6);

  LTDMConfig avg = cfg;
  avg.averaging_baseline = true;
  auto avg_out = ltdm_forward(segs, avg, p);
  CHECK(max_abs_diff(avg_out[0].values(), bi_out[0].values()) > 1e-6);

  // T = 1 degenerates to the clamped neighbor; residual attention gives 1.5x
  auto single = ltdm_forward({segs[0]}, cfg, p);
  for (std::size_t i = 0; i < single[0].values().size(); ++i)
    CHECK(single[0].values()[i] == doctest::Approx(1.5 * segs[0].values()[i]).epsilon(1e-15));

  CHECK_THROWS_AS(ltdm_forward(std::vector<Tensor>{}, cfg, p), Error);
}

TEST_CASE("ltdm packed wrapper matches the per-segment form") {
  std::mt19937_64 rng(8);
  ParamStore store;
  LTDMConfig cfg = tiny_ltdm_cfg();
  LtdmParams p = make_ltdm_params(store, "l", cfg, rng);
  std::vector<Tensor> segs;
  for (int t = 0; t < 3; ++t) segs.push_back(random_tensor({2, 16, 4, 4}, rng));
  Tensor packed_out = ltdm_forward_packed(stack_segments(segs), cfg, p);
  auto list_out = ltdm_forward(segs, cfg, p);
  for (int t = 0; t < 3; ++t)
    CHECK(max_abs_diff(slice_segment(packed_out, t).values(), list_out[static_cast<std::size_t>(t)].values()) == 0.0);
}

TEST_CASE("micro network: every parameter element passes finite differences") {
  ModelSpec spec = parse_model_spec_file(std::string(TDN_SPEC_DIR) + "/micro.spec");
  GradCheckReport report = gradcheck_model(spec, 17, 0, 1e-4, 1e-4);
  for (const auto& row : report.rows) {
    INFO(row.name);
    CHECK(row.max_rel_err < 1e-4);
  }
  CHECK(report.pass);
}
