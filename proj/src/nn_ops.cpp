#include "tdn/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

#include "tdn/util.hpp"

namespace tdn {

namespace {

void require_rank(const Tensor& t, int rank, const char* op, const char* arg) {
  TDN_REQUIRE(t.rank() == rank, op, ": ", arg, " must have rank ", rank, ", got ",
              shape_str(t.shape()));
}

// Zero-pads one batch item [C,H,W] into [C,H+2p,W+2p].
void pad_item(const double* src, int c, int h, int w, int p, std::vector<double>& dst) {
  const int hp = h + 2 * p;
  const int wp = w + 2 * p;
  dst.assign(static_cast<std::size_t>(c) * hp * wp, 0.0);
  for (int ci = 0; ci < c; ++ci) {
    const double* s = src + static_cast<std::size_t>(ci) * h * w;
    double* d = dst.data() + (static_cast<std::size_t>(ci) * hp + p) * wp + p;
    for (int y = 0; y < h; ++y) {
      std::memcpy(d + static_cast<std::size_t>(y) * wp, s + static_cast<std::size_t>(y) * w,
                  sizeof(double) * static_cast<std::size_t>(w));
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding, int groups) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int Co = weight.dim(0), Cg = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  TDN_REQUIRE(stride >= 1, "conv2d: stride must be >= 1, got ", stride);
  TDN_REQUIRE(padding >= 0, "conv2d: padding must be >= 0, got ", padding);
  TDN_REQUIRE(groups >= 1, "conv2d: groups must be >= 1, got ", groups);
  TDN_REQUIRE(C % groups == 0, "conv2d: input channels ", C, " not divisible by groups ", groups);
  TDN_REQUIRE(Co % groups == 0, "conv2d: output channels ", Co, " not divisible by groups ",
              groups);
  TDN_REQUIRE(Cg == C / groups, "conv2d: weight channel dim ", Cg, " does not equal C/groups = ",
              C / groups);
  if (bias.defined()) {
    TDN_REQUIRE(bias.rank() == 1 && bias.dim(0) == Co, "conv2d: bias shape ",
                shape_str(bias.shape()), " does not match output channels ", Co);
  }
  const int Hp = H + 2 * padding, Wp = W + 2 * padding;
  TDN_REQUIRE(kh <= Hp && kw <= Wp, "conv2d: kernel ", kh, "x", kw,
              " exceeds padded input ", Hp, "x", Wp);
  const int Ho = (Hp - kh) / stride + 1;
  const int Wo = (Wp - kw) / stride + 1;
  const int Cog = Co / groups;

  const double* x = input.values().data();
  const double* wv = weight.values().data();
  const double* bv = bias.defined() ? bias.values().data() : nullptr;

  std::vector<double> out(static_cast<std::size_t>(B) * Co * Ho * Wo, 0.0);
  std::vector<double> xpad;
  for (int n = 0; n < B; ++n) {
    const double* xn;
    int hs = H, ws = W;
    if (padding > 0) {
      pad_item(x + static_cast<std::size_t>(n) * C * H * W, C, H, W, padding, xpad);
      xn = xpad.data();
      hs = Hp;
      ws = Wp;
    } else {
      xn = x + static_cast<std::size_t>(n) * C * H * W;
    }
    for (int g = 0; g < groups; ++g) {
      for (int col = 0; col < Cog; ++col) {
        const int co = g * Cog + col;
        double* op = out.data() + ((static_cast<std::size_t>(n) * Co + co) * Ho) * Wo;
        if (bv) {
          const double b0 = bv[co];
          for (int i = 0; i < Ho * Wo; ++i) op[i] = b0;
        }
        for (int cil = 0; cil < Cg; ++cil) {
          const int ci = g * Cg + cil;
          const double* xc = xn + static_cast<std::size_t>(ci) * hs * ws;
          const double* wk = wv + ((static_cast<std::size_t>(co) * Cg + cil) * kh) * kw;
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const double wval = wk[ky * kw + kx];
              if (wval == 0.0) continue;
              for (int ho = 0; ho < Ho; ++ho) {
                const double* xrow = xc + static_cast<std::size_t>(ho * stride + ky) * ws + kx;
                double* orow = op + static_cast<std::size_t>(ho) * Wo;
                if (stride == 1) {
                  for (int wo = 0; wo < Wo; ++wo) orow[wo] += wval * xrow[wo];
                } else {
                  for (int wo = 0; wo < Wo; ++wo) orow[wo] += wval * xrow[wo * stride];
                }
              }
            }
          }
        }
      }
    }
  }

  Tensor tin = input, tw = weight, tb = bias;
  std::vector<Tensor> parents = {input, weight};
  if (bias.defined()) parents.push_back(bias);
  return detail::make_result(
      {B, Co, Ho, Wo}, std::move(out), "conv2d", std::move(parents),
      [tin, tw, tb, stride, padding, groups](const detail::Node& self) {
        const int B = tin.dim(0), C = tin.dim(1), H = tin.dim(2), W = tin.dim(3);
        const int Co = tw.dim(0), Cg = tw.dim(1), kh = tw.dim(2), kw = tw.dim(3);
        const int Ho = self.shape[2], Wo = self.shape[3];
        const int Hp = H + 2 * padding, Wp = W + 2 * padding;
        const int Cog = Co / groups;
        const double* g_out = self.grad.data();
        const double* x = tin.values().data();
        const double* wv = tw.values().data();

        const bool need_dx = tin.requires_grad();
        const bool need_dw = tw.requires_grad();
        const bool need_db = tb.defined() && tb.requires_grad();

        if (need_db) {
          detail::Node* bn = tb.node();
          bn->ensure_grad();
          for (int n = 0; n < B; ++n)
            for (int co = 0; co < Co; ++co) {
              const double* gp = g_out + ((static_cast<std::size_t>(n) * Co + co) * Ho) * Wo;
              double s = 0.0;
              for (int i = 0; i < Ho * Wo; ++i) s += gp[i];
              bn->grad[static_cast<std::size_t>(co)] += s;
            }
        }
        if (!need_dx && !need_dw) return;

        detail::Node* in_node = tin.node();
        detail::Node* w_node = tw.node();
        if (need_dx) in_node->ensure_grad();
        if (need_dw) w_node->ensure_grad();

        std::vector<double> xpad, dxpad;
        for (int n = 0; n < B; ++n) {
          const double* xn;
          int hs = H, ws = W;
          if (padding > 0) {
            pad_item(x + static_cast<std::size_t>(n) * C * H * W, C, H, W, padding, xpad);
            xn = xpad.data();
            hs = Hp;
            ws = Wp;
          } else {
            xn = x + static_cast<std::size_t>(n) * C * H * W;
          }
          if (need_dx) dxpad.assign(static_cast<std::size_t>(C) * hs * ws, 0.0);

          for (int g = 0; g < groups; ++g) {
            for (int col = 0; col < Cog; ++col) {
              const int co = g * Cog + col;
              const double* gp = g_out + ((static_cast<std::size_t>(n) * Co + co) * Ho) * Wo;
              for (int cil = 0; cil < Cg; ++cil) {
                const int ci = g * Cg + cil;
                const double* xc = xn + static_cast<std::size_t>(ci) * hs * ws;
                double* dxc = need_dx ? dxpad.data() + static_cast<std::size_t>(ci) * hs * ws
                                      : nullptr;
                const std::size_t wbase = ((static_cast<std::size_t>(co) * Cg + cil) * kh) * kw;
                for (int ky = 0; ky < kh; ++ky) {
                  for (int kx = 0; kx < kw; ++kx) {
                    const double wval = wv[wbase + static_cast<std::size_t>(ky) * kw + kx];
                    double wacc = 0.0;
                    for (int ho = 0; ho < Ho; ++ho) {
                      const std::size_t row = static_cast<std::size_t>(ho * stride + ky) * ws + kx;
                      const double* grow = gp + static_cast<std::size_t>(ho) * Wo;
                      if (need_dw) {
                        const double* xrow = xc + row;
                        if (stride == 1) {
                          for (int wo = 0; wo < Wo; ++wo) wacc += xrow[wo] * grow[wo];
                        } else {
                          for (int wo = 0; wo < Wo; ++wo) wacc += xrow[wo * stride] * grow[wo];
                        }
                      }
                      if (need_dx) {
                        double* dxrow = dxc + row;
                        if (stride == 1) {
                          for (int wo = 0; wo < Wo; ++wo) dxrow[wo] += wval * grow[wo];
                        } else {
                          for (int wo = 0; wo < Wo; ++wo) dxrow[wo * stride] += wval * grow[wo];
                        }
                      }
                    }
                    if (need_dw)
                      w_node->grad[wbase + static_cast<std::size_t>(ky) * kw + kx] += wacc;
                  }
                }
              }
            }
          }

          if (need_dx) {
            double* dx = in_node->grad.data() + static_cast<std::size_t>(n) * C * H * W;
            if (padding == 0) {
              for (std::size_t i = 0; i < dxpad.size(); ++i) dx[i] += dxpad[i];
            } else {
              for (int ci = 0; ci < C; ++ci) {
                const double* s =
                    dxpad.data() + (static_cast<std::size_t>(ci) * hs + padding) * ws + padding;
                double* d = dx + static_cast<std::size_t>(ci) * H * W;
                for (int y = 0; y < H; ++y)
                  for (int xw = 0; xw < W; ++xw)
                    d[static_cast<std::size_t>(y) * W + xw] += s[static_cast<std::size_t>(y) * ws + xw];
              }
            }
          }
        }
      });
}

Tensor avg_pool2d(const Tensor& input, int k, int stride) {
  require_rank(input, 4, "avg_pool2d", "input");
  const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  TDN_REQUIRE(k >= 1, "avg_pool2d: k must be >= 1, got ", k);
  TDN_REQUIRE(stride >= 1, "avg_pool2d: stride must be >= 1, got ", stride);
  TDN_REQUIRE(k <= H && k <= W, "avg_pool2d: window ", k, " exceeds spatial extent ", H, "x", W);
  const int Ho = (H - k) / stride + 1;
  const int Wo = (W - k) / stride + 1;
  const double inv = 1.0 / (static_cast<double>(k) * k);

  const double* x = input.values().data();
  std::vector<double> out(static_cast<std::size_t>(B) * C * Ho * Wo);
  for (int nc = 0; nc < B * C; ++nc) {
    const double* xc = x + static_cast<std::size_t>(nc) * H * W;
    double* oc = out.data() + static_cast<std::size_t>(nc) * Ho * Wo;
    for (int ho = 0; ho < Ho; ++ho)
      for (int wo = 0; wo < Wo; ++wo) {
        double s = 0.0;
        for (int ky = 0; ky < k; ++ky) {
          const double* row = xc + static_cast<std::size_t>(ho * stride + ky) * W + wo * stride;
          for (int kx = 0; kx < k; ++kx) s += row[kx];
        }
        oc[static_cast<std::size_t>(ho) * Wo + wo] = s * inv;
      }
  }

  Tensor tin = input;
  return detail::make_result(
      {B, C, Ho, Wo}, std::move(out), "avg_pool2d", {input},
      [tin, k, stride, inv](const detail::Node& self) {
        if (!tin.requires_grad()) return;
        const int B = tin.dim(0), C = tin.dim(1), H = tin.dim(2), W = tin.dim(3);
        const int Ho = self.shape[2], Wo = self.shape[3];
        detail::Node* in_node = tin.node();
        in_node->ensure_grad();
        const double* g = self.grad.data();
        for (int nc = 0; nc < B * C; ++nc) {
          double* dxc = in_node->grad.data() + static_cast<std::size_t>(nc) * H * W;
          const double* gc = g + static_cast<std::size_t>(nc) * Ho * Wo;
          for (int ho = 0; ho < Ho; ++ho)
            for (int wo = 0; wo < Wo; ++wo) {
              const double gv = gc[static_cast<std::size_t>(ho) * Wo + wo] * inv;
              for (int ky = 0; ky < k; ++ky) {
                double* row = dxc + static_cast<std::size_t>(ho * stride + ky) * W + wo * stride;
                for (int kx = 0; kx < k; ++kx) row[kx] += gv;
              }
            }
        }
      });
}

Tensor max_pool2d(const Tensor& input, int k, int stride) {
  require_rank(input, 4, "max_pool2d", "input");
  const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  TDN_REQUIRE(k >= 1 && stride >= 1, "max_pool2d: k and stride must be >= 1");
  TDN_REQUIRE(k <= H && k <= W, "max_pool2d: window ", k, " exceeds spatial extent ", H, "x", W);
  const int Ho = (H - k) / stride + 1;
  const int Wo = (W - k) / stride + 1;

  const double* x = input.values().data();
  std::vector<double> out(static_cast<std::size_t>(B) * C * Ho * Wo);
  auto argmax = std::make_shared<std::vector<std::int32_t>>(out.size());
  for (int nc = 0; nc < B * C; ++nc) {
    const double* xc = x + static_cast<std::size_t>(nc) * H * W;
    for (int ho = 0; ho < Ho; ++ho)
      for (int wo = 0; wo < Wo; ++wo) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = 0;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int idx = (ho * stride + ky) * W + wo * stride + kx;
            if (xc[idx] > best) {
              best = xc[idx];
              best_idx = idx;
            }
          }
        const std::size_t o = static_cast<std::size_t>(nc) * Ho * Wo + ho * Wo + wo;
        out[o] = best;
        (*argmax)[o] = best_idx;
      }
  }

  Tensor tin = input;
  return detail::make_result(
      {B, C, Ho, Wo}, std::move(out), "max_pool2d", {input},
      [tin, argmax](const detail::Node& self) {
        if (!tin.requires_grad()) return;
        const int H = tin.dim(2), W = tin.dim(3);
        const int Ho = self.shape[2], Wo = self.shape[3];
        detail::Node* in_node = tin.node();
        in_node->ensure_grad();
        const int BC = tin.dim(0) * tin.dim(1);
        for (int nc = 0; nc < BC; ++nc) {
          double* dxc = in_node->grad.data() + static_cast<std::size_t>(nc) * H * W;
          for (int i = 0; i < Ho * Wo; ++i) {
            const std::size_t o = static_cast<std::size_t>(nc) * Ho * Wo + i;
            dxc[(*argmax)[o]] += self.grad[o];
          }
        }
      });
}

namespace {
struct Lerp {
  int i0, i1;
  double f;
};
Lerp sample_pos(int out_i, int out_n, int in_n) {
  double src = (out_i + 0.5) * (static_cast<double>(in_n) / out_n) - 0.5;
  if (src < 0.0) src = 0.0;
  int i0 = static_cast<int>(src);
  if (i0 > in_n - 1) i0 = in_n - 1;
  const int i1 = std::min(i0 + 1, in_n - 1);
  return {i0, i1, src - i0};
}
}  // namespace

Tensor bilinear_upsample(const Tensor& input, int out_h, int out_w) {
  require_rank(input, 4, "bilinear_upsample", "input");
  TDN_REQUIRE(out_h >= 1 && out_w >= 1, "bilinear_upsample: output extents must be >= 1, got ",
              out_h, "x", out_w);
  const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);

  std::vector<Lerp> ys(static_cast<std::size_t>(out_h)), xs(static_cast<std::size_t>(out_w));
  for (int i = 0; i < out_h; ++i) ys[static_cast<std::size_t>(i)] = sample_pos(i, out_h, H);
  for (int j = 0; j < out_w; ++j) xs[static_cast<std::size_t>(j)] = sample_pos(j, out_w, W);

  const double* x = input.values().data();
  std::vector<double> out(static_cast<std::size_t>(B) * C * out_h * out_w);
  for (int nc = 0; nc < B * C; ++nc) {
    const double* xc = x + static_cast<std::size_t>(nc) * H * W;
    double* oc = out.data() + static_cast<std::size_t>(nc) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      const Lerp& py = ys[static_cast<std::size_t>(i)];
      for (int j = 0; j < out_w; ++j) {
        const Lerp& px = xs[static_cast<std::size_t>(j)];
        const double v00 = xc[static_cast<std::size_t>(py.i0) * W + px.i0];
        const double v01 = xc[static_cast<std::size_t>(py.i0) * W + px.i1];
        const double v10 = xc[static_cast<std::size_t>(py.i1) * W + px.i0];
        const double v11 = xc[static_cast<std::size_t>(py.i1) * W + px.i1];
        oc[static_cast<std::size_t>(i) * out_w + j] =
            (1.0 - py.f) * ((1.0 - px.f) * v00 + px.f * v01) +
            py.f * ((1.0 - px.f) * v10 + px.f * v11);
      }
    }
  }

  Tensor tin = input;
  auto ys_s = std::make_shared<std::vector<Lerp>>(std::move(ys));
  auto xs_s = std::make_shared<std::vector<Lerp>>(std::move(xs));
  return detail::make_result(
      {B, C, out_h, out_w}, std::move(out), "bilinear_upsample", {input},
      [tin, ys_s, xs_s](const detail::Node& self) {
        if (!tin.requires_grad()) return;
        const int H = tin.dim(2), W = tin.dim(3);
        const int Oh = self.shape[2], Ow = self.shape[3];
        detail::Node* in_node = tin.node();
        in_node->ensure_grad();
        const int BC = tin.dim(0) * tin.dim(1);
        for (int nc = 0; nc < BC; ++nc) {
          double* dxc = in_node->grad.data() + static_cast<std::size_t>(nc) * H * W;
          const double* gc = self.grad.data() + static_cast<std::size_t>(nc) * Oh * Ow;
          for (int i = 0; i < Oh; ++i) {
            const Lerp& py = (*ys_s)[static_cast<std::size_t>(i)];
            for (int j = 0; j < Ow; ++j) {
              const Lerp& px = (*xs_s)[static_cast<std::size_t>(j)];
              const double g = gc[static_cast<std::size_t>(i) * Ow + j];
              dxc[static_cast<std::size_t>(py.i0) * W + px.i0] += (1.0 - py.f) * (1.0 - px.f) * g;
              dxc[static_cast<std::size_t>(py.i0) * W + px.i1] += (1.0 - py.f) * px.f * g;
              dxc[static_cast<std::size_t>(py.i1) * W + px.i0] += py.f * (1.0 - px.f) * g;
              dxc[static_cast<std::size_t>(py.i1) * W + px.i1] += py.f * px.f * g;
            }
          }
        }
      });
}

Tensor temporal_conv(const Tensor& input, const Tensor& weight, int padding) {
  require_rank(input, 5, "temporal_conv", "input");
  require_rank(weight, 2, "temporal_conv", "weight");
  const int B = input.dim(0), T = input.dim(1), C = input.dim(2), H = input.dim(3),
            W = input.dim(4);
  const int Cw = weight.dim(0), kt = weight.dim(1);
  TDN_REQUIRE(kt % 2 == 1, "temporal_conv: kernel width must be odd, got ", kt);
  TDN_REQUIRE(Cw == C, "temporal_conv: weight channels ", Cw, " do not match input channels ", C);
  TDN_REQUIRE(padding == (kt - 1) / 2, "temporal_conv: padding must be (kt-1)/2 = ", (kt - 1) / 2,
              ", got ", padding);

  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  const std::int64_t chw = C * hw;
  const std::int64_t tchw = T * chw;
  const double* x = input.values().data();
  const double* wv = weight.values().data();
  std::vector<double> out(static_cast<std::size_t>(B) * tchw, 0.0);
  for (int n = 0; n < B; ++n)
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < C; ++c) {
        double* op = out.data() + n * tchw + t * chw + c * hw;
        for (int k = 0; k < kt; ++k) {
          const int tau = t + k - padding;
          if (tau < 0 || tau >= T) continue;
          const double wval = wv[static_cast<std::size_t>(c) * kt + k];
          if (wval == 0.0) continue;
          const double* xp = x + n * tchw + tau * chw + c * hw;
          for (std::int64_t i = 0; i < hw; ++i) op[i] += wval * xp[i];
        }
      }

  Tensor tin = input, tw = weight;
  return detail::make_result(
      {B, T, C, H, W}, std::move(out), "temporal_conv", {input, weight},
      [tin, tw, padding](const detail::Node& self) {
        const int B = tin.dim(0), T = tin.dim(1), C = tin.dim(2), H = tin.dim(3), W = tin.dim(4);
        const int kt = tw.dim(1);
        const std::int64_t hw = static_cast<std::int64_t>(H) * W;
        const std::int64_t chw = C * hw;
        const std::int64_t tchw = T * chw;
        const double* g = self.grad.data();
        const double* x = tin.values().data();
        const double* wv = tw.values().data();
        const bool need_dx = tin.requires_grad();
        const bool need_dw = tw.requires_grad();
        detail::Node* in_node = tin.node();
        detail::Node* w_node = tw.node();
        if (need_dx) in_node->ensure_grad();
        if (need_dw) w_node->ensure_grad();
        for (int n = 0; n < B; ++n)
          for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c) {
              const double* gp = g + n * tchw + t * chw + c * hw;
              for (int k = 0; k < kt; ++k) {
                const int tau = t + k - padding;
                if (tau < 0 || tau >= T) continue;
                const double wval = wv[static_cast<std::size_t>(c) * kt + k];
                if (need_dx) {
                  double* dxp = in_node->grad.data() + n * tchw + tau * chw + c * hw;
                  for (std::int64_t i = 0; i < hw; ++i) dxp[i] += wval * gp[i];
                }
                if (need_dw) {
                  const double* xp = x + n * tchw + tau * chw + c * hw;
                  double s = 0.0;
                  for (std::int64_t i = 0; i < hw; ++i) s += xp[i] * gp[i];
                  w_node->grad[static_cast<std::size_t>(c) * kt + k] += s;
                }
              }
            }
      });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  const int B = input.dim(0), F = input.dim(1);
  const int O = weight.dim(0), Fw = weight.dim(1);
  TDN_REQUIRE(F == Fw, "linear: input features ", F, " do not match weight features ", Fw);
  if (bias.defined())
    TDN_REQUIRE(bias.rank() == 1 && bias.dim(0) == O, "linear: bias shape ",
                shape_str(bias.shape()), " does not match output features ", O);

  const double* x = input.values().data();
  const double* wv = weight.values().data();
  const double* bv = bias.defined() ? bias.values().data() : nullptr;
  std::vector<double> out(static_cast<std::size_t>(B) * O);
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o) {
      const double* xr = x + static_cast<std::size_t>(b) * F;
      const double* wr = wv + static_cast<std::size_t>(o) * F;
      double s = bv ? bv[o] : 0.0;
      for (int f = 0; f < F; ++f) s += xr[f] * wr[f];
      out[static_cast<std::size_t>(b) * O + o] = s;
    }

  Tensor tin = input, tw = weight, tb = bias;
  std::vector<Tensor> parents = {input, weight};
  if (bias.defined()) parents.push_back(bias);
  return detail::make_result(
      {B, O}, std::move(out), "linear", std::move(parents), [tin, tw, tb](const detail::Node& self) {
        const int B = tin.dim(0), F = tin.dim(1), O = tw.dim(0);
        const double* g = self.grad.data();
        const double* x = tin.values().data();
        const double* wv = tw.values().data();
        if (tin.requires_grad()) {
          detail::Node* in_node = tin.node();
          in_node->ensure_grad();
          for (int b = 0; b < B; ++b) {
            double* dxr = in_node->grad.data() + static_cast<std::size_t>(b) * F;
            for (int o = 0; o < O; ++o) {
              const double gv = g[static_cast<std::size_t>(b) * O + o];
              const double* wr = wv + static_cast<std::size_t>(o) * F;
              for (int f = 0; f < F; ++f) dxr[f] += gv * wr[f];
            }
          }
        }
        if (tw.requires_grad()) {
          detail::Node* w_node = tw.node();
          w_node->ensure_grad();
          for (int b = 0; b < B; ++b) {
            const double* xr = x + static_cast<std::size_t>(b) * F;
            for (int o = 0; o < O; ++o) {
              const double gv = g[static_cast<std::size_t>(b) * O + o];
              double* dwr = w_node->grad.data() + static_cast<std::size_t>(o) * F;
              for (int f = 0; f < F; ++f) dwr[f] += gv * xr[f];
            }
          }
        }
        if (tb.defined() && tb.requires_grad()) {
          detail::Node* b_node = tb.node();
          b_node->ensure_grad();
          for (int b = 0; b < B; ++b)
            for (int o = 0; o < O; ++o)
              b_node->grad[static_cast<std::size_t>(o)] += g[static_cast<std::size_t>(b) * O + o];
        }
      });
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool", "input");
  const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const double inv = 1.0 / (static_cast<double>(H) * W);
  const double* x = input.values().data();
  std::vector<double> out(static_cast<std::size_t>(B) * C);
  for (int nc = 0; nc < B * C; ++nc) {
    const double* xc = x + static_cast<std::size_t>(nc) * H * W;
    double s = 0.0;
    for (int i = 0; i < H * W; ++i) s += xc[i];
    out[static_cast<std::size_t>(nc)] = s * inv;
  }
  Tensor tin = input;
  return detail::make_result({B, C}, std::move(out), "global_avg_pool", {input},
                             [tin, inv](const detail::Node& self) {
                               if (!tin.requires_grad()) return;
                               const int H = tin.dim(2), W = tin.dim(3);
                               detail::Node* in_node = tin.node();
                               in_node->ensure_grad();
                               const int BC = tin.dim(0) * tin.dim(1);
                               for (int nc = 0; nc < BC; ++nc) {
                                 const double gv = self.grad[static_cast<std::size_t>(nc)] * inv;
                                 double* dxc =
                                     in_node->grad.data() + static_cast<std::size_t>(nc) * H * W;
                                 for (int i = 0; i < H * W; ++i) dxc[i] += gv;
                               }
                             });
}

Tensor channel_affine(const Tensor& input, const Tensor& gamma, const Tensor& beta) {
  require_rank(input, 4, "channel_affine", "input");
  const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  TDN_REQUIRE(gamma.rank() == 1 && gamma.dim(0) == C, "channel_affine: gamma shape ",
              shape_str(gamma.shape()), " does not match channels ", C);
  TDN_REQUIRE(beta.rank() == 1 && beta.dim(0) == C, "channel_affine: beta shape ",
              shape_str(beta.shape()), " does not match channels ", C);
  const double* x = input.values().data();
  const double* gm = gamma.values().data();
  const double* bt = beta.values().data();
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  std::vector<double> out(static_cast<std::size_t>(B) * C * hw);
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c) {
      const double* xc = x + (static_cast<std::size_t>(n) * C + c) * hw;
      double* oc = out.data() + (static_cast<std::size_t>(n) * C + c) * hw;
      const double gv = gm[c], bv = bt[c];
      for (std::int64_t i = 0; i < hw; ++i) oc[i] = xc[i] * gv + bv;
    }
  Tensor tin = input, tg = gamma, tb = beta;
  return detail::make_result(
      {B, C, H, W}, std::move(out), "channel_affine", {input, gamma, beta},
      [tin, tg, tb](const detail::Node& self) {
        const int B = tin.dim(0), C = tin.dim(1);
        const std::int64_t hw = static_cast<std::int64_t>(tin.dim(2)) * tin.dim(3);
        const double* g = self.grad.data();
        const double* x = tin.values().data();
        const double* gm = tg.values().data();
        if (tin.requires_grad()) {
          detail::Node* in_node = tin.node();
          in_node->ensure_grad();
          for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c) {
              const double gv = gm[c];
              const double* gc = g + (static_cast<std::size_t>(n) * C + c) * hw;
              double* dxc = in_node->grad.data() + (static_cast<std::size_t>(n) * C + c) * hw;
              for (std::int64_t i = 0; i < hw; ++i) dxc[i] += gv * gc[i];
            }
        }
        if (tg.requires_grad()) {
          detail::Node* g_node = tg.node();
          g_node->ensure_grad();
          for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c) {
              const double* gc = g + (static_cast<std::size_t>(n) * C + c) * hw;
              const double* xc = x + (static_cast<std::size_t>(n) * C + c) * hw;
              double s = 0.0;
              for (std::int64_t i = 0; i < hw; ++i) s += gc[i] * xc[i];
              g_node->grad[static_cast<std::size_t>(c)] += s;
            }
        }
        if (tb.requires_grad()) {
          detail::Node* b_node = tb.node();
          b_node->ensure_grad();
          for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c) {
              const double* gc = g + (static_cast<std::size_t>(n) * C + c) * hw;
              double s = 0.0;
              for (std::int64_t i = 0; i < hw; ++i) s += gc[i];
              b_node->grad[static_cast<std::size_t>(c)] += s;
            }
        }
      });
}

Tensor scale_channels(const Tensor& input, const Tensor& s) {
  require_rank(input, 4, "scale_channels", "input");
  require_rank(s, 2, "scale_channels", "scale");
  const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  TDN_REQUIRE(s.dim(0) == B && s.dim(1) == C, "scale_channels: scale shape ", shape_str(s.shape()),
              " does not match [", B, ",", C, "]");
  const double* x = input.values().data();
  const double* sv = s.values().data();
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  std::vector<double> out(static_cast<std::size_t>(B) * C * hw);
  for (int nc = 0; nc < B * C; ++nc) {
    const double* xc = x + static_cast<std::size_t>(nc) * hw;
    double* oc = out.data() + static_cast<std::size_t>(nc) * hw;
    const double g = sv[nc];
    for (std::int64_t i = 0; i < hw; ++i) oc[i] = xc[i] * g;
  }
  Tensor tin = input, ts = s;
  return detail::make_result(
      {B, C, H, W}, std::move(out), "scale_channels", {input, s},
      [tin, ts](const detail::Node& self) {
        const int BC = tin.dim(0) * tin.dim(1);
        const std::int64_t hw = static_cast<std::int64_t>(tin.dim(2)) * tin.dim(3);
        const double* g = self.grad.data();
        const double* x = tin.values().data();
        const double* sv = ts.values().data();
        if (tin.requires_grad()) {
          detail::Node* in_node = tin.node();
          in_node->ensure_grad();
          for (int nc = 0; nc < BC; ++nc) {
            const double svc = sv[nc];
            const double* gc = g + static_cast<std::size_t>(nc) * hw;
            double* dxc = in_node->grad.data() + static_cast<std::size_t>(nc) * hw;
            for (std::int64_t i = 0; i < hw; ++i) dxc[i] += svc * gc[i];
          }
        }
        if (ts.requires_grad()) {
          detail::Node* s_node = ts.node();
          s_node->ensure_grad();
          for (int nc = 0; nc < BC; ++nc) {
            const double* gc = g + static_cast<std::size_t>(nc) * hw;
            const double* xc = x + static_cast<std::size_t>(nc) * hw;
            double acc = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) acc += gc[i] * xc[i];
            s_node->grad[static_cast<std::size_t>(nc)] += acc;
          }
        }
      });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const int B = logits.dim(0), K = logits.dim(1);
  TDN_REQUIRE(static_cast<int>(labels.size()) == B, "softmax_cross_entropy: ", labels.size(),
              " labels for batch of ", B);
  for (int b = 0; b < B; ++b)
    TDN_REQUIRE(labels[static_cast<std::size_t>(b)] >= 0 && labels[static_cast<std::size_t>(b)] < K,
                "softmax_cross_entropy: label ", labels[static_cast<std::size_t>(b)],
                " out of range [0,", K, ") at batch index ", b);

  const double* x = logits.values().data();
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B) * K);
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    const double* xr = x + static_cast<std::size_t>(b) * K;
    double mx = xr[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, xr[k]);
    double denom = 0.0;
    for (int k = 0; k < K; ++k) denom += std::exp(xr[k] - mx);
    const double log_denom = std::log(denom);
    double* pr = probs->data() + static_cast<std::size_t>(b) * K;
    for (int k = 0; k < K; ++k) pr[k] = std::exp(xr[k] - mx) / denom;
    loss += -(xr[labels[static_cast<std::size_t>(b)]] - mx - log_denom);
  }
  loss /= B;

  Tensor tl = logits;
  auto labels_s = std::make_shared<std::vector<int>>(labels);
  return detail::make_result(
      {1}, {loss}, "softmax_cross_entropy", {logits},
      [tl, probs, labels_s](const detail::Node& self) {
        if (!tl.requires_grad()) return;
        const int B = tl.dim(0), K = tl.dim(1);
        detail::Node* l_node = tl.node();
        l_node->ensure_grad();
        const double g = self.grad[0] / B;
        for (int b = 0; b < B; ++b) {
          const double* pr = probs->data() + static_cast<std::size_t>(b) * K;
          double* dl = l_node->grad.data() + static_cast<std::size_t>(b) * K;
          const int y = (*labels_s)[static_cast<std::size_t>(b)];
          for (int k = 0; k < K; ++k) dl[k] += g * (pr[k] - (k == y ? 1.0 : 0.0));
        }
      });
}

Tensor stack_segments(const std::vector<Tensor>& segments) {
  TDN_REQUIRE(!segments.empty(), "stack_segments: empty segment list");
  const Shape& s0 = segments[0].shape();
  TDN_REQUIRE(s0.size() == 4, "stack_segments: segments must be [B,C,H,W], got ", shape_str(s0));
  for (const auto& s : segments)
    TDN_REQUIRE(same_shape(s.shape(), s0), "stack_segments: mismatched segment shapes ",
                shape_str(s.shape()), " vs ", shape_str(s0));
  const int T = static_cast<int>(segments.size());
  const int B = s0[0], C = s0[1], H = s0[2], W = s0[3];
  const std::int64_t chw = static_cast<std::int64_t>(C) * H * W;
  std::vector<double> out(static_cast<std::size_t>(B) * T * chw);
  for (int t = 0; t < T; ++t) {
    const double* x = segments[static_cast<std::size_t>(t)].values().data();
    for (int b = 0; b < B; ++b)
      std::memcpy(out.data() + (static_cast<std::size_t>(b) * T + t) * chw,
                  x + static_cast<std::size_t>(b) * chw, sizeof(double) * static_cast<std::size_t>(chw));
  }
  auto segs = segments;
  return detail::make_result(
      {B, T, C, H, W}, std::move(out), "stack_segments", segments,
      [segs, chw](const detail::Node& self) {
        const int B = self.shape[0], T = self.shape[1];
        for (int t = 0; t < T; ++t) {
          const Tensor& seg = segs[static_cast<std::size_t>(t)];
          if (!seg.requires_grad()) continue;
          detail::Node* n = seg.node();
          n->ensure_grad();
          for (int b = 0; b < B; ++b) {
            const double* g = self.grad.data() + (static_cast<std::size_t>(b) * T + t) * chw;
            double* d = n->grad.data() + static_cast<std::size_t>(b) * chw;
            for (std::int64_t i = 0; i < chw; ++i) d[i] += g[i];
          }
        }
      });
}

Tensor slice_segment(const Tensor& input, int t) {
  require_rank(input, 5, "slice_segment", "input");
  const int B = input.dim(0), T = input.dim(1), C = input.dim(2), H = input.dim(3),
            W = input.dim(4);
  TDN_REQUIRE(t >= 0 && t < T, "slice_segment: segment index ", t, " out of range [0,", T, ")");
  const std::int64_t chw = static_cast<std::int64_t>(C) * H * W;
  const double* x = input.values().data();
  std::vector<double> out(static_cast<std::size_t>(B) * chw);
  for (int b = 0; b < B; ++b)
    std::memcpy(out.data() + static_cast<std::size_t>(b) * chw,
                x + (static_cast<std::size_t>(b) * T + t) * chw,
                sizeof(double) * static_cast<std::size_t>(chw));
  Tensor tin = input;
  return detail::make_result({B, C, H, W}, std::move(out), "slice_segment", {input},
                             [tin, t, chw](const detail::Node& self) {
                               if (!tin.requires_grad()) return;
                               const int B = self.shape[0];
                               const int T = tin.dim(1);
                               detail::Node* n = tin.node();
                               n->ensure_grad();
                               for (int b = 0; b < B; ++b) {
                                 const double* g = self.grad.data() + static_cast<std::size_t>(b) * chw;
                                 double* d = n->grad.data() + (static_cast<std::size_t>(b) * T + t) * chw;
                                 for (std::int64_t i = 0; i < chw; ++i) d[i] += g[i];
                               }
                             });
}

}  // namespace tdn
