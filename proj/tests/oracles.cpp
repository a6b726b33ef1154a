#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace oracle {

Grid4 make_grid(int n, int c, int h, int w) {
  Grid4 g;
  g.n = n;
  g.c = c;
  g.h = h;
  g.w = w;
  g.v.assign(static_cast<std::size_t>(n) * c * h * w, 0.0);
  return g;
}

Grid4 conv2d(const Grid4& x, const Grid4& w, const std::vector<double>& bias, int stride,
             int padding, int groups) {
  const int cg = x.c / groups;
  const int cog = w.n / groups;
  const int ho = (x.h + 2 * padding - w.h) / stride + 1;
  const int wo = (x.w + 2 * padding - w.w) / stride + 1;
  Grid4 out = make_grid(x.n, w.n, ho, wo);
  for (int n = 0; n < x.n; ++n)
    for (int co = 0; co < w.n; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(co)];
          const int g = co / cog;
          for (int cl = 0; cl < cg; ++cl)
            for (int ky = 0; ky < w.h; ++ky)
              for (int kx = 0; kx < w.w; ++kx) {
                const int iy = oy * stride + ky - padding;
                const int ix = ox * stride + kx - padding;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                acc += x.at(n, g * cg + cl, iy, ix) * w.at(co, cl, ky, kx);
              }
          out.at(n, co, oy, ox) = acc;
        }
  return out;
}

Grid4 avg_pool2d(const Grid4& x, int k, int stride) {
  const int ho = (x.h - k) / stride + 1;
  const int wo = (x.w - k) / stride + 1;
  Grid4 out = make_grid(x.n, x.c, ho, wo);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = 0;
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) acc += x.at(n, c, oy * stride + ky, ox * stride + kx);
          out.at(n, c, oy, ox) = acc / (static_cast<double>(k) * k);
        }
  return out;
}

Grid4 bilinear_upsample(const Grid4& x, int oh, int ow) {
  Grid4 out = make_grid(x.n, x.c, oh, ow);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double sy = (oy + 0.5) * (static_cast<double>(x.h) / oh) - 0.5;
          double sx = (ox + 0.5) * (static_cast<double>(x.w) / ow) - 0.5;
          sy = std::max(0.0, sy);
          sx = std::max(0.0, sx);
          int y0 = std::min(static_cast<int>(sy), x.h - 1);
          int x0 = std::min(static_cast<int>(sx), x.w - 1);
          const int y1 = std::min(y0 + 1, x.h - 1);
          const int x1 = std::min(x0 + 1, x.w - 1);
          const double fy = sy - y0, fx = sx - x0;
          out.at(n, c, oy, ox) = (1 - fy) * ((1 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1)) +
                                 fy * ((1 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1));
        }
  return out;
}

Grid4 temporal_conv(const Grid4& x, int t, const std::vector<std::vector<double>>& weight) {
  const int b = x.n / t;
  const int kt = static_cast<int>(weight[0].size());
  const int pad = (kt - 1) / 2;
  Grid4 out = make_grid(x.n, x.c, x.h, x.w);
  for (int ni = 0; ni < b; ++ni)
    for (int ti = 0; ti < t; ++ti)
      for (int c = 0; c < x.c; ++c)
        for (int y = 0; y < x.h; ++y)
          for (int xx = 0; xx < x.w; ++xx) {
            double acc = 0;
            for (int k = 0; k < kt; ++k) {
              const int tau = ti + k - pad;
              if (tau < 0 || tau >= t) continue;
              acc += weight[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] *
                     x.at(ni * t + tau, c, y, xx);
            }
            out.at(ni * t + ti, c, y, xx) = acc;
          }
  return out;
}

std::vector<double> linear(const std::vector<double>& x, int b, int f,
                           const std::vector<double>& w, int o, const std::vector<double>& bias) {
  std::vector<double> out(static_cast<std::size_t>(b) * o, 0.0);
  for (int bi = 0; bi < b; ++bi)
    for (int oi = 0; oi < o; ++oi) {
      double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(oi)];
      for (int fi = 0; fi < f; ++fi)
        acc += x[static_cast<std::size_t>(bi) * f + fi] * w[static_cast<std::size_t>(oi) * f + fi];
      out[static_cast<std::size_t>(bi) * o + oi] = acc;
    }
  return out;
}

std::vector<double> global_avg_pool(const Grid4& x) {
  std::vector<double> out(static_cast<std::size_t>(x.n) * x.c, 0.0);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      double acc = 0;
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) acc += x.at(n, c, y, xx);
      out[static_cast<std::size_t>(n) * x.c + c] = acc / (static_cast<double>(x.h) * x.w);
    }
  return out;
}

}  // namespace oracle
