#pragma once

// Naive reference implementations used as independent oracles. These are
// deliberately written as plain nested loops over separate buffers; they
// share no code with the production kernels they check.

#include <vector>

namespace oracle {

struct Grid4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;
  double at(int ni, int ci, int y, int x) const {
    return v[((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x];
  }
  double& at(int ni, int ci, int y, int x) {
    return v[((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x];
  }
};

Grid4 make_grid(int n, int c, int h, int w);

Grid4 conv2d(const Grid4& x, const Grid4& w, const std::vector<double>& bias, int stride,
             int padding, int groups);
Grid4 avg_pool2d(const Grid4& x, int k, int stride);
Grid4 bilinear_upsample(const Grid4& x, int oh, int ow);
// x as [n*t, c, h, w] with t known; weight [c][kt].
Grid4 temporal_conv(const Grid4& x, int t, const std::vector<std::vector<double>>& weight);
std::vector<double> linear(const std::vector<double>& x, int b, int f,
                           const std::vector<double>& w, int o, const std::vector<double>& bias);
std::vector<double> global_avg_pool(const Grid4& x);

}  // namespace oracle
