#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdn/model.hpp"

namespace tdn {

struct GradCheckRow {
  std::string name;
  double max_rel_err = 0;
  std::int64_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  double worst = 0;
  double tol = 0;
  bool pass = false;
};

// Central finite differences against the analytic gradient for every
// parameter tensor of a model built from `spec`, on a random batch of 2
// clips. Parameters are jittered first so structurally-zero init points
// (zero-init branch convs, delta kernels) contribute live gradients.
// `samples_per_tensor` = 0 sweeps every element. A failing element is
// re-measured at h/10 before it counts, which rejects the rare ReLU-kink
// straddle without loosening the tolerance.
GradCheckReport gradcheck_model(const ModelSpec& spec, std::uint64_t seed,
                                std::int64_t samples_per_tensor = 0, double h = 1e-4,
                                double tol = 1e-4);

std::string format_gradcheck_table(const GradCheckReport& report);

}  // namespace tdn
