#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdn/model.hpp"

namespace tdn {

struct LayerFlops {
  std::string name;
  std::string desc;        // kernel / extent summary
  std::int64_t macs = 0;   // multiply-adds, summed over segments
  std::int64_t elem = 0;   // elementwise ops at 1 op/element
};

// Analytic cost model. MAC totals cover conv/linear layers (k*k*Cin/groups
// multiply-adds per output position); elementwise ops are tallied separately
// and excluded from the ratio, matching how the tables headline FLOPs.
struct FlopReport {
  std::vector<LayerFlops> layers;  // TDN variant, forward order
  std::int64_t tdn_macs = 0;
  std::int64_t baseline_macs = 0;
  std::int64_t tdn_elem = 0;
  std::int64_t baseline_elem = 0;
  int segments = 0;
  int input_size = 0;

  double ratio() const {
    return baseline_macs > 0 ? static_cast<double>(tdn_macs) / static_cast<double>(baseline_macs)
                             : 0.0;
  }
};

FlopReport count_flops(const ModelSpec& spec, int input_size, int segments);

std::string format_flop_table(const FlopReport& report);
std::string flop_report_csv(const FlopReport& report);

}  // namespace tdn
