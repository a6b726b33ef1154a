#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tdn/flops.hpp"
#include "tdn/model.hpp"
#include "tdn/video.hpp"

namespace tdn {

struct TrainConfig {
  std::string data_dir;
  ModelSpec spec;
  std::string out_dir;  // empty: write nothing
  int epochs = 20;
  int batch = 16;
  double lr = 0.05;
  double momentum = 0.9;
  std::vector<int> decay_epochs = {15};
  double decay_factor = 0.1;
  std::uint64_t seed = 1;
  bool shuffle_frames = false;  // control that destroys temporal order
  bool quiet = false;
};

struct EpochRow {
  int epoch = 0;
  double train_loss = 0;
  double train_top1 = 0;
  double val_top1 = 0;
  double val_top5 = 0;
};

struct RunMetrics {
  std::vector<EpochRow> rows;
  double wall_seconds = 0;  // measured; reported via run.json/stdout only
  FlopReport flops;
  std::string config_hash;

  double final_val_top1() const { return rows.empty() ? 0.0 : rows.back().val_top1; }
};

// Serialized per-epoch metrics. The `seconds` column is written as 0.000:
// identical (seed, config) runs must produce byte-identical CSVs, so wall
// time stays out of this file (it is reported in run.json and on stdout).
std::string metrics_csv(const RunMetrics& metrics);

std::string config_hash(const TrainConfig& cfg);

// Deterministic SGD training. Writes metrics.csv and model.ckpt into
// cfg.out_dir when set. Aborts with the step index and the first parameter
// whose gradient went non-finite if the loss leaves the reals.
RunMetrics train(const TrainConfig& cfg);

struct EvalResult {
  double top1 = 0;
  double top5 = 0;
};

// Center 1-clip protocol; `clips` > 1 averages logits over evenly spaced
// in-segment offsets.
EvalResult evaluate(const TdnModel& model, const std::vector<VideoSource>& videos,
                    const std::vector<int>& labels, int batch = 16, int clips = 1);
EvalResult evaluate_dataset(const TdnModel& model, const std::string& data_dir, int batch = 16,
                            int clips = 1);

// Ablation grid. Row names follow the study tables; unknown names raise an
// error that lists the valid set.
std::vector<std::string> ablation_row_names();

struct AblationResult {
  std::string row;
  std::vector<double> seed_top1;  // final val top-1 per seed
  double median_top1 = 0;
  std::string checkpoint;  // first seed's checkpoint path
};

struct GridConfig {
  std::string data_dir;
  ModelSpec spec;
  std::string out_dir;
  std::vector<std::string> rows;
  int seeds = 3;
  std::uint64_t base_seed = 1;
  int epochs = 20;
  int batch = 16;
  double lr = 0.05;
  double momentum = 0.9;
  std::vector<int> decay_epochs = {15};
  double decay_factor = 0.1;
  bool quiet = false;
};

// Applies a named ablation row to (spec, shuffle flag). Exposed for tests.
void apply_ablation_row(const std::string& row, ModelSpec* spec, bool* shuffle_frames);

std::vector<AblationResult> run_ablation_grid(const GridConfig& cfg);
std::string grid_csv(const std::vector<AblationResult>& results);

}  // namespace tdn
