#include "tdn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>

#include "tdn/nn_ops.hpp"
#include "tdn/util.hpp"

namespace tdn {

namespace {

double top1_hits(const Tensor& logits, const std::vector<int>& labels) {
  const int B = logits.dim(0), K = logits.dim(1);
  const double* v = logits.values().data();
  double hits = 0;
  for (int b = 0; b < B; ++b) {
    const double* row = v + static_cast<std::size_t>(b) * K;
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (row[k] > row[best]) best = k;
    if (best == labels[static_cast<std::size_t>(b)]) hits += 1;
  }
  return hits;
}

int topk_rank(const double* row, int K, int label) {
  int rank = 0;
  for (int k = 0; k < K; ++k) {
    if (row[k] > row[label] || (row[k] == row[label] && k < label)) ++rank;
  }
  return rank;
}

std::string spec_fingerprint(const ModelSpec& s) {
  std::ostringstream os;
  os << s.name << "|" << s.segments << "|" << s.classes << "|" << s.input_size << "|"
     << static_cast<int>(s.block_style) << "|" << s.tconv_kt << "|" << s.ltdm_ratio << "|"
     << s.ltdm_multiscale << "|" << s.ltdm_bidirectional << "|"
     << ltdm_fusion_name(s.ltdm_fusion) << "|" << s.ltdm_avg_baseline << "|"
     << stdm_fusion_name(s.stdm_fusion) << "|" << s.stdm_downsample;
  for (const auto& st : s.stages) {
    os << "|" << st.name << "," << static_cast<int>(st.kind) << "," << st.channels << ","
       << st.stride << "," << st.blocks << "," << st.kernel << "," << st.maxpool << ","
       << static_cast<int>(st.module) << "," << st.ltdm_per_block << "," << st.stdm_width;
  }
  return os.str();
}

}  // namespace

std::string config_hash(const TrainConfig& cfg) {
  std::ostringstream os;
  os << cfg.data_dir << "|" << spec_fingerprint(cfg.spec) << "|" << cfg.epochs << "|" << cfg.batch
     << "|" << cfg.lr << "|" << cfg.momentum << "|" << cfg.decay_factor << "|" << cfg.seed << "|"
     << cfg.shuffle_frames;
  for (int e : cfg.decay_epochs) os << "," << e;
  return to_hex(fnv1a(os.str()));
}

std::string metrics_csv(const RunMetrics& metrics) {
  std::string out = "epoch,train_loss,train_top1,val_top1,val_top5,seconds\n";
  for (const auto& r : metrics.rows) {
    out += std::to_string(r.epoch) + "," + format_double(r.train_loss, 6) + "," +
           format_double(r.train_top1, 4) + "," + format_double(r.val_top1, 4) + "," +
           format_double(r.val_top5, 4) + ",0.000\n";
  }
  return out;
}

namespace {

struct LoadedSplit {
  std::vector<VideoSource> videos;
  std::vector<int> labels;
};

LoadedSplit load_split(const Dataset& ds, const std::vector<DatasetEntry>& entries) {
  LoadedSplit split;
  split.videos = load_videos(ds.root, entries);
  split.labels.reserve(entries.size());
  for (const auto& e : entries) split.labels.push_back(e.label);
  return split;
}

EvalResult evaluate_loaded(const TdnModel& model, const LoadedSplit& split, int batch, int clips) {
  TDN_REQUIRE(!split.videos.empty(), "evaluate: empty split");
  TDN_REQUIRE(clips >= 1, "evaluate: clips must be >= 1");
  const int n = static_cast<int>(split.videos.size());
  const int K = model.spec().classes;
  for (int lab : split.labels)
    TDN_REQUIRE(lab >= 0 && lab < K, "evaluate: label ", lab, " outside model classes [0,", K,
                ")");
  NoGradGuard no_grad;
  double hits1 = 0, hits5 = 0;
  for (int start = 0; start < n; start += batch) {
    const int b = std::min(batch, n - start);
    std::vector<const VideoSource*> vids(static_cast<std::size_t>(b));
    std::vector<int> labels(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
      vids[static_cast<std::size_t>(i)] = &split.videos[static_cast<std::size_t>(start + i)];
      labels[static_cast<std::size_t>(i)] = split.labels[static_cast<std::size_t>(start + i)];
    }
    std::vector<double> avg;
    for (int c = 0; c < clips; ++c) {
      const double offset = (c + 0.5) / clips;
      ClipBatch cb = make_clip_batch(vids, labels, model.spec().segments, SampleMode::Center,
                                     nullptr, offset);
      Tensor logits = model.forward(cb);
      auto lv = logits.values();
      if (avg.empty()) avg.assign(lv.begin(), lv.end());
      else
        for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += lv[i];
    }
    for (int i = 0; i < b; ++i) {
      const double* row = avg.data() + static_cast<std::size_t>(i) * K;
      const int rank = topk_rank(row, K, labels[static_cast<std::size_t>(i)]);
      if (rank < 1) hits1 += 1;
      if (rank < 5) hits5 += 1;
    }
  }
  return {100.0 * hits1 / n, 100.0 * hits5 / n};
}

}  // namespace

EvalResult evaluate(const TdnModel& model, const std::vector<VideoSource>& videos,
                    const std::vector<int>& labels, int batch, int clips) {
  LoadedSplit split;
  split.videos = videos;
  split.labels = labels;
  return evaluate_loaded(model, split, batch, clips);
}

EvalResult evaluate_dataset(const TdnModel& model, const std::string& data_dir, int batch,
                            int clips) {
  Dataset ds = load_dataset(data_dir);
  LoadedSplit val = load_split(ds, ds.val);
  return evaluate_loaded(model, val, batch, clips);
}

RunMetrics train(const TrainConfig& cfg) {
  TDN_REQUIRE(cfg.epochs >= 1, "train: epochs must be >= 1");
  TDN_REQUIRE(cfg.batch >= 1, "train: batch size must be >= 1");
  TDN_REQUIRE(cfg.decay_factor > 0.0 && cfg.decay_factor <= 1.0,
              "train: decay factor must lie in (0,1]");
  const auto t0 = std::chrono::steady_clock::now();

  Dataset ds = load_dataset(cfg.data_dir);
  TDN_REQUIRE(ds.num_classes <= cfg.spec.classes, "train: dataset has ", ds.num_classes,
              " classes but the spec head has only ", cfg.spec.classes);
  LoadedSplit tr = load_split(ds, ds.train);
  LoadedSplit val = load_split(ds, ds.val);
  const int n = static_cast<int>(tr.videos.size());
  const int T = cfg.spec.segments;

  TdnModel model(cfg.spec, derive_seed(cfg.seed, 0xA11));

  RunMetrics metrics;
  metrics.config_hash = config_hash(cfg);
  metrics.flops = count_flops(cfg.spec, cfg.spec.input_size, T);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  // Frame-shuffle control: a fixed per-video permutation of the frame
  // timeline, so the clip's appearance statistics survive but motion does not.
  std::vector<std::vector<int>> frame_perms;
  if (cfg.shuffle_frames) {
    frame_perms.resize(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) {
      auto& p = frame_perms[static_cast<std::size_t>(v)];
      p.resize(static_cast<std::size_t>(tr.videos[static_cast<std::size_t>(v)].frames));
      std::iota(p.begin(), p.end(), 0);
      std::mt19937_64 rng(derive_seed(cfg.seed, 0x5F, static_cast<std::uint64_t>(v)));
      std::shuffle(p.begin(), p.end(), rng);
    }
  }

  int global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.lr;
    for (int de : cfg.decay_epochs)
      if (epoch >= de) lr *= cfg.decay_factor;

    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0xE0, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 sample_rng(derive_seed(cfg.seed, 0xE1, static_cast<std::uint64_t>(epoch)));

    double loss_sum = 0, hit_sum = 0;
    for (int start = 0; start < n; start += cfg.batch, ++global_step) {
      const int b = std::min(cfg.batch, n - start);
      std::vector<const VideoSource*> vids(static_cast<std::size_t>(b));
      std::vector<int> labels(static_cast<std::size_t>(b));
      std::vector<std::vector<int>> perms(static_cast<std::size_t>(b));
      for (int i = 0; i < b; ++i) {
        const int vi = order[static_cast<std::size_t>(start + i)];
        vids[static_cast<std::size_t>(i)] = &tr.videos[static_cast<std::size_t>(vi)];
        labels[static_cast<std::size_t>(i)] = tr.labels[static_cast<std::size_t>(vi)];
        if (cfg.shuffle_frames) perms[static_cast<std::size_t>(i)] = frame_perms[static_cast<std::size_t>(vi)];
      }
      ClipBatch batch = make_clip_batch(vids, labels, T, SampleMode::Random, &sample_rng, 0.5,
                                        cfg.shuffle_frames ? &perms : nullptr);
      Tensor logits = model.forward(batch);
      Tensor loss = softmax_cross_entropy(logits, labels);
      const double loss_v = loss.scalar();
      loss.backward();

      bool loss_bad = !std::isfinite(loss_v);
      std::string bad_param;
      for (const auto& [name, p] : model.params().entries()) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) {
          if (!std::isfinite(g)) {
            bad_param = name;
            break;
          }
        }
        if (!bad_param.empty()) break;
      }
      if (loss_bad || !bad_param.empty()) {
        fail("training aborted at step ", global_step, ": loss=", loss_v,
             ", first non-finite gradient in parameter '",
             bad_param.empty() ? std::string("<none>") : bad_param, "'");
      }

      loss_sum += loss_v * b;
      hit_sum += top1_hits(logits, labels);
      model.params().sgd_step(lr, cfg.momentum);
    }

    EvalResult ev = evaluate_loaded(model, val, cfg.batch, 1);
    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / n;
    row.train_top1 = 100.0 * hit_sum / n;
    row.val_top1 = ev.top1;
    row.val_top5 = ev.top5;
    metrics.rows.push_back(row);
    if (!cfg.quiet) {
      std::cerr << "epoch " << epoch << " lr " << format_double(lr, 4) << " loss "
                << format_double(row.train_loss, 4) << " train " << format_double(row.train_top1, 2)
                << "% val " << format_double(row.val_top1, 2) << "%\n";
    }
  }

  metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    write_file(cfg.out_dir + "/metrics.csv", metrics_csv(metrics));
    save_model(cfg.out_dir + "/model.ckpt", model);
  }
  return metrics;
}

std::vector<std::string> ablation_row_names() {
  return {"diff_diff",      "concat_diff",   "diff_avg",       "concat_avg",
          "baseline",       "s_only",        "l_only",         "shuffle",
          "stdm_attention", "stdm_add_attention", "stdm_channel_attention",
          "stdm_channel_attention_add", "ltdm_plain_add", "ltdm_channel_attention",
          "no_multiscale",  "unidirectional"};
}

void apply_ablation_row(const std::string& row, ModelSpec* spec, bool* shuffle_frames) {
  *shuffle_frames = false;
  auto drop_stdm = [&] {
    for (auto& st : spec->stages)
      if (st.module == Placement::Stdm) st.module = Placement::None;
  };
  auto ltdm_to_tconv = [&] {
    for (auto& st : spec->stages)
      if (st.module == Placement::Ltdm) st.module = Placement::Tconv;
  };
  if (row == "diff_diff") {
    // the full model as configured
  } else if (row == "concat_diff") {
    spec->stdm_fusion = StdmFusion::ConcatBaseline;
  } else if (row == "diff_avg") {
    spec->ltdm_avg_baseline = true;
  } else if (row == "concat_avg") {
    spec->stdm_fusion = StdmFusion::ConcatBaseline;
    spec->ltdm_avg_baseline = true;
  } else if (row == "baseline") {
    drop_stdm();
    ltdm_to_tconv();
  } else if (row == "s_only") {
    ltdm_to_tconv();
  } else if (row == "l_only") {
    drop_stdm();
  } else if (row == "shuffle") {
    *shuffle_frames = true;
  } else if (row == "stdm_attention") {
    spec->stdm_fusion = StdmFusion::Attention;
  } else if (row == "stdm_add_attention") {
    spec->stdm_fusion = StdmFusion::AddPlusAttention;
  } else if (row == "stdm_channel_attention") {
    spec->stdm_fusion = StdmFusion::ChannelAttention;
  } else if (row == "stdm_channel_attention_add") {
    spec->stdm_fusion = StdmFusion::ChannelAttentionPlusAdd;
  } else if (row == "ltdm_plain_add") {
    spec->ltdm_fusion = LtdmFusion::PlainAdd;
  } else if (row == "ltdm_channel_attention") {
    spec->ltdm_fusion = LtdmFusion::ChannelAttention;
  } else if (row == "no_multiscale") {
    spec->ltdm_multiscale = false;
  } else if (row == "unidirectional") {
    spec->ltdm_bidirectional = false;
  } else {
    std::string valid;
    for (const auto& r : ablation_row_names()) valid += (valid.empty() ? "" : ", ") + r;
    fail("unknown ablation row '", row, "' (valid: ", valid, ")");
  }
}

std::vector<AblationResult> run_ablation_grid(const GridConfig& cfg) {
  TDN_REQUIRE(!cfg.rows.empty(), "grid: no rows requested");
  TDN_REQUIRE(cfg.seeds >= 1, "grid: seeds must be >= 1");
  std::vector<AblationResult> results;
  for (const auto& row : cfg.rows) {
    AblationResult res;
    res.row = row;
    for (int s = 0; s < cfg.seeds; ++s) {
      TrainConfig tc;
      tc.data_dir = cfg.data_dir;
      tc.spec = cfg.spec;
      apply_ablation_row(row, &tc.spec, &tc.shuffle_frames);
      tc.epochs = cfg.epochs;
      tc.batch = cfg.batch;
      tc.lr = cfg.lr;
      tc.momentum = cfg.momentum;
      tc.decay_epochs = cfg.decay_epochs;
      tc.decay_factor = cfg.decay_factor;
      tc.seed = cfg.base_seed + static_cast<std::uint64_t>(s);
      tc.quiet = cfg.quiet;
      if (!cfg.out_dir.empty())
        tc.out_dir = cfg.out_dir + "/" + row + "_seed" + std::to_string(s);
      if (!cfg.quiet) std::cerr << "[grid] " << row << " seed " << tc.seed << "\n";
      RunMetrics m = train(tc);
      res.seed_top1.push_back(m.final_val_top1());
      if (s == 0 && !tc.out_dir.empty()) res.checkpoint = tc.out_dir + "/model.ckpt";
    }
    std::vector<double> sorted = res.seed_top1;
    std::sort(sorted.begin(), sorted.end());
    res.median_top1 = sorted[(sorted.size() - 1) / 2];
    results.push_back(std::move(res));
  }
  std::vector<AblationResult> ranked = results;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const AblationResult& a, const AblationResult& b) {
                     return a.median_top1 > b.median_top1;
                   });
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    write_file(cfg.out_dir + "/grid.csv", grid_csv(ranked));
  }
  return results;
}

std::string grid_csv(const std::vector<AblationResult>& results) {
  std::size_t max_seeds = 0;
  for (const auto& r : results) max_seeds = std::max(max_seeds, r.seed_top1.size());
  std::string out = "row,median_top1";
  for (std::size_t s = 0; s < max_seeds; ++s) out += ",seed" + std::to_string(s) + "_top1";
  out += "\n";
  for (const auto& r : results) {
    out += r.row + "," + format_double(r.median_top1, 4);
    for (std::size_t s = 0; s < max_seeds; ++s)
      out += "," + (s < r.seed_top1.size() ? format_double(r.seed_top1[s], 4) : std::string());
    out += "\n";
  }
  return out;
}

}  // namespace tdn
