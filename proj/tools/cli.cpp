#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "tdn/flops.hpp"
#include "tdn/gradcam.hpp"
#include "tdn/gradcheck.hpp"
#include "tdn/model.hpp"
#include "tdn/params.hpp"
#include "tdn/synth.hpp"
#include "tdn/train.hpp"
#include "tdn/util.hpp"
#include "tdn/video.hpp"

namespace tdn {

namespace {

using nlohmann::json;

int env_threads() {
  const char* v = std::getenv("TDN_THREADS");
  if (!v) return 1;
  const int n = std::atoi(v);
  return n >= 1 ? n : 1;
}

void write_run_json(const std::string& out_dir, const json& j) {
  if (out_dir.empty()) return;
  std::filesystem::create_directories(out_dir);
  write_file(out_dir + "/run.json", j.dump(2) + "\n");
}

struct CommonModelArgs {
  std::string spec_path;
  int frames_override = 0;

  ModelSpec load() const {
    ModelSpec spec = parse_model_spec_file(spec_path);
    if (frames_override > 0) spec.segments = frames_override;
    validate_model_spec(spec);
    return spec;
  }
};

void add_spec_options(CLI::App* cmd, CommonModelArgs* args) {
  cmd->add_option("--spec", args->spec_path, "model spec file")->required();
  cmd->add_option("-T,--frames", args->frames_override,
                  "override the spec's segment count T");
}

struct CliState {
  // synth
  std::string synth_out;
  int synth_classes = 8, synth_videos = 256, synth_val = 128, synth_frames = 24;
  int synth_size = 32, synth_sprite = 8, synth_distractors = 2;
  double synth_magnitude = 2.0;
  std::uint64_t synth_seed = 1;

  // train
  CommonModelArgs train_spec;
  std::string train_data, train_out, train_row;
  int train_epochs = 20, train_batch = 16;
  double train_lr = 0.05, train_momentum = 0.9, train_decay_factor = 0.1;
  std::vector<int> train_decay_epochs = {15};
  std::uint64_t train_seed = 1;
  bool train_shuffle_frames = false;
  bool train_quiet = false;

  // eval
  CommonModelArgs eval_spec;
  std::string eval_data, eval_ckpt, eval_out;
  int eval_clips = 1, eval_batch = 16;

  // grid
  CommonModelArgs grid_spec;
  std::string grid_data, grid_out;
  std::vector<std::string> grid_rows;
  int grid_seeds = 3, grid_epochs = 20, grid_batch = 16;
  double grid_lr = 0.05, grid_momentum = 0.9, grid_decay_factor = 0.1;
  std::vector<int> grid_decay_epochs = {15};
  std::uint64_t grid_seed = 1;
  bool grid_quiet = false;

  // flops
  CommonModelArgs flops_spec;
  int flops_size = 0;
  std::string flops_out;

  // gradcheck
  CommonModelArgs gc_spec;
  std::uint64_t gc_seed = 1;
  std::int64_t gc_samples = 16;
  double gc_h = 1e-4, gc_tol = 1e-4;

  // cam
  CommonModelArgs cam_spec;
  std::string cam_data, cam_ckpt, cam_out, cam_layer;
  int cam_class = -1, cam_index = 0, cam_count = 1;

  // inspect
  std::string inspect_ckpt;
};

std::unique_ptr<CLI::App> make_app(CliState& st) {
  auto app = std::make_unique<CLI::App>(
      "tdn: two-level temporal difference video models, desk scale");
  app->require_subcommand(1);
  app->set_config("--config", "", "read defaults from a config file (flags override)");
  app->footer("environment: TDN_THREADS caps worker parallelism (default 1).");

  CLI::App* synth = app->add_subcommand("synth", "generate the synthetic motion dataset");
  synth->add_option("--out", st.synth_out, "output dataset directory")->required();
  synth->add_option("--classes", st.synth_classes, "number of motion classes (1..8)");
  synth->add_option("--videos", st.synth_videos, "training videos (multiple of classes)");
  synth->add_option("--val-videos", st.synth_val, "validation videos (multiple of classes)");
  synth->add_option("--video-frames", st.synth_frames, "frames per video");
  synth->add_option("--size", st.synth_size, "square frame extent");
  synth->add_option("--sprite", st.synth_sprite, "sprite extent");
  synth->add_option("--distractors", st.synth_distractors, "static distractor patches per video");
  synth->add_option("--magnitude", st.synth_magnitude, "sprite speed, pixels per frame");
  synth->add_option("--seed", st.synth_seed, "generator seed");

  CLI::App* train_cmd = app->add_subcommand("train", "train a model on a dataset");
  add_spec_options(train_cmd, &st.train_spec);
  train_cmd->add_option("--data", st.train_data, "dataset directory")->required();
  train_cmd->add_option("--out", st.train_out, "run output directory")->required();
  train_cmd->add_option("--epochs", st.train_epochs, "training epochs");
  train_cmd->add_option("--batch", st.train_batch, "batch size");
  train_cmd->add_option("--lr", st.train_lr, "initial learning rate");
  train_cmd->add_option("--momentum", st.train_momentum, "SGD momentum");
  train_cmd->add_option("--decay-epochs", st.train_decay_epochs, "epochs at which lr decays");
  train_cmd->add_option("--decay-factor", st.train_decay_factor, "lr decay factor");
  train_cmd->add_option("--seed", st.train_seed, "run seed");
  train_cmd->add_option("--row", st.train_row, "apply a named ablation row to the spec");
  train_cmd->add_flag("--shuffle-frames", st.train_shuffle_frames,
                      "shuffle each video's frame order (temporal-signal control)");
  train_cmd->add_flag("--quiet", st.train_quiet, "suppress per-epoch progress");

  CLI::App* eval_cmd = app->add_subcommand("eval", "evaluate a checkpoint (center 1-clip)");
  add_spec_options(eval_cmd, &st.eval_spec);
  eval_cmd->add_option("--data", st.eval_data, "dataset directory")->required();
  eval_cmd->add_option("--checkpoint", st.eval_ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--out", st.eval_out, "optional run output directory");
  eval_cmd->add_option("--clips", st.eval_clips, "clips per video (deterministic offsets)");
  eval_cmd->add_option("--batch", st.eval_batch, "evaluation batch size");

  CLI::App* grid_cmd = app->add_subcommand("grid", "run the ablation grid");
  add_spec_options(grid_cmd, &st.grid_spec);
  grid_cmd->add_option("--data", st.grid_data, "dataset directory")->required();
  grid_cmd->add_option("--out", st.grid_out, "grid output directory")->required();
  grid_cmd->add_option("--rows", st.grid_rows, "ablation rows to run")->delimiter(',');
  grid_cmd->add_option("--seeds", st.grid_seeds, "seeds per row (median reported)");
  grid_cmd->add_option("--epochs", st.grid_epochs, "training epochs per run");
  grid_cmd->add_option("--batch", st.grid_batch, "batch size");
  grid_cmd->add_option("--lr", st.grid_lr, "initial learning rate");
  grid_cmd->add_option("--momentum", st.grid_momentum, "SGD momentum");
  grid_cmd->add_option("--decay-epochs", st.grid_decay_epochs, "epochs at which lr decays");
  grid_cmd->add_option("--decay-factor", st.grid_decay_factor, "lr decay factor");
  grid_cmd->add_option("--seed", st.grid_seed, "base seed (seed+i per extra seed)");
  grid_cmd->add_flag("--quiet", st.grid_quiet, "suppress per-epoch progress");

  CLI::App* flops_cmd = app->add_subcommand("flops", "analytic FLOP report for a spec");
  add_spec_options(flops_cmd, &st.flops_spec);
  flops_cmd->add_option("--size", st.flops_size, "input extent (default: spec input_size)");
  flops_cmd->add_option("--out", st.flops_out, "also write the report CSV here");

  CLI::App* gc_cmd = app->add_subcommand("gradcheck",
                                         "finite-difference check of every parameter tensor");
  add_spec_options(gc_cmd, &st.gc_spec);
  gc_cmd->add_option("--seed", st.gc_seed, "check seed");
  gc_cmd->add_option("--samples", st.gc_samples, "elements sampled per tensor (0 = all)");
  gc_cmd->add_option("--step", st.gc_h, "finite-difference step h");
  gc_cmd->add_option("--tol", st.gc_tol, "relative-error tolerance");

  CLI::App* cam_cmd = app->add_subcommand("cam", "Grad-CAM heatmaps for validation clips");
  add_spec_options(cam_cmd, &st.cam_spec);
  cam_cmd->add_option("--data", st.cam_data, "dataset directory")->required();
  cam_cmd->add_option("--checkpoint", st.cam_ckpt, "model checkpoint")->required();
  cam_cmd->add_option("--out", st.cam_out, "heatmap output directory")->required();
  cam_cmd->add_option("--layer", st.cam_layer, "target conv layer (default: last conv)");
  cam_cmd->add_option("--class", st.cam_class, "target class (default: clip label)");
  cam_cmd->add_option("--clip-index", st.cam_index, "first validation clip index");
  cam_cmd->add_option("--count", st.cam_count, "number of clips to process");

  CLI::App* inspect_cmd = app->add_subcommand("inspect", "list a checkpoint's entries");
  inspect_cmd->add_option("--checkpoint", st.inspect_ckpt, "model checkpoint")->required();

  return app;
}

int dispatch(const CLI::App& app, CliState& st) {
  if (app.got_subcommand("synth")) {
    SynthTaskSpec spec;
    spec.num_classes = st.synth_classes;
    spec.image_size = st.synth_size;
    spec.sprite_size = st.synth_sprite;
    spec.distractors = st.synth_distractors;
    spec.magnitude = st.synth_magnitude;
    spec.seed = st.synth_seed;
    generate_synth_dataset(spec, st.synth_videos, st.synth_val, st.synth_frames, st.synth_out,
                           env_threads());
    json j = {{"command", "synth"},           {"out", st.synth_out},
              {"classes", st.synth_classes},  {"videos", st.synth_videos},
              {"val_videos", st.synth_val},   {"video_frames", st.synth_frames},
              {"size", st.synth_size},        {"sprite", st.synth_sprite},
              {"distractors", st.synth_distractors}, {"magnitude", st.synth_magnitude},
              {"seed", st.synth_seed}};
    write_run_json(st.synth_out, j);
    std::cout << "dataset written to " << st.synth_out << " (" << st.synth_videos << " train, "
              << st.synth_val << " val)\n";
    return 0;
  }

  if (app.got_subcommand("train")) {
    TrainConfig cfg;
    cfg.data_dir = st.train_data;
    cfg.spec = st.train_spec.load();
    if (!st.train_row.empty()) apply_ablation_row(st.train_row, &cfg.spec, &cfg.shuffle_frames);
    if (st.train_shuffle_frames) cfg.shuffle_frames = true;
    cfg.out_dir = st.train_out;
    cfg.epochs = st.train_epochs;
    cfg.batch = st.train_batch;
    cfg.lr = st.train_lr;
    cfg.momentum = st.train_momentum;
    cfg.decay_epochs = st.train_decay_epochs;
    cfg.decay_factor = st.train_decay_factor;
    cfg.seed = st.train_seed;
    cfg.quiet = st.train_quiet;
    RunMetrics m = train(cfg);
    json j = {{"command", "train"},
              {"data", cfg.data_dir},
              {"spec_file", st.train_spec.spec_path},
              {"spec_text", read_file(st.train_spec.spec_path)},
              {"row", st.train_row},
              {"frames_override", st.train_spec.frames_override},
              {"epochs", cfg.epochs},
              {"batch", cfg.batch},
              {"lr", cfg.lr},
              {"momentum", cfg.momentum},
              {"decay_epochs", cfg.decay_epochs},
              {"decay_factor", cfg.decay_factor},
              {"seed", cfg.seed},
              {"shuffle_frames", cfg.shuffle_frames},
              {"config_hash", m.config_hash},
              {"wall_seconds", m.wall_seconds}};
    write_run_json(cfg.out_dir, j);
    std::cout << "final val top1=" << format_double(m.final_val_top1(), 2) << "% ("
              << format_double(m.wall_seconds, 1) << " s); outputs in " << cfg.out_dir << "\n";
    return 0;
  }

  if (app.got_subcommand("eval")) {
    ModelSpec spec = st.eval_spec.load();
    TdnModel model = load_model(st.eval_ckpt, spec);
    EvalResult r = evaluate_dataset(model, st.eval_data, st.eval_batch, st.eval_clips);
    std::cout << "top1=" << format_double(r.top1, 2) << " top5=" << format_double(r.top5, 2)
              << "\n";
    if (!st.eval_out.empty()) {
      json j = {{"command", "eval"},        {"data", st.eval_data},
                {"spec_file", st.eval_spec.spec_path}, {"checkpoint", st.eval_ckpt},
                {"clips", st.eval_clips},   {"top1", r.top1},
                {"top5", r.top5}};
      write_run_json(st.eval_out, j);
    }
    return 0;
  }

  if (app.got_subcommand("grid")) {
    GridConfig cfg;
    cfg.data_dir = st.grid_data;
    cfg.spec = st.grid_spec.load();
    cfg.out_dir = st.grid_out;
    cfg.rows = st.grid_rows.empty()
                   ? std::vector<std::string>{"diff_diff", "concat_diff", "diff_avg", "concat_avg"}
                   : st.grid_rows;
    cfg.seeds = st.grid_seeds;
    cfg.base_seed = st.grid_seed;
    cfg.epochs = st.grid_epochs;
    cfg.batch = st.grid_batch;
    cfg.lr = st.grid_lr;
    cfg.momentum = st.grid_momentum;
    cfg.decay_epochs = st.grid_decay_epochs;
    cfg.decay_factor = st.grid_decay_factor;
    cfg.quiet = st.grid_quiet;
    std::vector<AblationResult> results = run_ablation_grid(cfg);
    json j = {{"command", "grid"},
              {"data", cfg.data_dir},
              {"spec_file", st.grid_spec.spec_path},
              {"spec_text", read_file(st.grid_spec.spec_path)},
              {"rows", cfg.rows},
              {"seeds", cfg.seeds},
              {"seed", cfg.base_seed},
              {"epochs", cfg.epochs},
              {"batch", cfg.batch},
              {"lr", cfg.lr},
              {"momentum", cfg.momentum},
              {"decay_epochs", cfg.decay_epochs},
              {"decay_factor", cfg.decay_factor}};
    write_run_json(cfg.out_dir, j);
    std::cout << grid_csv(results);
    return 0;
  }

  if (app.got_subcommand("flops")) {
    ModelSpec spec = st.flops_spec.load();
    const int size = st.flops_size > 0 ? st.flops_size : spec.input_size;
    FlopReport report = count_flops(spec, size, spec.segments);
    std::cout << format_flop_table(report);
    if (!st.flops_out.empty()) write_file(st.flops_out, flop_report_csv(report));
    return 0;
  }

  if (app.got_subcommand("gradcheck")) {
    ModelSpec spec = st.gc_spec.load();
    GradCheckReport report = gradcheck_model(spec, st.gc_seed, st.gc_samples, st.gc_h, st.gc_tol);
    std::cout << format_gradcheck_table(report);
    return report.pass ? 0 : 1;
  }

  if (app.got_subcommand("cam")) {
    ModelSpec spec = st.cam_spec.load();
    TdnModel model = load_model(st.cam_ckpt, spec);
    Dataset ds = load_dataset(st.cam_data);
    TDN_REQUIRE(st.cam_index >= 0 && st.cam_index < static_cast<int>(ds.val.size()),
                "clip index ", st.cam_index, " outside the validation split (",
                ds.val.size(), " clips)");
    const int end = std::min<int>(st.cam_index + std::max(1, st.cam_count),
                                  static_cast<int>(ds.val.size()));
    const std::string layer = st.cam_layer.empty() ? model.default_cam_layer() : st.cam_layer;
    for (int i = st.cam_index; i < end; ++i) {
      const DatasetEntry& entry = ds.val[static_cast<std::size_t>(i)];
      ClipFile cf = read_clip(ds.root + "/" + entry.path);
      VideoSource video = video_from_clip(cf);
      ClipBatch clip = make_clip_batch({&video}, {entry.label}, spec.segments, SampleMode::Center,
                                       nullptr);
      const int target = st.cam_class >= 0 ? st.cam_class : entry.label;
      CamMap cam = grad_cam(model, clip, layer, target);
      std::string stem = std::filesystem::path(entry.path).stem().string();
      write_cam_files(st.cam_out, stem, cam, clip);
      std::cout << "wrote CAM for " << entry.path << " (layer " << layer << ", class " << target
                << ")\n";
    }
    json j = {{"command", "cam"},       {"data", st.cam_data},
              {"spec_file", st.cam_spec.spec_path}, {"checkpoint", st.cam_ckpt},
              {"layer", layer},         {"class", st.cam_class},
              {"clip_index", st.cam_index}, {"count", st.cam_count}};
    write_run_json(st.cam_out, j);
    return 0;
  }

  if (app.got_subcommand("inspect")) {
    auto entries = load_checkpoint(st.inspect_ckpt);
    std::int64_t total = 0;
    for (const auto& [name, t] : entries) {
      double mn = 0, mx = 0, mean = 0;
      auto v = t.values();
      if (!v.empty()) {
        mn = mx = v[0];
        for (double x : v) {
          mn = std::min(mn, x);
          mx = std::max(mx, x);
          mean += x;
        }
        mean /= static_cast<double>(v.size());
      }
      total += t.size();
      std::cout << name << " " << shape_str(t.shape()) << " n=" << t.size()
                << " min=" << format_double(mn, 4) << " max=" << format_double(mx, 4)
                << " mean=" << format_double(mean, 4) << "\n";
    }
    std::cout << entries.size() << " tensors, " << total << " parameters\n";
    return 0;
  }

  fail("no subcommand selected");
}

}  // namespace

std::string cli_help_text() {
  CliState st;
  auto app = make_app(st);
  std::string out = app->help("", CLI::AppFormatMode::All);
  return out;
}

int run_cli(int argc, const char* const* argv) {
  CliState st;
  auto app = make_app(st);
  try {
    app->parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app->exit(e);
  }
  try {
    return dispatch(*app, st);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace tdn
