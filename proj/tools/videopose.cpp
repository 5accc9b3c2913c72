// videopose: dataset generation, training, evaluation and studies.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "videopose/error.hpp"
#include "videopose/evalcli.hpp"
#include "videopose/synth.hpp"
#include "videopose/training.hpp"

using namespace vp;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config;
  bool serial = false;
};

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::kUsage:
    case ErrorCode::kInvalidArgument: return 1;
    case ErrorCode::kNumerical: return 3;
    default: return 2;
  }
}

void write_text(const fs::path &path, const std::string &text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream out{path};
  if (!out) throw Error{ErrorCode::kLoad, "cannot write " + path.string()};
  out << text << '\n';
}

std::vector<int> parse_int_list(const std::string &s) {
  std::vector<int> out;
  std::stringstream in{s};
  for (std::string cell; std::getline(in, cell, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(cell, &used));
      if (used != cell.size()) throw std::invalid_argument{cell};
    } catch (const std::exception &) {
      throw Error{ErrorCode::kUsage, "bad integer list '" + s + "'"};
    }
  }
  if (out.empty()) throw Error{ErrorCode::kUsage, "empty integer list"};
  return out;
}

TrainConfig base_config(const Globals &g) {
  TrainConfig c = g.config.empty() ? TrainConfig{} : load_train_config(g.config);
  if (g.seed_given) c.seed = g.seed;
  return c;
}

Predictor load_predictor(const std::string &path, const Dataset &ds) {
  return Predictor{load_checkpoint(path), ds.registry()};
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"videopose: temporal 6D object pose estimation toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "random seed")->each([&](const std::string &) { g.seed_given = true; });
  app.add_option("--config", g.config, "training/network config (JSON)");
  app.add_flag("--serial", g.serial, "deterministic single-threaded mode (the only mode implemented)");

  // gen
  std::string gen_spec, gen_out;
  auto *gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--spec", gen_spec, "scene spec (JSON); defaults to the built-in scene");
  gen->add_option("--out", gen_out, "output dataset directory")->required();

  // train
  std::string tr_dataset, tr_out, tr_variant, tr_resume;
  int tr_epochs = -1;
  auto *tr = app.add_subcommand("train", "train a network");
  tr->add_option("--dataset", tr_dataset)->required();
  tr->add_option("--out", tr_out, "run directory (metrics.jsonl, checkpoints)")->required();
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--variant", tr_variant, "none | baseline_rnn | convgru");
  tr->add_option("--resume", tr_resume, "checkpoint to continue from");

  // oracle
  std::string or_dataset, or_out;
  auto *orc = app.add_subcommand("oracle", "write a ground-truth echo checkpoint (test fixture)");
  orc->add_option("--dataset", or_dataset)->required();
  orc->add_option("--out", or_out)->required();

  // eval
  std::string ev_ckpt, ev_dataset, ev_out, ev_boxes = "gt";
  double ev_dilate = 1.0;
  bool ev_val = false;
  auto *ev = app.add_subcommand("eval", "evaluate a checkpoint and write predictions + report");
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--dataset", ev_dataset)->required();
  ev->add_option("--out", ev_out, "output directory")->required();
  ev->add_option("--boxes", ev_boxes, "gt or a box CSV file");
  ev->add_option("--dilate", ev_dilate, "scale gt boxes; deltas against gt boxes are reported");
  ev->add_flag("--val-only", ev_val, "evaluate the trailing 20% of videos only");

  // plot
  std::string pl_pred, pl_dataset, pl_kind = "add_s", pl_out;
  auto *pl = app.add_subcommand("plot", "accuracy-threshold curves from a predictions file");
  pl->add_option("--predictions", pl_pred)->required();
  pl->add_option("--dataset", pl_dataset, "dataset providing the object models")->required();
  pl->add_option("--kind", pl_kind, "add | add_s | rotation | translation");
  pl->add_option("--out", pl_out, "PNG path; curves are also written next to it as .json")->required();

  // bench
  std::string be_ckpt, be_dataset, be_variant, be_out;
  int be_frames = 100, be_warmup = 10;
  auto *be = app.add_subcommand("bench", "per-frame throughput");
  be->add_option("--checkpoint", be_ckpt, "optional; otherwise a freshly initialized network");
  be->add_option("--dataset", be_dataset)->required();
  be->add_option("--variant", be_variant, "override the temporal variant");
  be->add_option("--frames", be_frames);
  be->add_option("--warmup", be_warmup);
  be->add_option("--out", be_out, "JSON result path");

  // keyframe
  std::string kf_ckpt, kf_dataset, kf_positions = "2,5,10,15,19", kf_out;
  int kf_length = 20, kf_stride = 2;
  auto *kf = app.add_subcommand("keyframe", "score a single clip position (0-based) per clip");
  kf->add_option("--checkpoint", kf_ckpt)->required();
  kf->add_option("--dataset", kf_dataset)->required();
  kf->add_option("--positions", kf_positions, "comma-separated 0-based clip indices");
  kf->add_option("--length", kf_length);
  kf->add_option("--stride", kf_stride);
  kf->add_option("--out", kf_out, "JSON result path");

  // render
  std::string rd_ckpt, rd_dataset, rd_video, rd_frames, rd_out;
  int rd_scale = 4;
  auto *rd = app.add_subcommand("render", "overlay predicted and gt model points");
  rd->add_option("--checkpoint", rd_ckpt)->required();
  rd->add_option("--dataset", rd_dataset)->required();
  rd->add_option("--video", rd_video, "video id (default: first video)");
  rd->add_option("--frames", rd_frames, "comma-separated frame indices")->required();
  rd->add_option("--out", rd_out)->required();
  rd->add_option("--scale", rd_scale);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      const SceneSpec spec = gen_spec.empty() ? SceneSpec::default_spec() : load_scene_spec(gen_spec);
      generate_synthetic_dataset(spec, g.seed, gen_out,
                                 [](const std::string &w) { std::cerr << "warning: " << w << '\n'; });
      std::cout << "wrote " << spec.videos << " videos to " << gen_out << '\n';
    } else if (*tr) {
      TrainConfig c = base_config(g);
      if (tr_epochs >= 0) c.epochs = tr_epochs;
      if (!tr_variant.empty()) c.network.variant = temporal_variant_from_string(tr_variant);
      const Dataset ds = load_dataset(tr_dataset);
      TrainOptions o;
      o.out_dir = tr_out;
      if (!tr_resume.empty()) o.resume = tr_resume;
      o.on_epoch = [](const EpochRecord &r) {
        std::printf("epoch %3d  lr %.3g  loss %.4f  val ADD %.2f  ADD-S %.2f%s\n", r.epoch, r.lr, r.train.total,
                    100.0 * r.val_add_auc, 100.0 * r.val_adds_auc, r.best ? "  *" : "");
        std::fflush(stdout);
      };
      write_text(fs::path{tr_out} / "config.json", train_config_to_json(c));
      train(c, ds, o);
    } else if (*orc) {
      const Dataset ds = load_dataset(or_dataset);
      save_checkpoint(gt_echo_checkpoint(ds.registry()), or_out);
    } else if (*ev) {
      const Dataset ds = load_dataset(ev_dataset);
      const Predictor pred = load_predictor(ev_ckpt, ds);
      EvalRequest req;
      req.checkpoint_id = fs::path{ev_ckpt}.filename().string();
      if (ev_boxes != "gt") req.boxes_file = ev_boxes;
      req.dilate = ev_dilate;
      req.val_only = ev_val;
      EvalOutput out = run_eval(pred, ds, req);
      if (ev_dilate != 1.0 && !req.boxes_file) {
        EvalRequest ref = req;
        ref.dilate = 1.0;
        attach_deltas(out.report, run_eval(pred, ds, ref).report);
      }
      fs::create_directories(ev_out);
      write_predictions(fs::path{ev_out} / "predictions.csv", out.records);
      write_text(fs::path{ev_out} / "report.json", report_json(out.report));
      const std::string text = report_text(out.report);
      write_text(fs::path{ev_out} / "report.txt", text);
      std::cout << text;
    } else if (*pl) {
      const CurveKind kind = curve_kind_from_string(pl_kind);
      const Dataset ds = load_dataset(pl_dataset);
      const CurveSet curves = compute_curves(read_predictions(pl_pred), ds.registry(), kind);
      plot_curves(curves, pl_out);
      write_text(fs::path{pl_out}.replace_extension(".json"), curves_json(curves));
      for (const auto &[id, c] : curves.curves) std::printf("%-16s AUC %.4f\n", id.c_str(), c.auc);
    } else if (*be) {
      const Dataset ds = load_dataset(be_dataset);
      NetworkConfig nc;
      std::optional<VideoPoseNet> net;
      if (!be_ckpt.empty()) {
        const Checkpoint ck = load_checkpoint(be_ckpt);
        nc = ck.network;
        if (be_variant.empty() || temporal_variant_from_string(be_variant) == nc.variant)
          net.emplace(network_from_checkpoint(ck, ds.registry()));
      } else {
        nc = base_config(g).network;
        nc.image_height = ds.manifest().image_height;
        nc.image_width = ds.manifest().image_width;
      }
      if (!be_variant.empty()) nc.variant = temporal_variant_from_string(be_variant);
      if (!net) net.emplace(nc, ds.registry(), g.seed);
      const BenchResult r = run_bench(*net, ds, be_frames, be_warmup);
      std::printf("%-14s frames %d (timed %d)  %.3f s  %.2f fps\n", r.variant.c_str(), r.frames, r.timed_frames,
                  r.wall_seconds, r.fps);
      if (!be_out.empty()) write_text(be_out, bench_json(r));
    } else if (*kf) {
      const Dataset ds = load_dataset(kf_dataset);
      const auto rows =
          run_keyframe_study(load_predictor(kf_ckpt, ds), ds, parse_int_list(kf_positions), kf_length, kf_stride);
      std::printf("%-9s %7s %9s %9s\n", "position", "count", "ADD", "ADD-S");
      for (const auto &r : rows) std::printf("%-9d %7zu %9.2f %9.2f\n", r.position, r.count, r.add_auc, r.adds_auc);
      if (!kf_out.empty()) write_text(kf_out, keyframe_json(rows));
    } else if (*rd) {
      const Dataset ds = load_dataset(rd_dataset);
      const std::size_t v = rd_video.empty() ? 0 : ds.video_index(rd_video);
      const auto paths =
          render_overlays(load_predictor(rd_ckpt, ds), ds, v, parse_int_list(rd_frames), rd_out, rd_scale);
      for (const auto &p : paths) std::cout << p.string() << '\n';
    }
  } catch (const Error &e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
