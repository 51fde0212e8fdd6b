// Command-line entry point: dataset generation, training, evaluation, FLOPs
// reports, the preset comparison suite and SVG rendering.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "lsn/backbone.hpp"
#include "lsn/errors.hpp"
#include "lsn/trainer.hpp"
#include "lsn/viz.hpp"

namespace fs = std::filesystem;
using namespace lsn;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", path, "key = value config file");
    app->add_option("--set", overrides, "override one key, key=value (repeatable)");
  }

  ExperimentConfig resolve(bool print = true) const {
    ExperimentConfig cfg;
    try {
      if (!path.empty()) cfg = load_config(path);
      for (const auto& o : overrides) apply_override(cfg, o);
      cfg.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    } catch (const InventoryError& e) {
      throw UsageError(e.what());
    }
    if (print) {
      std::cout << "# resolved config, hash " << cfg.hash_hex() << "\n" << cfg.to_text() << std::flush;
    }
    return cfg;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InventoryError("cannot write " + path.string());
  out << text;
  if (!out) throw InventoryError("write failed: " + path.string());
}

SceneParams scene_params(const ExperimentConfig& cfg, std::size_t frames) {
  SceneParams p;
  p.image_channels = cfg.image_channels;
  p.image_height = cfg.image_height;
  p.image_width = cfg.image_width;
  p.points_per_lane = cfg.points_per_lane;
  p.extent = cfg.extent;
  p.frames = frames;
  return p;
}

std::pair<std::size_t, std::size_t> parse_split(const std::string& s, std::size_t scenes) {
  const auto colon = s.find(':');
  std::size_t a = 0, b = 0;
  try {
    if (colon == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    a = std::stoul(s.substr(0, colon), &used);
    if (used != colon) throw std::invalid_argument(s);
    b = std::stoul(s.substr(colon + 1), &used);
    if (used != s.size() - colon - 1) throw std::invalid_argument(s);
  } catch (const std::logic_error&) {
    throw UsageError("--split expects TRAIN:TEST, got '" + s + "'");
  }
  if (a + b != scenes) {
    throw UsageError("--split " + s + " does not add up to --scenes " + std::to_string(scenes));
  }
  return {a, b};
}

void print_epoch(const EpochRecord& e) {
  std::printf("epoch %llu  loss %.6f  %.2fs\n", static_cast<unsigned long long>(e.epoch), e.mean_loss, e.seconds);
  std::fflush(stdout);
}

const Scene& find_scene(const std::vector<Scene>& scenes, const std::string& id) {
  for (const Scene& s : scenes) {
    if (s.id == id) return s;
  }
  std::string ids;
  for (const Scene& s : scenes) ids += " " + s.id;
  throw InputError("no scene '" + id + "'; available:" + ids);
}

std::string flops_table(const std::string& preset) {
  const FlopsReport r = count_flops(backbone_preset(preset));
  std::string out = "layer                          output            MACs\n";
  char buf[160];
  for (const auto& l : r.layers) {
    std::snprintf(buf, sizeof buf, "%-30s %-16s %12llu\n", l.name.c_str(), shape_str(l.output).c_str(),
                  static_cast<unsigned long long>(l.macs));
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "total %s: %llu MACs, %.4g GMACs (%.4g GFLOPs at 2 per MAC)\n", preset.c_str(),
                static_cast<unsigned long long>(r.macs), r.macs / 1e9, r.flops() / 1e9);
  out += buf;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lane segment detection from multi-camera images on synthetic scenes"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  ConfigArgs gen_cfg;
  gen_cfg.attach(gen);
  std::uint64_t gen_seed = 0;
  std::size_t gen_scenes = 16, gen_frames = 4;
  std::string gen_split, gen_out;
  gen->add_option("--seed", gen_seed, "seed of the first scene");
  gen->add_option("--scenes", gen_scenes, "number of scenes");
  gen->add_option("--frames", gen_frames, "frames per scene");
  gen->add_option("--split", gen_split, "TRAIN:TEST; writes train/ and test/ under --out");
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train from scratch");
  ConfigArgs tr_cfg;
  tr_cfg.attach(tr);
  std::string tr_data;
  tr->add_option("--data", tr_data, "dataset directory (default: dataset_dir)");

  // resume
  auto* rs = app.add_subcommand("resume", "continue a run from a checkpoint");
  ConfigArgs rs_cfg;
  rs_cfg.attach(rs);
  std::string rs_data, rs_ckpt;
  bool drop_opt = false, drop_rng = false;
  rs->add_option("--data", rs_data, "dataset directory (default: dataset_dir)");
  rs->add_option("--checkpoint", rs_ckpt, "checkpoint file")->required();
  rs->add_flag("--drop-optimizer-state", drop_opt, "restart Adam moments from zero");
  rs->add_flag("--drop-rng-state", drop_rng, "reseed the data-order RNG");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ConfigArgs ev_cfg;
  ev_cfg.attach(ev);
  std::string ev_data, ev_ckpt, ev_out = "eval_report.txt";
  bool ev_oracle = false;
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file");
  ev->add_flag("--oracle", ev_oracle, "score the groundtruth itself instead of a model");
  ev->add_option("--out", ev_out, "report file");

  // flops
  auto* fl = app.add_subcommand("flops", "count backbone multiply-accumulates");
  std::string fl_preset = "resnet50-shape";
  fl->add_option("--preset", fl_preset, "backbone preset");

  // suite
  auto* su = app.add_subcommand("suite", "train and compare the four experiment presets");
  ConfigArgs su_cfg;
  su_cfg.attach(su);
  std::string su_train, su_eval, su_out;
  std::vector<std::string> su_presets = experiment_preset_names();
  su->add_option("--train-data", su_train, "training dataset")->required();
  su->add_option("--eval-data", su_eval, "held-out dataset")->required();
  su->add_option("--presets", su_presets, "subset of presets");
  su->add_option("--out", su_out, "also write the table here");

  // viz
  auto* vz = app.add_subcommand("viz", "render groundtruth and predictions as SVG");
  ConfigArgs vz_cfg;
  vz_cfg.attach(vz);
  std::string vz_data, vz_ckpt, vz_scene, vz_out;
  std::optional<std::size_t> vz_frame;
  double vz_min_score = 0.3;
  vz->add_option("--dataset", vz_data, "dataset directory")->required();
  vz->add_option("--checkpoint", vz_ckpt, "checkpoint; omit for groundtruth only");
  vz->add_option("--scene", vz_scene, "scene id")->required();
  vz->add_option("--frame", vz_frame, "frame index (default: every frame)");
  vz->add_option("--min-score", vz_min_score, "score threshold for drawn predictions");
  vz->add_option("--out", vz_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      if (gen_scenes == 0) throw UsageError("--scenes must be at least 1");
      if (gen_frames < 2) throw UsageError("--frames must be at least 2");
      const ExperimentConfig cfg = gen_cfg.resolve();
      const auto scenes = generate_scenes(gen_seed, gen_scenes, scene_params(cfg, gen_frames));
      if (gen_split.empty()) {
        save_dataset(scenes, gen_out);
        std::printf("wrote %zu scenes to %s\n", scenes.size(), gen_out.c_str());
      } else {
        const auto [a, b] = parse_split(gen_split, gen_scenes);
        save_dataset({scenes.begin(), scenes.begin() + static_cast<std::ptrdiff_t>(a)}, fs::path(gen_out) / "train");
        save_dataset({scenes.begin() + static_cast<std::ptrdiff_t>(a), scenes.end()}, fs::path(gen_out) / "test");
        std::printf("wrote %zu train and %zu test scenes to %s\n", a, b, gen_out.c_str());
      }
    } else if (*tr) {
      const ExperimentConfig cfg = tr_cfg.resolve();
      const auto data = load_dataset(tr_data.empty() ? cfg.dataset_dir : tr_data);
      TrainOptions opts;
      opts.on_epoch = print_epoch;
      train(cfg, data, opts);
      std::printf("checkpoints in %s\n", cfg.checkpoint_dir.c_str());
    } else if (*rs) {
      const ExperimentConfig cfg = rs_cfg.resolve();
      const auto data = load_dataset(rs_data.empty() ? cfg.dataset_dir : rs_data);
      TrainOptions opts;
      opts.on_epoch = print_epoch;
      opts.drop_optimizer_state = drop_opt;
      opts.drop_rng_state = drop_rng;
      resume(rs_ckpt, cfg, data, opts);
      std::printf("checkpoints in %s\n", cfg.checkpoint_dir.c_str());
    } else if (*ev) {
      if (ev_oracle == !ev_ckpt.empty()) throw UsageError("eval needs exactly one of --checkpoint or --oracle");
      const ExperimentConfig cfg = ev_cfg.resolve();
      const auto data = load_dataset(ev_data);
      std::vector<ScenePredictions> preds;
      if (ev_oracle) {
        preds = oracle_predictions(data);
      } else {
        const Trainer t(cfg, load_checkpoint(ev_ckpt));
        preds = predict_dataset(t.model(), data);
      }
      const std::string report = evaluate(preds, data).to_text();
      std::cout << report;
      write_text(ev_out, report);
    } else if (*fl) {
      const auto& names = backbone_preset_names();
      if (std::find(names.begin(), names.end(), fl_preset) == names.end()) {
        std::string valid;
        for (const auto& n : names) valid += " " + n;
        throw UsageError("unknown backbone preset '" + fl_preset + "'; valid:" + valid);
      }
      std::cout << flops_table(fl_preset);
      const double deep = static_cast<double>(count_flops(backbone_preset("resnet50-shape")).macs);
      const double shallow = static_cast<double>(count_flops(backbone_preset("resnet18-shape")).macs);
      std::printf("ratio resnet50-shape / resnet18-shape: %.4f\n", deep / shallow);
    } else if (*su) {
      const ExperimentConfig cfg = su_cfg.resolve();
      for (const auto& p : su_presets) experiment_preset(p, cfg);
      const auto train_set = load_dataset(su_train);
      const auto eval_set = load_dataset(su_eval);
      const auto rows = run_experiment_suite(cfg, su_presets, train_set, eval_set, [](const SuiteRow& r) {
        std::printf("done %s: %.3f s/epoch, mAP %.4f\n", r.preset.c_str(), r.sec_per_epoch, r.map);
        std::fflush(stdout);
      });
      const std::string table = format_suite_table(rows);
      std::cout << table;
      if (!su_out.empty()) write_text(su_out, table);
    } else if (*vz) {
      const ExperimentConfig cfg = vz_cfg.resolve();
      const auto data = load_dataset(vz_data);
      const Scene& scene = find_scene(data, vz_scene);
      std::optional<std::vector<std::vector<LaneSegment>>> preds;
      if (!vz_ckpt.empty()) {
        const Trainer t(cfg, load_checkpoint(vz_ckpt));
        preds = t.model().predict_scene(scene);
      }
      if (vz_frame && *vz_frame >= scene.frames.size()) {
        throw InputError("scene " + scene.id + " has " + std::to_string(scene.frames.size()) + " frames");
      }
      VizOptions vo;
      vo.score_threshold = vz_min_score;
      for (std::size_t t = 0; t < scene.frames.size(); ++t) {
        if (vz_frame && *vz_frame != t) continue;
        const fs::path path = fs::path(vz_out) / (scene.id + "_frame" + std::to_string(t) + ".svg");
        write_text(path, render_bev_svg(cfg.extent, scene.groundtruth[t], preds ? &(*preds)[t] : nullptr,
                                        scene.id + " frame " + std::to_string(t), vo));
        std::printf("wrote %s\n", path.string().c_str());
      }
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
