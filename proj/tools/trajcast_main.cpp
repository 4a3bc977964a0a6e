// Copyright 2026 trajcast contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "trajcast/forecast_io.hpp"
#include "trajcast/gradcheck.hpp"
#include "trajcast/metrics.hpp"
#include "trajcast/scene_io.hpp"
#include "trajcast/train.hpp"

namespace fs = std::filesystem;
using namespace trajcast;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

struct CommonFlags {
  std::string config_path;
  std::string preset;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--preset", preset, "configuration preset")
        ->check(CLI::IsMember({"tiny", "desk", "paper"}));
    cmd->add_option("--seed", seed, "random seed")->each([this](const std::string&) {
      seed_set = true;
    });
    cmd->add_option("--jobs", jobs, "worker threads (default 1)");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!preset.empty()) apply_preset(cfg, preset);
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot open config file: " + config_path);
      nlohmann::ordered_json j;
      try {
        j = nlohmann::ordered_json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
      }
      run_config_from_json(j, cfg);
      if (!preset.empty() && cfg.preset != preset) apply_preset(cfg, preset);
    }
    if (seed_set) cfg.seed = seed;
    if (jobs > 0) cfg.jobs = jobs;
    cfg.resolve();
    return cfg;
  }
};

void write_config_snapshot(const RunConfig& cfg, const std::string& dir) {
  std::ofstream out(dir + "/config.json");
  out << run_config_to_json(cfg).dump(1) << "\n";
}

std::vector<std::string> list_scene_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("data directory does not exist: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json" &&
        entry.path().filename().string().rfind("scene_", 0) == 0)
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

/// Loads scenes compatible with the model horizons; bad files are skipped
/// with a warning on stderr.
std::vector<Scene> load_scenes(const std::vector<std::string>& files,
                               const ModelConfig& model) {
  std::vector<Scene> scenes;
  for (const auto& f : files) {
    try {
      Scene s = load_scene(f);
      if (s.t_hist != model.t_hist || s.t_fut != model.t_fut)
        throw ValidationError("scene horizon (" + std::to_string(s.t_hist) + "," +
                              std::to_string(s.t_fut) + ") does not match model config");
      scenes.push_back(std::move(s));
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << f << ": " << e.what() << "\n";
    }
  }
  return scenes;
}

int cmd_gen(const CommonFlags& common, const std::string& out_dir, int count) {
  RunConfig cfg = common.resolve();
  fs::create_directories(out_dir);
  write_config_snapshot(cfg, out_dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05d", i);
    const Scene scene = generate_synthetic_scene(
        cfg.generator, cfg.seed + static_cast<std::uint64_t>(i), name);
    save_scene(scene, out_dir + "/" + name + ".json");
  }
  std::cout << "wrote " << count << " scene(s) to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const CommonFlags& common, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume_path) {
  RunConfig cfg = common.resolve();
  const auto files = list_scene_files(data_dir);
  const auto scenes = load_scenes(files, cfg.model);
  if (scenes.empty())
    throw ValidationError("no valid scenes in data directory: " + data_dir);
  fs::create_directories(out_dir);
  write_config_snapshot(cfg, out_dir);

  auto model = build_model<float>(cfg.model, cfg.seed);
  std::uint64_t start_step = 0;
  if (!resume_path.empty()) {
    start_step = load_checkpoint(model.params, config_hash(cfg.model), resume_path);
    std::cout << "resumed from " << resume_path << " at step " << start_step << "\n";
  }
  const auto result = train(model, scenes, cfg, out_dir, start_step);
  std::cout << "trained " << result.steps << " step(s); final total loss "
            << result.final_loss.total << "\n";
  std::cout << "checkpoint: " << out_dir << "/checkpoint.bin\n";
  return kExitOk;
}

int cmd_eval(const CommonFlags& common, const std::string& checkpoint_path,
             const std::string& data_dir, const std::string& out_dir, bool turns_only) {
  RunConfig cfg = common.resolve();
  auto model = build_model<float>(cfg.model, cfg.seed);
  load_checkpoint(model.params, config_hash(cfg.model), checkpoint_path);

  const auto files = list_scene_files(data_dir);
  const auto scenes = load_scenes(files, cfg.model);
  if (scenes.empty())
    throw ValidationError("no valid scenes in data directory: " + data_dir);

  const auto forecasts = forecast_scenes(model, scenes, cfg.jobs);
  for (std::size_t i = 0; i < forecasts.size(); ++i)
    for (const auto& af : forecasts[i].agents)
      if (!probabilities_normalized(af, 1e-6))
        throw NumericError("forecast probabilities not normalized for agent " +
                           af.agent_id + " in scene " + forecasts[i].scene_id);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_config_snapshot(cfg, out_dir);
  }

  const std::vector<std::pair<int, std::string>> turns =
      filter_turns(scenes, 45.0 * kPi / 180.0);
  if (turns_only && turns.empty()) {
    std::cout << "warning: turn filter matched no focal agents; no report rows\n";
    return kExitOk;
  }

  const MetricReport rep =
      evaluate_forecasts(scenes, forecasts, turns_only ? &turns : nullptr);
  print_metric_report(std::cout, rep, /*verbose=*/true);

  std::vector<int> horizons;
  for (int h = 10; h <= cfg.model.t_fut; h += 10) horizons.push_back(h);
  const auto curve = horizon_curve(scenes, forecasts, horizons);

  if (!out_dir.empty()) {
    std::ofstream mfile(out_dir + (turns_only ? "/metrics_turns.csv" : "/metrics.csv"));
    mfile << metric_report_csv(rep);
    std::ofstream hfile(out_dir + "/horizon.csv");
    hfile << "horizon,minfde6\n" << std::setprecision(9);
    for (const auto& [h, v] : curve) hfile << h << ',' << v << "\n";
    std::cout << "reports written to " << out_dir << "\n";
  }
  return kExitOk;
}

int cmd_rollout(const CommonFlags& common, const std::string& checkpoint_path,
                const std::string& scene_path, const std::string& out_file, bool svg) {
  RunConfig cfg = common.resolve();
  const Scene scene = load_scene(scene_path);
  if (scene.t_hist != cfg.model.t_hist || scene.t_fut != cfg.model.t_fut)
    throw ValidationError("scene horizon does not match model config");
  auto model = build_model<float>(cfg.model, cfg.seed);
  load_checkpoint(model.params, config_hash(cfg.model), checkpoint_path);

  Graph<float> g;
  const Forecast fc = unroll_future(model, g, scene, UnrollMode::kInference).forecast;
  const fs::path out_path(out_file);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_forecast(fc, scene, out_file);
  if (out_path.has_parent_path())
    write_config_snapshot(cfg, out_path.parent_path().string());
  else
    write_config_snapshot(cfg, ".");
  std::cout << "forecast written to " << out_file << "\n";
  if (svg) {
    const std::string svg_path = out_file + ".svg";
    std::ofstream out(svg_path);
    out << forecast_svg(fc, scene);
    std::cout << "sketch written to " << svg_path << "\n";
  }
  return kExitOk;
}

int cmd_gradcheck(const CommonFlags& common, int samples, double eps, bool inject_fault) {
  RunConfig cfg = common.resolve();
  auto model = build_model<double>(cfg.model, cfg.seed);
  const Scene scene = make_minimal_scene(cfg.model.t_hist, cfg.model.t_fut);

  auto loss_fn = [&](Graph<double>& g, PinContext* pins) {
    const auto out =
        unroll_future(model, g, scene, UnrollMode::kTraining, ForwardCtx{}, pins);
    return compute_losses(model, g, scene, out, cfg.train.winner_mode, pins).total;
  };
  const auto rep =
      grad_check<double>(model.params, loss_fn, eps, samples, cfg.seed + 1, inject_fault);
  std::cout << "grad check over " << rep.samples << " coordinates: max relative error "
            << rep.max_rel_error << "\n";
  std::cout << "worst parameter: " << rep.worst_param << "[" << rep.worst_coordinate
            << "] analytic " << rep.worst_analytic << " vs numeric " << rep.worst_numeric
            << "\n";
  if (rep.max_rel_error < 1e-3) {
    std::cout << "PASS\n";
    return kExitOk;
  }
  std::cout << "FAIL\n";
  return kExitNumeric;
}

int cmd_bench(const CommonFlags& common, int iters) {
  RunConfig cfg = common.resolve();
  auto model = build_model<float>(cfg.model, cfg.seed);
  const Scene scene = generate_synthetic_scene(cfg.generator, cfg.seed, "bench");
  // Warm-up pass, then timed inference unrolls.
  {
    Graph<float> g;
    (void)unroll_future(model, g, scene, UnrollMode::kInference);
  }
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) {
    Graph<float> g;
    (void)unroll_future(model, g, scene, UnrollMode::kInference);
  }
  const auto end = std::chrono::steady_clock::now();
  const double ms =
      std::chrono::duration<double, std::milli>(end - start).count() / iters;
  std::cout << "inference unroll: " << ms << " ms per scene (" << scene.agents.size()
            << " agents, " << scene.map.polylines.size() << " polylines, "
            << model.params.total_coordinates() << " parameters)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decoder-only autoregressive trajectory forecaster"};
  app.require_subcommand(1);

  CommonFlags common;

  auto* gen = app.add_subcommand("gen", "generate synthetic scenario files");
  std::string gen_out;
  int gen_count = 10;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of scenes");
  common.attach(gen);

  auto* tr = app.add_subcommand("train", "train a model on scenario files");
  std::string tr_data, tr_out, tr_resume;
  tr->add_option("--data", tr_data, "scene directory")->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  common.attach(tr);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on scenario files");
  std::string ev_ckpt, ev_data, ev_out;
  bool ev_turns = false;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "scene directory")->required();
  ev->add_option("--out", ev_out, "report directory");
  ev->add_flag("--turns-only", ev_turns, "score only futures turning at least 45 degrees");
  common.attach(ev);

  auto* ro = app.add_subcommand("rollout", "forecast one scene and write predictions");
  std::string ro_ckpt, ro_scene, ro_out;
  bool ro_svg = false;
  ro->add_option("--checkpoint", ro_ckpt, "checkpoint file")->required();
  ro->add_option("--scene", ro_scene, "scene file")->required();
  ro->add_option("--out", ro_out, "output forecast file")->required();
  ro->add_flag("--svg", ro_svg, "also write an SVG sketch");
  common.attach(ro);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  int gc_samples = 200;
  double gc_eps = 1e-4;
  bool gc_fault = false;
  gc->add_option("--samples", gc_samples, "sampled parameter coordinates");
  gc->add_option("--eps", gc_eps, "finite-difference step");
  gc->add_flag("--fault-inject", gc_fault, "corrupt one gradient to verify detection");
  common.attach(gc);

  auto* be = app.add_subcommand("bench", "time one inference unroll");
  int be_iters = 10;
  be->add_option("--iters", be_iters, "timed repetitions");
  common.attach(be);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  // The gradcheck subcommand defaults to the tiny preset.
  if (gc->parsed() && common.preset.empty() && common.config_path.empty())
    common.preset = "tiny";

  try {
    if (gen->parsed()) return cmd_gen(common, gen_out, gen_count);
    if (tr->parsed()) return cmd_train(common, tr_data, tr_out, tr_resume);
    if (ev->parsed()) return cmd_eval(common, ev_ckpt, ev_data, ev_out, ev_turns);
    if (ro->parsed()) return cmd_rollout(common, ro_ckpt, ro_scene, ro_out, ro_svg);
    if (gc->parsed()) return cmd_gradcheck(common, gc_samples, gc_eps, gc_fault);
    if (be->parsed()) return cmd_bench(common, be_iters);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitUsage;
}
