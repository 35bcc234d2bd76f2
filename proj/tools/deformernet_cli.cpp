// Command-line front end: dataset generation, training, closed-loop servo
// runs, evaluation, and plot-ready CSV export.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dfn/dfn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dfn;

namespace {

json to_json(const GenConfig& c) {
  return json{{"episodes", c.num_configs},
              {"shapes_per_episode", c.shapes_per_config},
              {"magnitude_min", c.magnitude_min},
              {"magnitude_max", c.magnitude_max},
              {"box_dims", {c.box_dims.x, c.box_dims.y, c.box_dims.z}},
              {"resolution", {c.resolution[0], c.resolution[1], c.resolution[2]}},
              {"young_modulus", c.material.young_modulus},
              {"poisson_ratio", c.material.poisson_ratio},
              {"seed", c.seed},
              {"cloud_size", c.cloud_size},
              {"grasp_radius", c.grasp_radius},
              {"mp_min_x_fraction", c.mp_min_x_fraction}};
}

void from_json(const json& j, GenConfig& c) {
  c.num_configs = j.value("episodes", c.num_configs);
  c.shapes_per_config = j.value("shapes_per_episode", c.shapes_per_config);
  c.magnitude_min = j.value("magnitude_min", c.magnitude_min);
  c.magnitude_max = j.value("magnitude_max", c.magnitude_max);
  if (j.contains("box_dims")) {
    c.box_dims = {j["box_dims"][0], j["box_dims"][1], j["box_dims"][2]};
  }
  if (j.contains("resolution")) {
    c.resolution = {j["resolution"][0], j["resolution"][1], j["resolution"][2]};
  }
  c.material.young_modulus = j.value("young_modulus", c.material.young_modulus);
  c.material.poisson_ratio = j.value("poisson_ratio", c.material.poisson_ratio);
  c.seed = j.value("seed", c.seed);
  c.cloud_size = j.value("cloud_size", c.cloud_size);
  c.grasp_radius = j.value("grasp_radius", c.grasp_radius);
  c.mp_min_x_fraction = j.value("mp_min_x_fraction", c.mp_min_x_fraction);
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"initial_lr", c.schedule.initial_lr},
              {"decay_factor", c.schedule.decay_factor},
              {"decay_every", c.schedule.decay_every},
              {"seed", c.seed},
              {"test_fraction", c.test_fraction}};
}

void from_json(const json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.schedule.initial_lr = j.value("initial_lr", c.schedule.initial_lr);
  c.schedule.decay_factor = j.value("decay_factor", c.schedule.decay_factor);
  c.schedule.decay_every = j.value("decay_every", c.schedule.decay_every);
  c.seed = j.value("seed", c.seed);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
}

json to_json(const ServoConfig& c) {
  return json{{"max_iters", c.max_iters},
              {"abs_threshold", c.abs_threshold},
              {"rel_threshold", c.rel_threshold},
              {"max_step", c.max_step},
              {"cloud_size", c.cloud_size},
              {"seed", c.seed}};
}

void from_json(const json& j, ServoConfig& c) {
  c.max_iters = j.value("max_iters", c.max_iters);
  c.abs_threshold = j.value("abs_threshold", c.abs_threshold);
  c.rel_threshold = j.value("rel_threshold", c.rel_threshold);
  c.max_step = j.value("max_step", c.max_step);
  c.cloud_size = j.value("cloud_size", c.cloud_size);
  c.seed = j.value("seed", c.seed);
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw ParamError("cannot open config file: " + path);
  json j;
  f >> j;
  return j;
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const json& resolved, const std::vector<std::string>& outputs) {
  json manifest{{"command", command}, {"config", resolved}, {"outputs", outputs}};
  std::ofstream f(out_dir / "manifest.json");
  f << manifest.dump(2) << "\n";
}

fs::path ensure_out_dir(const std::string& out) {
  fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  fs::create_directories(dir);
  return dir;
}

ModelVariant parse_variant(const std::string& name) {
  if (name == "deformer") return ModelVariant::Deformer;
  if (name == "mp") return ModelVariant::MpRegression;
  if (name == "baseline") return ModelVariant::Baseline;
  throw ParamError("unknown variant: " + name);
}

int cmd_gen_data(const GenConfig& cfg, const std::string& out) {
  const fs::path dir = ensure_out_dir(out);
  const Dataset dataset = generate_dataset(cfg);
  const fs::path file = dir / "dataset.dfns";
  save_dataset(dataset, file.string());
  write_manifest(dir, "gen-data", to_json(cfg), {"dataset.dfns"});
  std::cout << "wrote " << dataset.samples.size() << " samples to " << file
            << " (skipped " << dataset.skipped << ")\n";
  return 0;
}

int cmd_train(const TrainConfig& cfg, const std::string& variant_name,
              const std::string& data_path, const std::string& out) {
  const fs::path dir = ensure_out_dir(out);
  TrainConfig config = cfg;
  config.variant = parse_variant(variant_name);
  const Dataset dataset = load_dataset(data_path);
  std::cout << "training " << variant_name << " on " << dataset.samples.size()
            << " samples\n";
  const TrainResult result = config.variant == ModelVariant::Baseline
                                 ? train_baseline_head(dataset.samples, config)
                                 : train(dataset.samples, config);
  write_checkpoint(result.model, (dir / "model.dfnm").string());
  write_loss_csv(result.curve, (dir / "loss.csv").string());
  json resolved = to_json(config);
  resolved["variant"] = variant_name;
  resolved["data"] = data_path;
  write_manifest(dir, "train", resolved, {"model.dfnm", "loss.csv"});
  std::cout << "final train mse " << result.curve.back().train_mse_mm2
            << " mm^2, test mse " << result.curve.back().test_mse_mm2 << " mm^2\n";
  return 0;
}

MpMethod parse_method(const std::string& name) {
  if (name == "heuristic") return MpMethod::Heuristic;
  if (name == "regression") return MpMethod::Regression;
  throw ParamError("unknown MP method: " + name);
}

int cmd_servo(const GenConfig& episodes, const ServoConfig& servo,
              const std::string& deformer_path, const std::string& mp_model_path,
              const std::string& method_name, std::size_t cases,
              const std::string& out) {
  const fs::path dir = ensure_out_dir(out);
  DeformerNet deformer = read_checkpoint(deformer_path);
  std::optional<DeformerNet> mp_model;
  if (!mp_model_path.empty()) mp_model = read_checkpoint(mp_model_path);

  std::vector<std::string> outputs;
  for (std::size_t c = 0; c < cases; ++c) {
    const Episode episode = make_episode(episodes, c, 0);
    SpringMesh mesh = build_box(episodes.box_dims, episodes.resolution, episodes.material);
    clamp_face(mesh, {Axis::X, Side::Min});

    ServoConfig cfg = servo;
    cfg.cloud_size = episodes.cloud_size;
    ServoTrace trace;
    Vec3 mp;
    if (method_name == "ground-truth") {
      mp = episode.mp;
      GraspHandle handle = grasp(mesh, mp, episodes.grasp_radius);
      trace = run_servo(mesh, handle, episode.goal, deformer, cfg);
    } else {
      MpContext ctx;
      if (mp_model) ctx.mp_model = &*mp_model;
      const PipelineResult result =
          run_full_pipeline(mesh, episode.goal, parse_method(method_name), deformer,
                            ctx, episodes.grasp_radius, cfg);
      mp = result.manipulation_point;
      trace = result.trace;
    }

    const std::string trace_name = "trace_case" + std::to_string(c) + ".csv";
    write_trace_csv(trace, (dir / trace_name).string());
    write_xyz(episode.goal, (dir / ("goal_case" + std::to_string(c) + ".xyz")).string());
    write_obj(mesh, (dir / ("final_case" + std::to_string(c) + ".obj")).string());
    outputs.push_back(trace_name);
    std::cout << "case " << c << " [" << method_name << "] mp (" << mp.x << ", "
              << mp.y << ", " << mp.z << ") chamfer " << trace.initial_chamfer()
              << " -> " << trace.final_chamfer() << " m (" << to_string(trace.outcome)
              << ")\n";
  }
  json resolved{{"episodes", to_json(episodes)},
                {"servo", to_json(servo)},
                {"method", method_name},
                {"cases", cases},
                {"deformer", deformer_path},
                {"mp_model", mp_model_path}};
  write_manifest(dir, "servo", resolved, outputs);
  return 0;
}

int cmd_eval(const EvalConfig& cfg, const std::string& deformer_path,
             const std::string& mp_model_path, const std::string& out) {
  const fs::path dir = ensure_out_dir(out);
  DeformerNet deformer = read_checkpoint(deformer_path);
  std::optional<DeformerNet> mp_model;
  if (!mp_model_path.empty()) mp_model = read_checkpoint(mp_model_path);

  const EvalReport report = evaluate(deformer, mp_model ? &*mp_model : nullptr, cfg);
  {
    std::ofstream f(dir / "eval.csv");
    write_eval_csv(report.rows, f);
  }
  const std::string summary = summarize(report);
  {
    std::ofstream f(dir / "summary.txt");
    f << summary;
  }
  json resolved{{"episodes", to_json(cfg.episodes)},
                {"servo", to_json(cfg.servo)},
                {"cases", cfg.cases},
                {"deformer", deformer_path},
                {"mp_model", mp_model_path}};
  write_manifest(dir, "eval", resolved, {"eval.csv", "summary.txt"});
  std::cout << summary;
  return 0;
}

// Consolidates trace and loss CSVs from run directories into long-format
// files that plotting tools ingest directly.
int cmd_export_plots(const std::vector<std::string>& run_dirs, const std::string& out) {
  const fs::path dir = ensure_out_dir(out);
  std::ofstream chamfer(dir / "chamfer_over_time.csv");
  chamfer << "run,iter,chamfer_m,dx,dy,dz,clamped\n";
  std::ofstream losses(dir / "loss_curves.csv");
  losses << "run,epoch,lr,train_mse_mm2,test_mse_mm2\n";

  std::size_t n_traces = 0, n_curves = 0;
  for (const std::string& run : run_dirs) {
    for (const auto& entry : fs::directory_iterator(run)) {
      if (!entry.is_regular_file()) continue;
      const std::string name = entry.path().filename().string();
      const std::string run_id =
          fs::path(run).filename().string() + "/" + entry.path().stem().string();
      if (name.rfind("trace", 0) == 0 && entry.path().extension() == ".csv") {
        std::ifstream f(entry.path());
        std::string line;
        std::getline(f, line);  // header
        while (std::getline(f, line)) chamfer << run_id << ',' << line << '\n';
        ++n_traces;
      } else if (name == "loss.csv") {
        std::ifstream f(entry.path());
        std::string line;
        std::getline(f, line);
        while (std::getline(f, line)) losses << run_id << ',' << line << '\n';
        ++n_curves;
      }
    }
  }
  std::cout << "merged " << n_traces << " traces, " << n_curves << " loss curves\n";
  write_manifest(dir, "export-plots", json{{"runs", run_dirs}},
                 {"chamfer_over_time.csv", "loss_curves.csv"});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeformerNet shape-servoing laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;

  GenConfig gen_cfg;
  TrainConfig train_cfg;
  ServoConfig servo_cfg;
  EvalConfig eval_cfg;

  // the config file seeds the defaults; explicit flags override it
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) config_path = argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) config_path = arg.substr(9);
  }
  try {
    const json file_cfg = load_config_file(config_path);
    if (file_cfg.contains("gen")) from_json(file_cfg["gen"], gen_cfg);
    if (file_cfg.contains("train")) from_json(file_cfg["train"], train_cfg);
    if (file_cfg.contains("servo")) from_json(file_cfg["servo"], servo_cfg);
    if (file_cfg.contains("eval_episodes")) {
      from_json(file_cfg["eval_episodes"], eval_cfg.episodes);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out", out_dir, "output directory");
  auto* seed_opt = app.add_option("--seed", seed, "global random seed");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a training dataset")->fallthrough();
  gen->add_option("--episodes", gen_cfg.num_configs, "episode count");
  gen->add_option("--shapes", gen_cfg.shapes_per_config, "deformations per episode");
  gen->add_option("--cloud-size", gen_cfg.cloud_size, "points per cloud");
  gen->add_option("--mag-min", gen_cfg.magnitude_min, "min displacement, m");
  gen->add_option("--mag-max", gen_cfg.magnitude_max, "max displacement, m");
  gen->add_option("--grasp-radius", gen_cfg.grasp_radius, "grasp radius, m");
  gen->add_option("--mp-min-x-frac", gen_cfg.mp_min_x_fraction,
                  "restrict MPs to x >= frac * length");

  // train
  std::string variant = "deformer", data_path;
  auto* tr = app.add_subcommand("train", "train a model on a dataset")->fallthrough();
  tr->add_option("--data", data_path, "dataset .dfns file")->required();
  tr->add_option("--variant", variant, "deformer|mp|baseline");
  tr->add_option("--epochs", train_cfg.epochs, "training epochs");
  tr->add_option("--batch", train_cfg.batch_size, "batch size");
  tr->add_option("--lr", train_cfg.schedule.initial_lr, "initial learning rate");
  tr->add_option("--decay-every", train_cfg.schedule.decay_every,
                 "epochs between lr decays");
  tr->add_option("--test-fraction", train_cfg.test_fraction, "held-out episode fraction");

  // servo
  std::string deformer_path, mp_model_path, method = "ground-truth";
  std::size_t cases = 1;
  auto* sv = app.add_subcommand("servo", "closed-loop servo episodes")->fallthrough();
  sv->add_option("--deformer", deformer_path, "deformation model .dfnm")->required();
  sv->add_option("--mp-model", mp_model_path, "MP-regression model .dfnm");
  sv->add_option("--method", method, "ground-truth|heuristic|regression");
  sv->add_option("--cases", cases, "episode count");
  sv->add_option("--max-iters", servo_cfg.max_iters, "servo iteration cap");
  sv->add_option("--max-step", servo_cfg.max_step, "per-step displacement cap, m");
  sv->add_option("--cloud-size", gen_cfg.cloud_size, "points per observation");
  sv->add_option("--mp-min-x-frac", gen_cfg.mp_min_x_fraction,
                 "episode MP region restriction");

  // eval
  auto* ev = app.add_subcommand("eval", "paired MP-method evaluation")->fallthrough();
  ev->add_option("--deformer", deformer_path, "deformation model .dfnm")->required();
  ev->add_option("--mp-model", mp_model_path, "MP-regression model .dfnm");
  ev->add_option("--cases", eval_cfg.cases, "evaluation episodes");
  ev->add_option("--max-iters", eval_cfg.servo.max_iters, "servo iteration cap");

  // export-plots
  std::vector<std::string> run_dirs;
  auto* xp = app.add_subcommand("export-plots", "merge run CSVs for plotting")->fallthrough();
  xp->add_option("--runs", run_dirs, "run directories to scan")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (seed_opt->count() > 0) {
      gen_cfg.seed = seed;
      train_cfg.seed = seed;
      servo_cfg.seed = seed;
      eval_cfg.episodes.seed = seed;
    }

    if (gen->parsed()) return cmd_gen_data(gen_cfg, out_dir);
    if (tr->parsed()) return cmd_train(train_cfg, variant, data_path, out_dir);
    if (sv->parsed()) {
      return cmd_servo(gen_cfg, servo_cfg, deformer_path, mp_model_path, method,
                       cases, out_dir);
    }
    if (ev->parsed()) return cmd_eval(eval_cfg, deformer_path, mp_model_path, out_dir);
    if (xp->parsed()) return cmd_export_plots(run_dirs, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
