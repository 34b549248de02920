#include "cdt/cli.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>

#include <CLI11.hpp>

#include "cdt/checkpoint.hpp"
#include "cdt/config.hpp"
#include "cdt/error.hpp"
#include "cdt/pgm.hpp"
#include "cdt/pipeline.hpp"

namespace cdt {
namespace {

namespace fs = std::filesystem;

struct GlobalArgs {
  std::string config_path;
  std::string out_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig effective_config(const GlobalArgs& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
  if (g.seed_set) {
    cfg.train.seed = g.seed;
    cfg.data.scene.seed = g.seed;
  }
  cfg.validate();
  return cfg;
}

const nlohmann::json& checkpoint_config(const Checkpoint& ck, const std::string& what) {
  auto it = ck.manifest.find("config");
  if (it == ck.manifest.end() || !it->is_object())
    throw io_error(what + " checkpoint lacks a config echo");
  return *it;
}

void require_matching_sections(const nlohmann::json& ours, const nlohmann::json& echo,
                               std::initializer_list<const char*> sections,
                               const std::string& what) {
  for (const char* key : sections) {
    if (!echo.contains(key) || echo.at(key) != ours.at(key))
      throw config_error("config section '" + std::string(key) + "' disagrees with the " +
                         what + " checkpoint; re-run with the matching config");
  }
}

Tensor prob_to_pgm_range(const Tensor& prob) {
  std::vector<double> v = prob.values();
  for (double& x : v) x = 2.0 * x - 1.0;
  return Tensor::from_data(prob.shape(), std::move(v));
}

void write_cd_curve(const fs::path& path, const std::vector<CdEpochStat>& epochs) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write curve " + path.string());
  out << "epoch,train_loss,val_f1\n";
  char buf[96];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_f1);
    out << buf;
  }
  if (!out) throw io_error("curve write failed " + path.string());
}

void cmd_synth(const GlobalArgs& g, int count, std::ostream& out) {
  if (g.out_path.empty()) throw config_error("synth: --out is required");
  RunConfig cfg = effective_config(g);
  write_dataset(cfg.data.scene, count, g.out_path);
  out << (fs::path(g.out_path) / "manifest.json").string() << "\n";
}

void cmd_train_diffusion(const GlobalArgs& g, std::string data_dir, int steps_override,
                         std::ostream& out) {
  if (g.out_path.empty()) throw config_error("train-diffusion: --out is required");
  RunConfig cfg = effective_config(g);
  if (steps_override >= 0) cfg.train.steps = steps_override;
  if (data_dir.empty()) data_dir = cfg.data.train_dir;

  std::vector<SamplePair> data = read_dataset(data_dir);
  DiffusionTrainResult res = train_diffusion(cfg, data, &out);
  save_checkpoint(g.out_path, "diffusion", run_config_to_json(cfg), res.params);
  write_loss_csv(fs::path(g.out_path) / "loss_curve.csv", res.losses);
  if (!res.losses.empty())
    out << "final_loss " << res.losses.back() << "\n";
  out << "checkpoint " << g.out_path << "\n";
}

void cmd_train_cd(const GlobalArgs& g, const std::string& backbone_dir, std::string data_dir,
                  std::string val_dir, const std::string& fdaf_flag, bool unfreeze,
                  int steps_override, std::ostream& out) {
  if (g.out_path.empty()) throw config_error("train-cd: --out is required");
  RunConfig cfg = effective_config(g);
  if (steps_override >= 0) cfg.train.steps = steps_override;
  if (!fdaf_flag.empty())
    cfg.fdaf.mode = fdaf_flag == "on" ? AlignMode::dual : parse_align_mode(fdaf_flag);
  if (data_dir.empty()) data_dir = cfg.data.train_dir;
  if (val_dir.empty()) val_dir = cfg.data.val_dir;

  Checkpoint backbone = load_checkpoint(backbone_dir, "diffusion");
  require_matching_sections(run_config_to_json(cfg), checkpoint_config(backbone, "diffusion"),
                            {"schedule", "unet"}, "diffusion");

  std::vector<SamplePair> train_data = read_dataset(data_dir);
  std::vector<SamplePair> val_data = read_dataset(val_dir);

  CdTrainResult res = train_cd(cfg, unfreeze, backbone.params, train_data, val_data, &out);
  save_checkpoint(g.out_path, "cd", run_config_to_json(cfg), res.head_params);
  write_cd_curve(fs::path(g.out_path) / "cd_curve.csv", res.epochs);
  if (unfreeze)
    save_checkpoint(fs::path(g.out_path) / "backbone", "diffusion", run_config_to_json(cfg),
                    res.backbone_params);
  out << "checkpoint " << g.out_path << "\n";
}

void cmd_eval(const GlobalArgs& g, const std::string& backbone_dir, const std::string& cd_dir,
              std::string data_dir, const std::string& heatmap_dir, std::ostream& out) {
  Checkpoint backbone = load_checkpoint(backbone_dir, "diffusion");
  Checkpoint cd = load_checkpoint(cd_dir, "cd");
  RunConfig cfg = parse_run_config(checkpoint_config(cd, "cd"));
  require_matching_sections(run_config_to_json(cfg), checkpoint_config(backbone, "diffusion"),
                            {"schedule", "unet"}, "diffusion");
  if (data_dir.empty()) data_dir = cfg.data.test_dir;

  std::vector<SamplePair> data = read_dataset(data_dir);
  EvalResult res = evaluate_dataset(cfg, backbone.params, cd.params, data);

  nlohmann::json per_sample = nlohmann::json::array();
  for (size_t i = 0; i < res.per_sample.size(); ++i) {
    nlohmann::json r = metrics_to_json(res.per_sample[i]);
    r["index"] = i;
    per_sample.push_back(std::move(r));
  }
  nlohmann::json report{{"config", run_config_to_json(cfg)},
                        {"n_samples", data.size()},
                        {"aggregate", metrics_to_json(res.aggregate)},
                        {"per_sample", per_sample},
                        {"best_tau", {{"tau", res.best_tau}, {"f1", res.best_tau_f1}}}};

  fs::path report_path = g.out_path.empty() ? fs::path("report.json") : fs::path(g.out_path);
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  std::ofstream rf(report_path);
  if (!rf) throw io_error("cannot write report " + report_path.string());
  rf << report.dump(2) << "\n";
  if (!rf) throw io_error("report write failed " + report_path.string());

  if (!heatmap_dir.empty()) {
    fs::create_directories(heatmap_dir);
    for (size_t i = 0; i < res.probs.size(); ++i)
      write_pgm(fs::path(heatmap_dir) / ("H_" + std::to_string(i) + ".pgm"),
                prob_to_pgm_range(res.probs[i]));
  }
  out << "f1 " << res.aggregate.f1 << "\n";
  out << "report " << report_path.string() << "\n";
}

void cmd_infer(const GlobalArgs& g, const std::string& backbone_dir, const std::string& cd_dir,
               const std::string& a_path, const std::string& b_path, std::ostream& out) {
  Checkpoint backbone = load_checkpoint(backbone_dir, "diffusion");
  Checkpoint cd = load_checkpoint(cd_dir, "cd");
  RunConfig cfg = parse_run_config(checkpoint_config(cd, "cd"));
  require_matching_sections(run_config_to_json(cfg), checkpoint_config(backbone, "diffusion"),
                            {"schedule", "unet"}, "diffusion");

  Tensor a = read_pgm(a_path);
  Tensor b = read_pgm(b_path);
  Tensor prob = predict_prob(cfg, backbone.params, cd.params, a, b, 0);
  Tensor mask = threshold(prob, cfg.cd.tau);

  fs::path out_dir = g.out_path.empty() ? fs::path(".") : fs::path(g.out_path);
  fs::create_directories(out_dir);
  write_mask_pgm(out_dir / "mask.pgm", mask);
  write_pgm(out_dir / "prob.pgm", prob_to_pgm_range(prob));

  double frac = 0;
  for (size_t i = 0; i < mask.size(); ++i) frac += mask[i];
  frac /= static_cast<double>(mask.size());
  out << "change_fraction " << frac << "\n";
  out << "outputs " << (out_dir / "mask.pgm").string() << " " << (out_dir / "prob.pgm").string()
      << "\n";
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusion-feature change detection on synthetic bi-temporal scenes"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs g;
  app.add_option("--config", g.config_path, "JSON run configuration");
  app.add_option("--out", g.out_path, "output path (dataset dir / checkpoint dir / report)");
  auto* seed_opt = app.add_option("--seed", g.seed, "override train and scene seeds");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  int count = 0;
  synth->add_option("--count", count, "number of sample pairs")->required();

  auto* td = app.add_subcommand("train-diffusion", "pretrain the denoiser");
  std::string td_data;
  int td_steps = -1;
  td->add_option("--data", td_data, "training dataset directory");
  td->add_option("--steps", td_steps, "override train.steps");

  auto* tc = app.add_subcommand("train-cd", "train flow alignment + change classifier");
  std::string tc_backbone, tc_data, tc_val, tc_fdaf;
  bool tc_unfreeze = false;
  int tc_steps = -1;
  tc->add_option("--backbone", tc_backbone, "diffusion checkpoint directory")->required();
  tc->add_option("--data", tc_data, "training dataset directory");
  tc->add_option("--val", tc_val, "validation dataset directory");
  tc->add_option("--fdaf", tc_fdaf, "alignment mode: on|off|dual")
      ->check(CLI::IsMember({"on", "off", "dual"}));
  tc->add_flag("--unfreeze", tc_unfreeze, "also fine-tune the diffusion backbone");
  tc->add_option("--steps", tc_steps, "override train.steps");

  auto* ev = app.add_subcommand("eval", "evaluate on a dataset and write report.json");
  std::string ev_backbone, ev_cd, ev_data, ev_heatmaps;
  ev->add_option("--backbone", ev_backbone, "diffusion checkpoint directory")->required();
  ev->add_option("--cd", ev_cd, "change-detection checkpoint directory")->required();
  ev->add_option("--data", ev_data, "evaluation dataset directory");
  ev->add_option("--heatmaps", ev_heatmaps, "directory for per-sample probability PGMs");

  auto* in = app.add_subcommand("infer", "predict a change mask for one image pair");
  std::string in_backbone, in_cd, in_a, in_b;
  in->add_option("--backbone", in_backbone, "diffusion checkpoint directory")->required();
  in->add_option("--cd", in_cd, "change-detection checkpoint directory")->required();
  in->add_option("--a", in_a, "time-A image (PGM)")->required();
  in->add_option("--b", in_b, "time-B image (PGM)")->required();

  try {
    app.parse(argc, argv);
    g.seed_set = seed_opt->count() > 0;
    if (app.got_subcommand(synth)) cmd_synth(g, count, out);
    if (app.got_subcommand(td)) cmd_train_diffusion(g, td_data, td_steps, out);
    if (app.got_subcommand(tc))
      cmd_train_cd(g, tc_backbone, tc_data, tc_val, tc_fdaf, tc_unfreeze, tc_steps, out);
    if (app.got_subcommand(ev)) cmd_eval(g, ev_backbone, ev_cd, ev_data, ev_heatmaps, out);
    if (app.got_subcommand(in)) cmd_infer(g, in_backbone, in_cd, in_a, in_b, out);
    return 0;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const io_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const config_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const contract_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const shape_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const numeric_error& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

} // namespace cdt
