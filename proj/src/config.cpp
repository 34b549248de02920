#include "cdt/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "cdt/error.hpp"
#include "cdt/schedule.hpp"

namespace cdt {
namespace {

// Wraps one JSON object level: fields are fetched by name, and finish()
// rejects anything that was never asked for, reporting the full path.
class StrictObj {
 public:
  StrictObj(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw config_error((path_.empty() ? std::string("config") : path_) +
                         ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      it->get_to(out);
    } catch (const nlohmann::json::exception& e) {
      throw config_error(child(key) + ": " + e.what());
    }
  }

  const nlohmann::json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string child(const char* key) const {
    return path_.empty() ? std::string(key) : path_ + "." + key;
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key()))
        throw config_error("unknown config key: " +
                           (path_.empty() ? item.key() : path_ + "." + item.key()));
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_schedule(const nlohmann::json& j, const std::string& path, ScheduleConfig& out) {
  StrictObj o(j, path);
  o.get("T", out.T);
  o.get("beta_start", out.beta_start);
  o.get("beta_end", out.beta_end);
  o.finish();
}

void parse_unet(const nlohmann::json& j, const std::string& path, UNetConfig& out) {
  StrictObj o(j, path);
  o.get("in_channels", out.in_channels);
  o.get("base_channels", out.base_channels);
  o.get("depth", out.depth);
  o.get("time_embed_dim", out.time_embed_dim);
  o.get("tap_layers", out.tap_layers);
  o.get("norm_groups", out.norm_groups);
  o.finish();
}

void parse_fdaf(const nlohmann::json& j, const std::string& path, FdafConfig& out) {
  StrictObj o(j, path);
  std::string mode = align_mode_name(out.mode);
  o.get("mode", mode);
  try {
    out.mode = parse_align_mode(mode);
  } catch (const config_error& e) {
    throw config_error(o.child("mode") + ": " + e.what());
  }
  o.get("max_flow", out.max_flow);
  o.get("hidden", out.hidden);
  o.finish();
}

void parse_cd(const nlohmann::json& j, const std::string& path, CdConfig& out) {
  StrictObj o(j, path);
  o.get("head_channels", out.head_channels);
  o.get("tau", out.tau);
  o.finish();
}

void parse_train(const nlohmann::json& j, const std::string& path, TrainConfig& out) {
  StrictObj o(j, path);
  o.get("lr", out.lr);
  o.get("batch", out.batch);
  o.get("steps", out.steps);
  o.get("seed", out.seed);
  o.finish();
}

void parse_features(const nlohmann::json& j, const std::string& path, FeatureConfig& out) {
  StrictObj o(j, path);
  o.get("timesteps", out.timesteps);
  o.get("seed", out.seed);
  o.finish();
}

void parse_scene(const nlohmann::json& j, const std::string& path, SceneConfig& out) {
  StrictObj o(j, path);
  o.get("size", out.size);
  o.get("n_objects_min", out.n_objects_min);
  o.get("n_objects_max", out.n_objects_max);
  o.get("change_rate", out.change_rate);
  o.get("illum_delta", out.illum_delta);
  o.get("noise_sigma", out.noise_sigma);
  o.get("misreg_max", out.misreg_max);
  o.get("seed", out.seed);
  o.finish();
}

void parse_data(const nlohmann::json& j, const std::string& path, DataConfig& out) {
  StrictObj o(j, path);
  o.get("train_dir", out.train_dir);
  o.get("val_dir", out.val_dir);
  o.get("test_dir", out.test_dir);
  if (const nlohmann::json* s = o.sub("scene")) parse_scene(*s, o.child("scene"), out.scene);
  o.finish();
}

} // namespace

void RunConfig::validate() const {
  make_linear_schedule(schedule.T, schedule.beta_start, schedule.beta_end); // throws on bad
  unet.validate();
  fdaf.validate();
  cd.validate();
  data.scene.validate();
  if (!(train.lr > 0.0) || !std::isfinite(train.lr))
    throw config_error("train.lr must be positive and finite");
  if (train.batch < 1) throw config_error("train.batch must be at least 1");
  if (train.steps < 0) throw config_error("train.steps must be non-negative");
  if (features.timesteps.empty()) throw config_error("features.timesteps must be non-empty");
  for (size_t i = 0; i < features.timesteps.size(); ++i) {
    int k = features.timesteps[i];
    if (k < 1 || k > schedule.T)
      throw config_error("features.timesteps entries must lie in [1, T]");
    if (i > 0 && features.timesteps[i - 1] >= k)
      throw config_error("features.timesteps must be strictly increasing");
  }
  if (unet.in_channels != 1)
    throw config_error("unet.in_channels must be 1 for the grayscale pipeline");
  if (data.scene.size % (1 << unet.depth) != 0)
    throw config_error("data.scene.size must be divisible by 2^unet.depth");
}

RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig cfg;
  StrictObj o(j, "");
  if (const nlohmann::json* s = o.sub("schedule")) parse_schedule(*s, "schedule", cfg.schedule);
  if (const nlohmann::json* s = o.sub("unet")) parse_unet(*s, "unet", cfg.unet);
  if (const nlohmann::json* s = o.sub("fdaf")) parse_fdaf(*s, "fdaf", cfg.fdaf);
  if (const nlohmann::json* s = o.sub("cd")) parse_cd(*s, "cd", cfg.cd);
  if (const nlohmann::json* s = o.sub("train")) parse_train(*s, "train", cfg.train);
  if (const nlohmann::json* s = o.sub("features")) parse_features(*s, "features", cfg.features);
  if (const nlohmann::json* s = o.sub("data")) parse_data(*s, "data", cfg.data);
  o.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error("malformed config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  return nlohmann::json{
      {"schedule",
       {{"T", cfg.schedule.T},
        {"beta_start", cfg.schedule.beta_start},
        {"beta_end", cfg.schedule.beta_end}}},
      {"unet",
       {{"in_channels", cfg.unet.in_channels},
        {"base_channels", cfg.unet.base_channels},
        {"depth", cfg.unet.depth},
        {"time_embed_dim", cfg.unet.time_embed_dim},
        {"tap_layers", cfg.unet.tap_layers},
        {"norm_groups", cfg.unet.norm_groups}}},
      {"fdaf",
       {{"mode", align_mode_name(cfg.fdaf.mode)},
        {"max_flow", cfg.fdaf.max_flow},
        {"hidden", cfg.fdaf.hidden}}},
      {"cd", {{"head_channels", cfg.cd.head_channels}, {"tau", cfg.cd.tau}}},
      {"train",
       {{"lr", cfg.train.lr},
        {"batch", cfg.train.batch},
        {"steps", cfg.train.steps},
        {"seed", cfg.train.seed}}},
      {"features", {{"timesteps", cfg.features.timesteps}, {"seed", cfg.features.seed}}},
      {"data",
       {{"train_dir", cfg.data.train_dir},
        {"val_dir", cfg.data.val_dir},
        {"test_dir", cfg.data.test_dir},
        {"scene", cfg.data.scene}}}};
}

} // namespace cdt
