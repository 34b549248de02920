#include "cdt/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "cdt/error.hpp"
#include "cdt/fdaf.hpp"
#include "cdt/pgm.hpp"

namespace cdt {
namespace {

enum class ChangeOp { none, add, remove, move };

struct SceneObject {
  bool disk = true;
  double cx = 0, cy = 0;
  double p1 = 0, p2 = 0; // disk: radius in p1; rect: half-width/half-height
  double intensity = 0;
  ChangeOp op = ChangeOp::none;
  double mx = 0, my = 0; // destination center for move
};

double signed_unit(Rng& rng) { return rng.uniform() * 2.0 - 1.0; }

// Anti-aliased coverage of the pixel square [x-0.5, x+0.5] x [y-0.5, y+0.5].
double coverage(const SceneObject& o, double cx, double cy, int x, int y) {
  if (o.disk) {
    double d = std::hypot(x - cx, y - cy);
    return std::clamp(o.p1 + 0.5 - d, 0.0, 1.0);
  }
  double ox = std::min(cx + o.p1, x + 0.5) - std::max(cx - o.p1, x - 0.5);
  double oy = std::min(cy + o.p2, y + 0.5) - std::max(cy - o.p2, y - 0.5);
  return std::clamp(ox, 0.0, 1.0) * std::clamp(oy, 0.0, 1.0);
}

void composite(std::vector<double>& img, const SceneObject& o, double cx,
               double cy, int size) {
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double c = coverage(o, cx, cy, x, y);
      if (c > 0.0) {
        double& px = img[static_cast<size_t>(y) * size + x];
        px = px * (1.0 - c) + o.intensity * c;
      }
    }
}

void stamp_footprint(std::vector<double>& mask, const SceneObject& o,
                     double cx, double cy, int size) {
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (coverage(o, cx, cy, x, y) > 0.0)
        mask[static_cast<size_t>(y) * size + x] = 1.0;
}

// Keep a center inside the safe band [2, size-3] by reflecting at the edges.
double reflect_into(double v, double lo, double hi) {
  if (v < lo) v = 2.0 * lo - v;
  if (v > hi) v = 2.0 * hi - v;
  return std::clamp(v, lo, hi);
}

std::string sample_name(char kind, std::uint64_t i) {
  return std::string(1, kind) + "_" + std::to_string(i) + ".pgm";
}

} // namespace

void SceneConfig::validate() const {
  if (size < 8 || size % 4 != 0)
    throw config_error("scene size must be >= 8 and divisible by 4, got " +
                       std::to_string(size));
  if (n_objects_min < 0 || n_objects_max < n_objects_min)
    throw config_error("bad n_objects range");
  if (!(change_rate >= 0.0 && change_rate <= 1.0))
    throw config_error("change_rate must lie in [0, 1]");
  if (!(illum_delta >= 0.0) || !(noise_sigma >= 0.0) || !(misreg_max >= 0.0))
    throw config_error("nuisance magnitudes must be non-negative");
}

void to_json(nlohmann::json& j, const SceneConfig& cfg) {
  j = nlohmann::json{{"size", cfg.size},
                     {"n_objects_min", cfg.n_objects_min},
                     {"n_objects_max", cfg.n_objects_max},
                     {"change_rate", cfg.change_rate},
                     {"illum_delta", cfg.illum_delta},
                     {"noise_sigma", cfg.noise_sigma},
                     {"misreg_max", cfg.misreg_max},
                     {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, SceneConfig& cfg) {
  j.at("size").get_to(cfg.size);
  j.at("n_objects_min").get_to(cfg.n_objects_min);
  j.at("n_objects_max").get_to(cfg.n_objects_max);
  j.at("change_rate").get_to(cfg.change_rate);
  j.at("illum_delta").get_to(cfg.illum_delta);
  j.at("noise_sigma").get_to(cfg.noise_sigma);
  j.at("misreg_max").get_to(cfg.misreg_max);
  j.at("seed").get_to(cfg.seed);
}

SamplePair generate_pair(const SceneConfig& cfg, std::uint64_t index) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).fork(index);
  const int S = cfg.size;
  const size_t n_px = static_cast<size_t>(S) * S;

  // Smooth background gradient shared by both times.
  double base = signed_unit(rng) * 0.3;
  double gx = signed_unit(rng) * 0.5;
  double gy = signed_unit(rng) * 0.5;
  std::vector<double> bg(n_px);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x)
      bg[static_cast<size_t>(y) * S + x] =
          base + gx * (static_cast<double>(x) / (S - 1) - 0.5) +
          gy * (static_cast<double>(y) / (S - 1) - 0.5);

  const double lo = 2.0, hi = S - 3.0;
  int n = static_cast<int>(rng.uniform_int(cfg.n_objects_min, cfg.n_objects_max));
  std::vector<SceneObject> objs(n);
  for (auto& o : objs) {
    o.disk = rng.uniform() < 0.5;
    o.cx = lo + rng.uniform() * (hi - lo);
    o.cy = lo + rng.uniform() * (hi - lo);
    if (o.disk) {
      o.p1 = 1.5 + rng.uniform() * std::max(0.0, S / 6.0 - 1.5);
    } else {
      o.p1 = 1.2 + rng.uniform() * std::max(0.0, S / 8.0 - 1.2);
      o.p2 = 1.2 + rng.uniform() * std::max(0.0, S / 8.0 - 1.2);
    }
    double mag = 0.4 + rng.uniform() * 0.55;
    o.intensity = rng.uniform() < 0.5 ? -mag : mag;
  }

  int n_changed = 0;
  const double move_max = std::max(2.0, S / 4.0);
  for (auto& o : objs) {
    if (rng.uniform() >= cfg.change_rate) continue;
    ++n_changed;
    int pick = rng.uniform_int(0, 2);
    o.op = pick == 0 ? ChangeOp::add : pick == 1 ? ChangeOp::remove : ChangeOp::move;
    if (o.op == ChangeOp::move) {
      double dx = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (2.0 + rng.uniform() * (move_max - 2.0));
      double dy = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (2.0 + rng.uniform() * (move_max - 2.0));
      o.mx = reflect_into(o.cx + dx, lo, hi);
      o.my = reflect_into(o.cy + dy, lo, hi);
    }
  }

  // Rasterize; an "add" exists only at time B, a "remove" only at time A.
  std::vector<double> a = bg, b = bg, mask(n_px, 0.0);
  for (const auto& o : objs) {
    if (o.op != ChangeOp::add) composite(a, o, o.cx, o.cy, S);
    if (o.op != ChangeOp::remove) {
      double cx = o.op == ChangeOp::move ? o.mx : o.cx;
      double cy = o.op == ChangeOp::move ? o.my : o.cy;
      composite(b, o, cx, cy, S);
    }
    if (o.op == ChangeOp::none) continue;
    if (o.op != ChangeOp::add) stamp_footprint(mask, o, o.cx, o.cy, S);
    if (o.op != ChangeOp::remove) {
      double cx = o.op == ChangeOp::move ? o.mx : o.cx;
      double cy = o.op == ChangeOp::move ? o.my : o.cy;
      stamp_footprint(mask, o, cx, cy, S);
    }
  }

  // Nuisances, drawn in a fixed order regardless of magnitude. Applied to the
  // images only -- the mask above is already final.
  double illum_shift = signed_unit(rng) * cfg.illum_delta;
  double tx = signed_unit(rng) * cfg.misreg_max;
  double ty = signed_unit(rng) * cfg.misreg_max;
  Tensor noise_a = gaussian(rng, {S, S});
  Tensor noise_b = gaussian(rng, {S, S});

  if (illum_shift != 0.0)
    for (auto& v : b) v += illum_shift;
  if (cfg.noise_sigma > 0.0)
    for (size_t i = 0; i < n_px; ++i) {
      a[i] += cfg.noise_sigma * noise_a[i];
      b[i] += cfg.noise_sigma * noise_b[i];
    }

  Tensor ta = Tensor::from_data({1, S, S}, std::move(a));
  Tensor tb = Tensor::from_data({1, S, S}, std::move(b));
  if (tx != 0.0 || ty != 0.0) {
    std::vector<double> flow(2 * n_px);
    std::fill(flow.begin(), flow.begin() + n_px, tx);
    std::fill(flow.begin() + n_px, flow.end(), ty);
    tb = bilinear_warp(tb, Tensor::from_data({2, S, S}, std::move(flow)));
  }

  auto clamp_unit = [](const Tensor& t) {
    std::vector<double> v = t.values();
    for (auto& x : v) x = std::clamp(x, -1.0, 1.0);
    return Tensor::from_data(t.shape(), std::move(v));
  };

  SamplePair out;
  out.imgA = clamp_unit(ta);
  out.imgB = clamp_unit(tb);
  out.mask = Tensor::from_data({S, S}, std::move(mask));
  out.meta = PairMeta{index, n, n_changed, illum_shift, tx, ty};
  return out;
}

nlohmann::json write_dataset(const SceneConfig& cfg, int count,
                             const std::filesystem::path& dir) {
  cfg.validate();
  if (count < 1) throw config_error("dataset count must be positive");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create directory " + dir.string() + ": " + ec.message());

  nlohmann::json samples = nlohmann::json::array();
  for (int i = 0; i < count; ++i) {
    SamplePair p = generate_pair(cfg, static_cast<std::uint64_t>(i));
    write_pgm(dir / sample_name('A', i), p.imgA);
    write_pgm(dir / sample_name('B', i), p.imgB);
    write_mask_pgm(dir / sample_name('M', i), p.mask);
    samples.push_back({{"index", p.meta.index},
                       {"n_objects", p.meta.n_objects},
                       {"n_changed", p.meta.n_changed},
                       {"illum_shift", p.meta.illum_shift},
                       {"tx", p.meta.tx},
                       {"ty", p.meta.ty}});
  }
  nlohmann::json manifest{{"config", cfg}, {"count", count}, {"samples", samples}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw io_error("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
  if (!out) throw io_error("manifest write failed in " + dir.string());
  return manifest;
}

std::vector<SamplePair> read_dataset(const std::filesystem::path& dir) {
  std::filesystem::path mpath = dir / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw io_error("missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  SceneConfig cfg;
  int count = 0;
  nlohmann::json samples;
  try {
    in >> manifest;
    cfg = manifest.at("config").get<SceneConfig>();
    count = manifest.at("count").get<int>();
    samples = manifest.at("samples");
  } catch (const nlohmann::json::exception& e) {
    throw io_error("corrupt manifest " + mpath.string() + ": " + e.what());
  }
  if (count < 1 || !samples.is_array() ||
      static_cast<int>(samples.size()) != count)
    throw io_error("manifest count mismatch in " + mpath.string());

  std::vector<SamplePair> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    SamplePair p;
    p.imgA = read_pgm(dir / sample_name('A', i));
    p.imgB = read_pgm(dir / sample_name('B', i));
    p.mask = read_mask_pgm(dir / sample_name('M', i));
    Shape img_shape{1, cfg.size, cfg.size};
    if (p.imgA.shape() != img_shape || p.imgB.shape() != img_shape ||
        p.mask.shape() != Shape{cfg.size, cfg.size})
      throw io_error("image extents disagree with manifest in " + dir.string());
    try {
      const nlohmann::json& s = samples.at(i);
      p.meta.index = s.at("index").get<std::uint64_t>();
      p.meta.n_objects = s.at("n_objects").get<int>();
      p.meta.n_changed = s.at("n_changed").get<int>();
      p.meta.illum_shift = s.at("illum_shift").get<double>();
      p.meta.tx = s.at("tx").get<double>();
      p.meta.ty = s.at("ty").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw io_error("corrupt sample meta in " + mpath.string() + ": " + e.what());
    }
    out.push_back(std::move(p));
  }
  return out;
}

} // namespace cdt
