#include "daseg/data/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "daseg/data/color.hpp"
#include "daseg/data/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace daseg::data {

namespace {

constexpr uint64_t kSceneSalt = 1;
constexpr uint64_t kShiftSalt = 2;

Hsv stuff_base_color(int band) {
  switch (band) {
    case 0: return {0.58, 0.28, 0.92};
    case 1: return {0.32, 0.45, 0.55};
    case 2: return {0.60, 0.10, 0.24};
    default: {
      const double h = std::fmod(0.1 + 0.27 * band, 1.0);
      return {h, 0.35, std::max(0.15, 0.9 - 0.18 * band)};
    }
  }
}

Hsv thing_base_color(int thing_idx, int n_things) {
  return {static_cast<double>(thing_idx) / n_things, 0.85, 0.72};
}

int shape_type(int class_id, int bands) { return (class_id - bands) % 3; }

void validate_config(const ToyDomainConfig& cfg) {
  require(cfg.canvas_h > 0 && cfg.canvas_w > 0, "toy config: canvas must be positive");
  require(cfg.stuff_bands >= 1, "toy config: need at least one stuff band");
  require(cfg.num_classes > cfg.stuff_bands, "toy config: need at least one thing class");
  require(cfg.shape_count_min >= 0 && cfg.shape_count_max >= cfg.shape_count_min,
          "toy config: bad shape count range");
}

}  // namespace

DatasetMeta make_toy_meta(const ToyDomainConfig& cfg) {
  validate_config(cfg);
  DatasetMeta meta;
  meta.num_samples = cfg.num_samples;
  meta.domain = cfg.domain;
  const int B = cfg.stuff_bands, K = cfg.num_classes;
  const int n_things = K - B;
  static const char* band3[] = {"sky", "field", "road"};
  static const char* thing_names[] = {"box", "blob", "pole"};
  for (int k = 0; k < K; ++k) {
    Hsv base;
    std::string name;
    const bool thing = k >= B;
    if (!thing) {
      base = stuff_base_color(k);
      name = B == 3 ? band3[k] : "stuff" + std::to_string(k);
    } else {
      const int ti = k - B;
      base = thing_base_color(ti, n_things);
      name = thing_names[shape_type(k, B)];
      if (ti >= 3) name += std::to_string(ti / 3 + 1);
    }
    const Rgb rgb = hsv_to_rgb(base);
    meta.class_names.push_back(name);
    meta.thing_flags.push_back(thing);
    meta.palette.push_back({static_cast<uint8_t>(std::lround(clamp01(rgb.r) * 255)),
                            static_cast<uint8_t>(std::lround(clamp01(rgb.g) * 255)),
                            static_cast<uint8_t>(std::lround(clamp01(rgb.b) * 255))});
  }
  return meta;
}

Sample generate_toy_sample(const ToyDomainConfig& cfg, int index) {
  validate_config(cfg);
  require(index >= 0 && index < cfg.num_samples, "generate_toy_sample: index out of range");
  const int H = cfg.canvas_h, W = cfg.canvas_w;
  const int B = cfg.stuff_bands, K = cfg.num_classes;
  const int n_things = K - B;

  // The scene stream drives everything the label depends on plus the clean
  // appearance, so paired source/target configs produce identical labels and
  // (pre-shift) identical images.
  Rng scene(Rng::mix(cfg.seed, static_cast<uint64_t>(index), kSceneSalt));

  // Stuff bands with wavy boundaries.
  std::vector<double> phase(B), freq(B), amp(B);
  for (int b = 1; b < B; ++b) {
    phase[b] = scene.uniform(0.0, 2.0 * M_PI);
    freq[b] = cfg.band_wave_freq * scene.uniform(0.8, 1.2);
    amp[b] = cfg.band_wave_amplitude * H * scene.uniform(0.7, 1.3);
  }
  LabelMap label(H, W);
  for (int x = 0; x < W; ++x) {
    double prev = 0.0;
    for (int b = 1; b <= B; ++b) {
      double next = b == B ? H
                           : static_cast<double>(H) * b / B +
                                 amp[b] * std::sin(2.0 * M_PI * freq[b] * x / W + phase[b]);
      next = std::min<double>(H, std::max(prev, next));
      for (int y = static_cast<int>(prev); y < static_cast<int>(next) && y < H; ++y)
        label(y, x) = b - 1;
      prev = next;
    }
    for (int y = static_cast<int>(prev); y < H; ++y) label(y, x) = B - 1;
  }

  // Thing shapes. Bar-type classes are intentionally rare and thin.
  std::vector<double> weights(n_things);
  double wsum = 0.0;
  for (int ti = 0; ti < n_things; ++ti) {
    weights[ti] = shape_type(B + ti, B) == 2 ? cfg.bar_class_weight : 1.0;
    wsum += weights[ti];
  }
  const int n_shapes = scene.uniform_int(cfg.shape_count_min, cfg.shape_count_max);
  for (int s = 0; s < n_shapes; ++s) {
    double u = scene.uniform() * wsum;
    int ti = 0;
    while (ti + 1 < n_things && u > weights[ti]) {
      u -= weights[ti];
      ++ti;
    }
    const int cls = B + ti;
    const int type = shape_type(cls, B);
    const int cy = scene.uniform_int(0, H - 1), cx = scene.uniform_int(0, W - 1);
    if (type == 0) {  // rectangle
      const int hy = scene.uniform_int(5, std::max(6, H / 5));
      const int hx = scene.uniform_int(5, std::max(6, W / 5));
      for (int y = std::max(0, cy - hy); y <= std::min(H - 1, cy + hy); ++y)
        for (int x = std::max(0, cx - hx); x <= std::min(W - 1, cx + hx); ++x) label(y, x) = cls;
    } else if (type == 1) {  // ellipse
      const int ry = scene.uniform_int(5, std::max(6, H / 6));
      const int rx = scene.uniform_int(5, std::max(6, W / 6));
      for (int y = std::max(0, cy - ry); y <= std::min(H - 1, cy + ry); ++y)
        for (int x = std::max(0, cx - rx); x <= std::min(W - 1, cx + rx); ++x) {
          const double dy = static_cast<double>(y - cy) / ry, dx = static_cast<double>(x - cx) / rx;
          if (dy * dy + dx * dx <= 1.0) label(y, x) = cls;
        }
    } else {  // thin vertical bar
      const int bw = scene.uniform_int(2, 3);
      const int hh = scene.uniform_int(H / 5, std::max(H / 5 + 1, 2 * H / 5));
      for (int y = std::max(0, cy - hh); y <= std::min(H - 1, cy + hh); ++y)
        for (int x = cx; x < std::min(W, cx + bw); ++x) label(y, x) = cls;
    }
  }

  // Clean appearance: per-class base colors with small per-sample jitter.
  const double value_jitter = scene.uniform(-0.05, 0.05);
  std::vector<double> hue_jitter(K);
  for (int k = 0; k < K; ++k) hue_jitter[k] = scene.uniform(-0.015, 0.015);
  std::vector<Hsv> class_color(K);
  for (int k = 0; k < K; ++k)
    class_color[k] = k < B ? stuff_base_color(k) : thing_base_color(k - B, n_things);

  Tensor<float> image(H, W, 3);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double pix_noise = scene.uniform(-0.025, 0.025);
      Hsv c = class_color[label(y, x)];
      c.h = c.h + hue_jitter[label(y, x)];
      c.h -= std::floor(c.h);
      c.v = clamp01(c.v + value_jitter + pix_noise);
      const Rgb rgb = hsv_to_rgb(c);
      image(y, x, 0) = static_cast<float>(rgb.r);
      image(y, x, 1) = static_cast<float>(rgb.g);
      image(y, x, 2) = static_cast<float>(rgb.b);
    }
  }

  // Appearance shift for the target domain; labels stay untouched.
  if (cfg.domain == Domain::target && !cfg.shift.is_identity()) {
    Rng shift_rng(Rng::mix(cfg.seed, static_cast<uint64_t>(index), kShiftSalt));
    const double hue_frac = cfg.shift.hue_rotation_deg / 360.0;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        Rgb c{image(y, x, 0), image(y, x, 1), image(y, x, 2)};
        if (cfg.shift.hue_rotation_deg != 0.0) c = rotate_hue(c, hue_frac);
        if (cfg.shift.noise_std > 0.0) {
          c.r += shift_rng.normal() * cfg.shift.noise_std;
          c.g += shift_rng.normal() * cfg.shift.noise_std;
          c.b += shift_rng.normal() * cfg.shift.noise_std;
        }
        if (cfg.shift.texture_frequency > 0.0) {
          const double tex = cfg.shift.texture_amplitude *
                             std::sin(2.0 * M_PI * cfg.shift.texture_frequency * x) *
                             std::sin(2.0 * M_PI * cfg.shift.texture_frequency * y);
          c.r += tex;
          c.g += tex;
          c.b += tex;
        }
        image(y, x, 0) = static_cast<float>(clamp01(c.r));
        image(y, x, 1) = static_cast<float>(clamp01(c.g));
        image(y, x, 2) = static_cast<float>(clamp01(c.b));
      }
    }
  }

  // Snap to the 8-bit grid so the on-disk PNG round-trip is lossless.
  image.m = image.m.unaryExpr(
      [](float v) { return static_cast<float>(std::lround(clamp01(v) * 255.0)) / 255.0f; });

  Sample s;
  s.image = std::move(image);
  s.label = std::move(label);
  s.domain = cfg.domain;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05d", cfg.domain == Domain::source ? "src" : "tgt", index);
  s.id = buf;
  return s;
}

Dataset make_toy_dataset(const ToyDomainConfig& cfg) {
  Dataset ds;
  ds.meta = make_toy_meta(cfg);
  ds.samples.reserve(cfg.num_samples);
  for (int i = 0; i < cfg.num_samples; ++i) ds.samples.push_back(generate_toy_sample(cfg, i));
  return ds;
}

LabelMap label_resize_nearest(const LabelMap& label, int oh, int ow) {
  require(oh > 0 && ow > 0, "label_resize_nearest: sizes must be positive");
  LabelMap out(oh, ow);
  const int ih = static_cast<int>(label.rows()), iw = static_cast<int>(label.cols());
  for (int y = 0; y < oh; ++y) {
    int sy = static_cast<int>(std::floor((y + 0.5) * ih / oh));
    sy = std::min(std::max(sy, 0), ih - 1);
    for (int x = 0; x < ow; ++x) {
      int sx = static_cast<int>(std::floor((x + 0.5) * iw / ow));
      sx = std::min(std::max(sx, 0), iw - 1);
      out(y, x) = label(sy, sx);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

void save_dataset(const std::string& root, const Dataset& ds) {
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "labels");

  json meta;
  meta["version"] = 1;
  meta["class_names"] = ds.meta.class_names;
  std::vector<int> flags;
  for (const bool f : ds.meta.thing_flags) flags.push_back(f ? 1 : 0);
  meta["thing_flags"] = flags;
  json pal = json::array();
  for (const auto& p : ds.meta.palette) pal.push_back({p[0], p[1], p[2]});
  meta["palette"] = pal;
  meta["num_samples"] = static_cast<int>(ds.samples.size());
  meta["domain"] = domain_name(ds.meta.domain);
  std::ofstream mf(fs::path(root) / "meta.json");
  require(mf.good(), "save_dataset: cannot write meta.json under " + root);
  mf << meta.dump(2) << "\n";

  for (const auto& s : ds.samples) {
    ImageU8 img;
    img.h = s.image.h;
    img.w = s.image.w;
    img.channels = 3;
    img.pixels.resize(static_cast<size_t>(img.h) * img.w * 3);
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        for (int c = 0; c < 3; ++c)
          img.pixels[(static_cast<size_t>(y) * img.w + x) * 3 + c] =
              static_cast<uint8_t>(std::lround(clamp01(s.image(y, x, c)) * 255.0));
    write_png((fs::path(root) / "images" / (s.id + ".png")).string(), img);

    ImageU8 lab;
    lab.h = static_cast<int>(s.label.rows());
    lab.w = static_cast<int>(s.label.cols());
    lab.channels = 1;
    lab.pixels.resize(static_cast<size_t>(lab.h) * lab.w);
    for (int y = 0; y < lab.h; ++y)
      for (int x = 0; x < lab.w; ++x)
        lab.pixels[static_cast<size_t>(y) * lab.w + x] = static_cast<uint8_t>(s.label(y, x));
    write_png((fs::path(root) / "labels" / (s.id + ".png")).string(), lab);
  }
}

Dataset load_dataset(const std::string& root) {
  const fs::path rp(root);
  require(fs::exists(rp / "meta.json"), "load_dataset: missing meta.json in " + root);
  require(fs::is_directory(rp / "images") && fs::is_directory(rp / "labels"),
          "load_dataset: expected images/ and labels/ under " + root);

  std::ifstream mf(rp / "meta.json");
  json meta = json::parse(mf);
  Dataset ds;
  ds.meta.class_names = meta.at("class_names").get<std::vector<std::string>>();
  for (const int f : meta.at("thing_flags").get<std::vector<int>>())
    ds.meta.thing_flags.push_back(f != 0);
  for (const auto& p : meta.at("palette"))
    ds.meta.palette.push_back({p[0].get<uint8_t>(), p[1].get<uint8_t>(), p[2].get<uint8_t>()});
  ds.meta.domain =
      meta.value("domain", std::string("source")) == "target" ? Domain::target : Domain::source;
  const int K = ds.meta.num_classes();
  require(static_cast<int>(ds.meta.thing_flags.size()) == K &&
              static_cast<int>(ds.meta.palette.size()) == K,
          "load_dataset: meta lists must all have K entries");

  std::vector<fs::path> image_files;
  for (const auto& e : fs::directory_iterator(rp / "images"))
    if (e.path().extension() == ".png") image_files.push_back(e.path());
  std::sort(image_files.begin(), image_files.end());

  for (const auto& ip : image_files) {
    const std::string id = ip.stem().string();
    const fs::path lp = rp / "labels" / (id + ".png");
    if (!fs::exists(lp))
      throw std::runtime_error("load_dataset: missing label for image " + ip.string());

    const ImageU8 img = read_png(ip.string());
    require(img.channels == 3, "load_dataset: image must be RGB: " + ip.string());
    const ImageU8 lab = read_png(lp.string());
    require(lab.channels == 1, "load_dataset: label must be single-channel: " + lp.string());
    require(lab.h == img.h && lab.w == img.w, "load_dataset: image/label size mismatch for " + id);

    Sample s;
    s.id = id;
    s.domain = ds.meta.domain;
    s.image = Tensor<float>(img.h, img.w, 3);
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        for (int c = 0; c < 3; ++c) s.image(y, x, c) = img.at(y, x, c) / 255.0f;
    s.label = LabelMap(lab.h, lab.w);
    for (int y = 0; y < lab.h; ++y)
      for (int x = 0; x < lab.w; ++x) {
        const int v = lab.at(y, x, 0);
        if (v != kIgnoreLabel && v >= K)
          throw std::runtime_error("load_dataset: label value " + std::to_string(v) +
                                   " out of range in " + lp.string());
        s.label(y, x) = v;
      }
    ds.samples.push_back(std::move(s));
  }
  ds.meta.num_samples = static_cast<int>(ds.samples.size());
  return ds;
}

}  // namespace daseg::data
