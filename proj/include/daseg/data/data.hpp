#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "daseg/core/random.hpp"
#include "daseg/core/tensor.hpp"
#include "daseg/nn/spatial.hpp"

namespace daseg::data {

enum class Domain { source, target };

inline const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

/// One training/eval unit: image in [0,1], integer label map, domain tag.
struct Sample {
  Tensor<float> image;  // (h, w, 3)
  LabelMap label;       // (h, w), values in [0,K) or kIgnoreLabel
  Domain domain = Domain::source;
  std::string id;
};

struct DatasetMeta {
  std::vector<std::string> class_names;
  std::vector<bool> thing_flags;
  std::vector<std::array<uint8_t, 3>> palette;
  int num_samples = 0;
  Domain domain = Domain::source;

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

/// Appearance shift applied to target-domain toy images (labels untouched).
struct ShiftConfig {
  double hue_rotation_deg = 0.0;
  double noise_std = 0.0;
  double texture_frequency = 0.0;  // cycles per pixel of the overlay pattern
  double texture_amplitude = 0.1;

  bool is_identity() const {
    return hue_rotation_deg == 0.0 && noise_std == 0.0 && texture_frequency == 0.0;
  }
};

/// Procedural scene generator config. Scenes are stuff bands (class 0..bands-1,
/// top to bottom) plus thing shapes; thing class k uses shape type
/// (k - bands) % 3: 0 rectangle, 1 ellipse, 2 thin vertical bar. Bar classes
/// are sampled rarely, giving the dataset a long-tail class distribution.
/// Generation is a pure function of (config, index).
struct ToyDomainConfig {
  int canvas_h = 128, canvas_w = 128;
  int num_classes = 6;
  int stuff_bands = 3;
  int shape_count_min = 3, shape_count_max = 6;
  double band_wave_amplitude = 0.05;  // fraction of canvas height
  double band_wave_freq = 1.5;        // cycles across the canvas width
  double bar_class_weight = 0.25;     // relative draw weight of bar classes
  ShiftConfig shift;                  // applied only when domain == target
  Domain domain = Domain::source;
  uint64_t seed = 0;
  int num_samples = 40;
};

Sample generate_toy_sample(const ToyDomainConfig& cfg, int index);
DatasetMeta make_toy_meta(const ToyDomainConfig& cfg);

struct Dataset {
  DatasetMeta meta;
  std::vector<Sample> samples;

  size_t size() const { return samples.size(); }
};

Dataset make_toy_dataset(const ToyDomainConfig& cfg);

/// Directory layout: root/meta.json, root/images/<id>.png (8-bit RGB),
/// root/labels/<id>.png (8-bit single-channel index map, 255 = ignore).
Dataset load_dataset(const std::string& root);
void save_dataset(const std::string& root, const Dataset& ds);

/// Nearest-neighbor resampling for integer label maps.
LabelMap label_resize_nearest(const LabelMap& label, int oh, int ow);

/// Bilinear rescaling by a positive factor; the output size must be integral.
/// Convention (fixed project-wide): half-pixel centers without corner
/// alignment, borders clamped. Used for images and prediction maps alike.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& t, double factor) {
  require(factor > 0.0, "resize_bilinear: factor must be positive");
  const double oh = t.h * factor, ow = t.w * factor;
  require(std::abs(oh - std::llround(oh)) < 1e-9 && std::abs(ow - std::llround(ow)) < 1e-9,
          "resize_bilinear: factor gives non-integral output size");
  return nn::resize_tensor(t, static_cast<int>(std::llround(oh)),
                           static_cast<int>(std::llround(ow)), nn::ResizeMode::bilinear);
}

}  // namespace daseg::data
