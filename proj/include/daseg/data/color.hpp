#pragma once

#include <algorithm>
#include <cmath>

namespace daseg::data {

struct Rgb {
  double r = 0, g = 0, b = 0;
};
struct Hsv {
  double h = 0, s = 0, v = 0;  // h in [0,1)
};

inline Hsv rgb_to_hsv(const Rgb& c) {
  const double mx = std::max({c.r, c.g, c.b});
  const double mn = std::min({c.r, c.g, c.b});
  const double d = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0 ? d / mx : 0.0;
  if (d <= 0) {
    out.h = 0.0;
  } else if (mx == c.r) {
    out.h = std::fmod((c.g - c.b) / d, 6.0) / 6.0;
  } else if (mx == c.g) {
    out.h = ((c.b - c.r) / d + 2.0) / 6.0;
  } else {
    out.h = ((c.r - c.g) / d + 4.0) / 6.0;
  }
  if (out.h < 0) out.h += 1.0;
  return out;
}

inline Rgb hsv_to_rgb(const Hsv& c) {
  const double h6 = c.h * 6.0;
  const int i = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const double p = c.v * (1.0 - c.s);
  const double q = c.v * (1.0 - c.s * f);
  const double t = c.v * (1.0 - c.s * (1.0 - f));
  switch ((i % 6 + 6) % 6) {
    case 0: return {c.v, t, p};
    case 1: return {q, c.v, p};
    case 2: return {p, c.v, t};
    case 3: return {p, q, c.v};
    case 4: return {t, p, c.v};
    default: return {c.v, p, q};
  }
}

/// Rotates hue by `frac` of a full cycle, keeping saturation and value.
inline Rgb rotate_hue(const Rgb& c, double frac) {
  Hsv hsv = rgb_to_hsv(c);
  hsv.h = hsv.h + frac;
  hsv.h -= std::floor(hsv.h);
  return hsv_to_rgb(hsv);
}

inline double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace daseg::data
