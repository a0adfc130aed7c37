#include "st/augment.hpp"

#include <algorithm>
#include <cmath>

namespace st {

namespace {

// Hue shift through an HSV round trip. `shift` is a fraction of the circle.
Tensor<float> hue_rotate(const Tensor<float>& img, float shift) {
  if (img.dim(0) != 3) return img;
  const long HW = long(img.dim(1)) * img.dim(2);
  Tensor<float> out(img.shape());
  for (long p = 0; p < HW; ++p) {
    float r = img[p], g = img[HW + p], b = img[2 * HW + p];
    const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const float d = mx - mn;
    float h = 0.0f;
    if (d > 0) {
      if (mx == r)
        h = std::fmod((g - b) / d, 6.0f);
      else if (mx == g)
        h = (b - r) / d + 2.0f;
      else
        h = (r - g) / d + 4.0f;
      h /= 6.0f;
    }
    const float s = mx > 0 ? d / mx : 0.0f;
    const float v = mx;
    h = std::fmod(h + shift + 1.0f, 1.0f);
    const float hh = h * 6.0f;
    const int i = int(hh) % 6;
    const float f = hh - std::floor(hh);
    const float p0 = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
    switch (i) {
      case 0: r = v; g = t; b = p0; break;
      case 1: r = q; g = v; b = p0; break;
      case 2: r = p0; g = v; b = t; break;
      case 3: r = p0; g = q; b = v; break;
      case 4: r = t; g = p0; b = v; break;
      default: r = v; g = p0; b = q; break;
    }
    out[p] = r;
    out[HW + p] = g;
    out[2 * HW + p] = b;
  }
  return out;
}

}  // namespace

Tensor<float> color_jitter(const Tensor<float>& img, const AugConfig& cfg, Rng& rng) {
  CgDraw<float> d;
  d.jitter = true;
  d.brightness = float(rng.uniform(std::max(0.0, 1.0 - cfg.brightness), 1.0 + cfg.brightness));
  d.contrast = float(rng.uniform(std::max(0.0, 1.0 - cfg.contrast), 1.0 + cfg.contrast));
  d.saturation = float(rng.uniform(std::max(0.0, 1.0 - cfg.saturation), 1.0 + cfg.saturation));
  Tensor<float> out = cg_apply(img, d);
  if (cfg.hue > 0) out = hue_rotate(out, float(rng.uniform(-double(cfg.hue), double(cfg.hue))));
  return out;
}

Tensor<float> cg_compose(const Tensor<float>& img, const AugConfig& cfg, Rng& rng) {
  Tensor<float> out = img;
  if (rng.chance(cfg.jitter_prob)) out = color_jitter(out, cfg, rng);
  if (rng.chance(cfg.grayscale_prob)) out = grayscale(out);
  return out;
}

Tensor<float> augment_image(const Tensor<float>& img, const AugConfig& cfg, Rng& rng) {
  Tensor<float> out = img;
  if (cfg.crop_flip) {
    out = random_crop(out, cfg.crop_padding, rng);
    out = hflip(out, cfg.flip_prob, rng);
  }
  if (cfg.cg) out = cg_compose(out, cfg, rng);
  if (cfg.use_cutout) out = cutout(out, cfg.cutout_size, rng);
  if (cfg.use_gaussian) out = gaussian_filter(out, cfg.gaussian_sigma, cfg.gaussian_ksize);
  return out;
}

}  // namespace st
