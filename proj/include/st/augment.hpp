#pragma once

#include <cmath>
#include <vector>

#include "st/rng.hpp"
#include "st/tensor.hpp"

namespace st {

// Augmentation knobs and the enabled set for a pipeline. Probabilities are
// per image; jitter strengths are symmetric ranges around 1.
struct AugConfig {
  int crop_padding = 4;
  float flip_prob = 0.5f;
  float jitter_prob = 0.8f;
  float brightness = 0.4f;
  float contrast = 0.4f;
  float saturation = 0.4f;
  float hue = 0.0f;  // 0 disables the HSV round trip
  float grayscale_prob = 0.2f;
  int cutout_size = 16;
  float gaussian_sigma = 1.5f;
  int gaussian_ksize = 5;

  bool crop_flip = true;
  bool cg = false;
  bool use_cutout = false;
  bool use_gaussian = false;
};

namespace detail {
template <typename S>
inline void luma_weights(int channels, S* w) {
  if (channels == 3) {
    w[0] = S(0.299);
    w[1] = S(0.587);
    w[2] = S(0.114);
  } else {
    for (int c = 0; c < channels; ++c) w[c] = S(1.0 / channels);
  }
}
}  // namespace detail

// --- pixel-shuffling augmentations (not differentiated) -----------------------

// Zero-pads by `padding` and crops back to the original size at a uniform
// offset. padding 0 is the identity.
template <typename S>
Tensor<S> random_crop(const Tensor<S>& img, int padding, Rng& rng) {
  require(img.rank() == 3, Err::shape_mismatch, "image must be [C,H,W]");
  require(padding >= 0, Err::bad_config, "padding must be nonnegative");
  if (padding == 0) return img;
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const int oy = rng.below(2 * padding + 1), ox = rng.below(2 * padding + 1);
  Tensor<S> out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y) {
      const int sy = y + oy - padding;
      if (sy < 0 || sy >= H) continue;
      for (int x = 0; x < W; ++x) {
        const int sx = x + ox - padding;
        if (sx < 0 || sx >= W) continue;
        out[(long(c) * H + y) * W + x] = img[(long(c) * H + sy) * W + sx];
      }
    }
  return out;
}

template <typename S>
Tensor<S> hflip(const Tensor<S>& img, float p, Rng& rng) {
  require(img.rank() == 3, Err::shape_mismatch, "image must be [C,H,W]");
  if (!rng.chance(p)) return img;
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<S> out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        out[(long(c) * H + y) * W + x] = img[(long(c) * H + y) * W + (W - 1 - x)];
  return out;
}

// Zeroes one mask_size^2 square centered at a uniform position, clipped at
// the borders.
template <typename S>
Tensor<S> cutout(const Tensor<S>& img, int mask_size, Rng& rng) {
  require(img.rank() == 3, Err::shape_mismatch, "image must be [C,H,W]");
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const int cy = rng.below(H), cx = rng.below(W);
  const int y0 = std::max(0, cy - mask_size / 2), y1 = std::min(H, cy + (mask_size + 1) / 2);
  const int x0 = std::max(0, cx - mask_size / 2), x1 = std::min(W, cx + (mask_size + 1) / 2);
  Tensor<S> out = img;
  for (int c = 0; c < C; ++c)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) out[(long(c) * H + y) * W + x] = S(0);
  return out;
}

template <typename S>
std::vector<S> gaussian_kernel(double sigma, int ksize) {
  require(ksize >= 1 && ksize % 2 == 1, Err::bad_kernel, "kernel size must be odd");
  require(sigma > 0, Err::bad_kernel, "sigma must be positive");
  std::vector<S> k(size_t(ksize) * size_t(ksize));
  const int r = ksize / 2;
  double sum = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      k[size_t((dy + r) * ksize + dx + r)] = S(v);
      sum += v;
    }
  for (auto& v : k) v = S(double(v) / sum);
  return k;
}

// Normalized k x k blur with reflect padding; a constant image stays put.
template <typename S>
Tensor<S> gaussian_filter(const Tensor<S>& img, double sigma, int ksize) {
  require(img.rank() == 3, Err::shape_mismatch, "image must be [C,H,W]");
  const auto k = gaussian_kernel<S>(sigma, ksize);
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  require(ksize <= 2 * H - 1 && ksize <= 2 * W - 1, Err::bad_kernel, "kernel larger than reflect range");
  const int r = ksize / 2;
  auto reflect = [](int v, int n) {
    if (v < 0) v = -v;
    if (v >= n) v = 2 * n - 2 - v;
    return v;
  };
  Tensor<S> out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            acc += double(k[size_t((dy + r) * ksize + dx + r)]) *
                   double(img[(long(c) * H + reflect(y + dy, H)) * W + reflect(x + dx, W)]);
        out[(long(c) * H + y) * W + x] = S(acc);
      }
  return out;
}

// Luma conversion replicated across channels; equal-channel images pass
// through unchanged.
template <typename S>
Tensor<S> grayscale(const Tensor<S>& img) {
  require(img.rank() == 3, Err::shape_mismatch, "image must be [C,H,W]");
  const int C = img.dim(0);
  const long HW = long(img.dim(1)) * img.dim(2);
  S w[8];
  detail::luma_weights(C, w);
  Tensor<S> out(img.shape());
  for (long p = 0; p < HW; ++p) {
    S g = S(0);
    for (int c = 0; c < C; ++c) g += w[c] * img[c * HW + p];
    for (int c = 0; c < C; ++c) out[c * HW + p] = g;
  }
  return out;
}

// --- differentiable CG core ---------------------------------------------------
//
// The jitter ops (brightness, contrast, saturation) and grayscale are linear
// maps per image apart from the [0,1] clamps, so an exact VJP only needs the
// drawn factors and the clamp masks. The same core backs the training
// augmentation and the generation-time transform.

template <typename S>
struct CgDraw {
  bool jitter = false;
  S brightness = S(1);
  S contrast = S(1);
  S saturation = S(1);
  bool gray = false;
};

// Draw order is part of the stream contract: jitter gate, three factors
// (only when the gate fires), grayscale gate.
inline CgDraw<float> sample_cg(const AugConfig& cfg, Rng& rng) {
  CgDraw<float> d;
  d.jitter = rng.chance(cfg.jitter_prob);
  if (d.jitter) {
    d.brightness = float(rng.uniform(std::max(0.0, 1.0 - cfg.brightness), 1.0 + cfg.brightness));
    d.contrast = float(rng.uniform(std::max(0.0, 1.0 - cfg.contrast), 1.0 + cfg.contrast));
    d.saturation = float(rng.uniform(std::max(0.0, 1.0 - cfg.saturation), 1.0 + cfg.saturation));
  }
  d.gray = rng.chance(cfg.grayscale_prob);
  return d;
}

template <typename S>
struct CgContext {
  CgDraw<S> draw;
  std::vector<unsigned char> mask1, mask2, mask3;  // clamp pass-through masks
};

template <typename S>
Tensor<S> cg_apply(const Tensor<S>& img, const CgDraw<S>& draw, CgContext<S>* ctx = nullptr) {
  require(img.rank() == 3, Err::shape_mismatch, "image must be [C,H,W]");
  const int C = img.dim(0);
  const long HW = long(img.dim(1)) * img.dim(2);
  S w[8];
  detail::luma_weights(C, w);
  if (ctx) ctx->draw = draw;
  auto clamp_into = [&](Tensor<S>& t, std::vector<unsigned char>* mask) {
    if (mask) mask->assign(size_t(t.size()), 0);
    for (long i = 0; i < t.size(); ++i) {
      const S v = t[i];
      if (mask && v > S(0) && v < S(1)) (*mask)[size_t(i)] = 1;
      t[i] = std::min(S(1), std::max(S(0), v));
    }
  };
  Tensor<S> x = img;
  if (draw.jitter) {
    x.flat() *= draw.brightness;
    clamp_into(x, ctx ? &ctx->mask1 : nullptr);
    // contrast blends with the mean gray level of the image
    double m = 0.0;
    for (long p = 0; p < HW; ++p) {
      S g = S(0);
      for (int c = 0; c < C; ++c) g += w[c] * x[c * HW + p];
      m += double(g);
    }
    const S mean = S(m / double(HW));
    x.flat() = draw.contrast * x.flat() + (S(1) - draw.contrast) * mean;
    clamp_into(x, ctx ? &ctx->mask2 : nullptr);
    // saturation blends with the per-pixel gray value
    Tensor<S> sat(x.shape());
    for (long p = 0; p < HW; ++p) {
      S g = S(0);
      for (int c = 0; c < C; ++c) g += w[c] * x[c * HW + p];
      for (int c = 0; c < C; ++c)
        sat[c * HW + p] = draw.saturation * x[c * HW + p] + (S(1) - draw.saturation) * g;
    }
    x = std::move(sat);
    clamp_into(x, ctx ? &ctx->mask3 : nullptr);
  } else if (ctx) {
    ctx->mask1.clear();
    ctx->mask2.clear();
    ctx->mask3.clear();
  }
  if (draw.gray) x = grayscale(x);
  return x;
}

// Pulls a gradient through cg_apply. grad and the returned tensor have the
// image shape; ctx must come from the matching forward call.
template <typename S>
Tensor<S> cg_backward(const Tensor<S>& grad, const CgContext<S>& ctx, int C, long HW) {
  S w[8];
  detail::luma_weights(C, w);
  Tensor<S> g = grad;
  if (ctx.draw.gray) {
    Tensor<S> out(g.shape());
    for (long p = 0; p < HW; ++p) {
      S s = S(0);
      for (int c = 0; c < C; ++c) s += g[c * HW + p];
      for (int c = 0; c < C; ++c) out[c * HW + p] = w[c] * s;
    }
    g = std::move(out);
  }
  if (ctx.draw.jitter) {
    for (long i = 0; i < g.size(); ++i)
      if (!ctx.mask3[size_t(i)]) g[i] = S(0);
    {  // saturation transpose
      Tensor<S> out(g.shape());
      for (long p = 0; p < HW; ++p) {
        S s = S(0);
        for (int c = 0; c < C; ++c) s += g[c * HW + p];
        for (int c = 0; c < C; ++c)
          out[c * HW + p] = ctx.draw.saturation * g[c * HW + p] + (S(1) - ctx.draw.saturation) * w[c] * s;
      }
      g = std::move(out);
    }
    for (long i = 0; i < g.size(); ++i)
      if (!ctx.mask2[size_t(i)]) g[i] = S(0);
    {  // contrast transpose: identity part plus the mean-gray term
      S total = S(0);
      for (long i = 0; i < g.size(); ++i) total += g[i];
      Tensor<S> out(g.shape());
      for (long p = 0; p < HW; ++p)
        for (int c = 0; c < C; ++c)
          out[c * HW + p] =
              ctx.draw.contrast * g[c * HW + p] + (S(1) - ctx.draw.contrast) * w[c] * total / S(HW);
      g = std::move(out);
    }
    for (long i = 0; i < g.size(); ++i)
      if (!ctx.mask1[size_t(i)]) g[i] = S(0);
    g.flat() *= ctx.draw.brightness;
  }
  return g;
}

// --- composite pipeline ops ----------------------------------------------------

Tensor<float> color_jitter(const Tensor<float>& img, const AugConfig& cfg, Rng& rng);
Tensor<float> cg_compose(const Tensor<float>& img, const AugConfig& cfg, Rng& rng);

// Applies the enabled set in order: crop, flip, CG, cutout, gaussian.
Tensor<float> augment_image(const Tensor<float>& img, const AugConfig& cfg, Rng& rng);

}  // namespace st
