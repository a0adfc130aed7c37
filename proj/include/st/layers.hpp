#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "st/tensor.hpp"

namespace st {

enum class LayerKind : uint8_t { conv2d = 0, dense = 1, relu = 2, maxpool2x2 = 3, flatten = 4 };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

// conv2d weight: [out_ch, in_ch, kh, kw], same zero padding, stride 1.
// dense weight: [out, in]. relu/pool/flatten carry no parameters.
template <typename S>
struct Layer {
  LayerKind kind;
  Tensor<S> weight;
  Tensor<S> bias;
  float lr_multiplier = 1.0f;
  bool frozen = false;

  bool has_params() const { return kind == LayerKind::conv2d || kind == LayerKind::dense; }
};

template <typename S>
Layer<S> make_conv2d(int out_ch, int in_ch, int k) {
  Layer<S> l{LayerKind::conv2d, Tensor<S>({out_ch, in_ch, k, k}), Tensor<S>({out_ch})};
  return l;
}

template <typename S>
Layer<S> make_dense(int out, int in) {
  return Layer<S>{LayerKind::dense, Tensor<S>({out, in}), Tensor<S>({out})};
}

template <typename S>
Layer<S> make_plain(LayerKind kind) {
  return Layer<S>{kind, {}, {}};
}

// Output shape for a given input shape (without the batch dim).
template <typename S>
std::vector<int> layer_out_shape(const Layer<S>& l, const std::vector<int>& in) {
  switch (l.kind) {
    case LayerKind::conv2d: {
      require(in.size() == 3, Err::shape_mismatch, "conv2d expects [C,H,W] input");
      require(in[0] == l.weight.dim(1), Err::shape_mismatch, "conv2d input channel mismatch");
      return {l.weight.dim(0), in[1], in[2]};
    }
    case LayerKind::dense: {
      require(in.size() == 1, Err::shape_mismatch, "dense expects flattened input");
      require(in[0] == l.weight.dim(1), Err::shape_mismatch, "dense input width mismatch");
      return {l.weight.dim(0)};
    }
    case LayerKind::relu:
      return in;
    case LayerKind::maxpool2x2: {
      require(in.size() == 3 && in[1] >= 2 && in[2] >= 2, Err::shape_mismatch, "maxpool expects [C,H,W], H,W >= 2");
      return {in[0], in[1] / 2, in[2] / 2};
    }
    case LayerKind::flatten: {
      int n = 1;
      for (int d : in) n *= d;
      return {n};
    }
  }
  fail(Err::shape_mismatch, "unknown layer kind");
}

namespace detail {

// Patch matrix for one [C,H,W] image: rows are (c,dy,dx), columns are (y,x).
template <typename S>
void im2col(const S* im, int C, int H, int W, int kh, int kw, S* col) {
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const long HW = long(H) * W;
  long r = 0;
  for (int c = 0; c < C; ++c) {
    const S* ch = im + long(c) * HW;
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx, ++r) {
        S* dst = col + r * HW;
        std::fill(dst, dst + HW, S(0));
        const int y0 = std::max(0, ph - dy), y1 = std::min(H, H + ph - dy);
        const int x0 = std::max(0, pw - dx), x1 = std::min(W, W + pw - dx);
        if (x1 <= x0) continue;
        for (int y = y0; y < y1; ++y) {
          const S* src = ch + long(y + dy - ph) * W + (x0 + dx - pw);
          std::copy(src, src + (x1 - x0), dst + long(y) * W + x0);
        }
      }
    }
  }
}

// Transpose of im2col: scatter-adds patch gradients back onto the image.
template <typename S>
void col2im_add(const S* col, int C, int H, int W, int kh, int kw, S* im) {
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const long HW = long(H) * W;
  long r = 0;
  for (int c = 0; c < C; ++c) {
    S* ch = im + long(c) * HW;
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx, ++r) {
        const S* src = col + r * HW;
        const int y0 = std::max(0, ph - dy), y1 = std::min(H, H + ph - dy);
        const int x0 = std::max(0, pw - dx), x1 = std::min(W, W + pw - dx);
        for (int y = y0; y < y1; ++y) {
          S* dst = ch + long(y + dy - ph) * W + (x0 + dx - pw);
          const S* s = src + long(y) * W + x0;
          for (int x = 0; x < x1 - x0; ++x) dst[x] += s[x];
        }
      }
    }
  }
}

}  // namespace detail

}  // namespace st
