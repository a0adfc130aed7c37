#pragma once

#include <cstdint>
#include <vector>

#include "st/layers.hpp"
#include "st/rng.hpp"
#include "st/tensor.hpp"

namespace st {

// Feedforward stack. `penultimate_index` names the layer whose output feeds
// the final classifier; its recorded output is what cluster statistics see.
template <typename S = float>
struct Network {
  std::vector<Layer<S>> layers;
  int in_channels = 0;
  int in_h = 0;
  int in_w = 0;
  int penultimate_index = -1;

  // Count of parameterized layers (conv + dense); indexes the lr vectors.
  int depth() const {
    int n = 0;
    for (const auto& l : layers)
      if (l.has_params()) ++n;
    return n;
  }

  std::vector<int> param_indices() const {
    std::vector<int> idx;
    for (int i = 0; i < int(layers.size()); ++i)
      if (layers[size_t(i)].has_params()) idx.push_back(i);
    return idx;
  }

  int class_count() const {
    for (int i = int(layers.size()) - 1; i >= 0; --i)
      if (layers[size_t(i)].has_params()) return layers[size_t(i)].weight.dim(0);
    return 0;
  }
};

// Recorded forward state: inputs[j] is the input tensor of layer j, so the
// output of layer j is inputs[j+1] (or the logits for the last layer).
template <typename S = float>
struct Trace {
  std::vector<Tensor<S>> inputs;
  std::vector<std::vector<int32_t>> pool_argmax;
  Tensor<S> logits;
  bool valid = false;

  const Tensor<S>& output_of(int layer, const Network<S>& net) const {
    require(valid, Err::no_forward_state, "no recorded forward pass");
    require(layer >= 0 && layer < int(net.layers.size()), Err::no_such_layer, "layer index out of range");
    if (layer + 1 < int(net.layers.size())) return inputs[size_t(layer) + 1];
    return logits;
  }
};

template <typename S = float>
struct Gradients {
  std::vector<Tensor<S>> weight;
  std::vector<Tensor<S>> bias;

  void accumulate(const Gradients& o) {
    for (size_t i = 0; i < weight.size(); ++i) {
      weight[i].flat() += o.weight[i].flat();
      bias[i].flat() += o.bias[i].flat();
    }
  }
  void scale(S a) {
    for (size_t i = 0; i < weight.size(); ++i) {
      weight[i].flat() *= a;
      bias[i].flat() *= a;
    }
  }
};

template <typename S>
Gradients<S> zero_gradients(const Network<S>& net) {
  Gradients<S> g;
  for (const auto& l : net.layers) {
    if (!l.has_params()) continue;
    g.weight.push_back(zeros_like(l.weight));
    g.bias.push_back(zeros_like(l.bias));
  }
  return g;
}

namespace detail {

template <typename S>
Tensor<S> conv_forward(const Layer<S>& l, const Tensor<S>& in) {
  const int B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int Co = l.weight.dim(0), kh = l.weight.dim(2), kw = l.weight.dim(3);
  const long HW = long(H) * W, K = long(C) * kh * kw;
  Tensor<S> out({B, Co, H, W});
  Tensor<S> col({int(K), int(HW)});
  auto wmat = l.weight.matrix(Co, K);
  auto bias = l.bias.flat();
  for (int b = 0; b < B; ++b) {
    im2col(in.data() + long(b) * C * HW, C, H, W, kh, kw, col.data());
    Eigen::Map<MatrixR<S>> om(out.data() + long(b) * Co * HW, Co, HW);
    om.noalias() = wmat * col.matrix(K, HW);
    om.colwise() += bias.matrix();
  }
  return out;
}

template <typename S>
void conv_backward(const Layer<S>& l, const Tensor<S>& in, const Tensor<S>& gout, Tensor<S>* gw, Tensor<S>* gb,
                   Tensor<S>* gin) {
  const int B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int Co = l.weight.dim(0), kh = l.weight.dim(2), kw = l.weight.dim(3);
  const long HW = long(H) * W, K = long(C) * kh * kw;
  Tensor<S> col({int(K), int(HW)});
  Tensor<S> gcol({int(K), int(HW)});
  auto wmat = l.weight.matrix(Co, K);
  for (int b = 0; b < B; ++b) {
    Eigen::Map<const MatrixR<S>> gom(gout.data() + long(b) * Co * HW, Co, HW);
    if (gw) {
      im2col(in.data() + long(b) * C * HW, C, H, W, kh, kw, col.data());
      gw->matrix(Co, K).noalias() += gom * col.matrix(K, HW).transpose();
      gb->flat().matrix() += gom.rowwise().sum();
    }
    if (gin) {
      gcol.matrix(K, HW).noalias() = wmat.transpose() * gom;
      col2im_add(gcol.data(), C, H, W, kh, kw, gin->data() + long(b) * C * HW);
    }
  }
}

template <typename S>
Tensor<S> dense_forward(const Layer<S>& l, const Tensor<S>& in) {
  const int B = in.dim(0), In = in.dim(1), Out = l.weight.dim(0);
  Tensor<S> out({B, Out});
  out.matrix(B, Out).noalias() = in.matrix(B, In) * l.weight.matrix(Out, In).transpose();
  out.matrix(B, Out).rowwise() += l.bias.flat().matrix().transpose();
  return out;
}

template <typename S>
void dense_backward(const Layer<S>& l, const Tensor<S>& in, const Tensor<S>& gout, Tensor<S>* gw, Tensor<S>* gb,
                    Tensor<S>* gin) {
  const int B = in.dim(0), In = in.dim(1), Out = l.weight.dim(0);
  if (gw) {
    gw->matrix(Out, In).noalias() += gout.matrix(B, Out).transpose() * in.matrix(B, In);
    gb->flat().matrix() += gout.matrix(B, Out).colwise().sum().transpose();
  }
  if (gin) gin->matrix(B, In).noalias() = gout.matrix(B, Out) * l.weight.matrix(Out, In);
}

template <typename S>
Tensor<S> pool_forward(const Tensor<S>& in, std::vector<int32_t>* argmax) {
  const int B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int Ho = H / 2, Wo = W / 2;
  Tensor<S> out({B, C, Ho, Wo});
  if (argmax) argmax->assign(size_t(out.size()), 0);
  long o = 0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const S* plane = in.data() + (long(b) * C + c) * H * W;
      const long base = (long(b) * C + c) * H * W;
      for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x, ++o) {
          long i00 = long(2 * y) * W + 2 * x;
          long best = i00;
          S v = plane[i00];
          if (plane[i00 + 1] > v) { v = plane[i00 + 1]; best = i00 + 1; }
          if (plane[i00 + W] > v) { v = plane[i00 + W]; best = i00 + W; }
          if (plane[i00 + W + 1] > v) { v = plane[i00 + W + 1]; best = i00 + W + 1; }
          out[o] = v;
          if (argmax) (*argmax)[size_t(o)] = int32_t(base + best);
        }
    }
  return out;
}

template <typename S>
void pool_backward(const std::vector<int32_t>& argmax, const Tensor<S>& gout, Tensor<S>* gin) {
  for (long i = 0; i < gout.size(); ++i) (*gin)[argmax[size_t(i)]] += gout[i];
}

}  // namespace detail

// Runs the stack on a [B,C,H,W] batch. With a trace, per-layer inputs and
// pooling argmax are recorded for a later backward() call.
template <typename S>
Tensor<S> forward(const Network<S>& net, const Tensor<S>& batch, Trace<S>* trace = nullptr) {
  require(batch.rank() == 4, Err::shape_mismatch, "batch must be [B,C,H,W]");
  require(batch.dim(1) == net.in_channels && batch.dim(2) == net.in_h && batch.dim(3) == net.in_w,
          Err::shape_mismatch, "batch incompatible with network input " + batch.shape_str());
  const int B = batch.dim(0);
  const int L = int(net.layers.size());
  if (trace) {
    trace->inputs.assign(size_t(L), Tensor<S>());
    trace->pool_argmax.assign(size_t(L), {});
    trace->valid = false;
  }
  Tensor<S> cur = batch;
  for (int j = 0; j < L; ++j) {
    const Layer<S>& l = net.layers[size_t(j)];
    const Tensor<S>* in = &cur;
    if (trace) {
      trace->inputs[size_t(j)] = std::move(cur);
      in = &trace->inputs[size_t(j)];
    }
    switch (l.kind) {
      case LayerKind::conv2d:
        cur = detail::conv_forward(l, *in);
        break;
      case LayerKind::dense:
        cur = detail::dense_forward(l, *in);
        break;
      case LayerKind::relu: {
        Tensor<S> out(in->shape());
        out.flat() = in->flat().max(S(0));
        cur = std::move(out);
        break;
      }
      case LayerKind::maxpool2x2:
        cur = detail::pool_forward(*in, trace ? &trace->pool_argmax[size_t(j)] : nullptr);
        break;
      case LayerKind::flatten: {
        cur = Tensor<S>({B, int(in->size() / B)}, std::vector<S>(in->data(), in->data() + in->size()));
        break;
      }
    }
  }
  if (trace) {
    trace->logits = cur;
    trace->valid = true;
  }
  return cur;
}

// Backpropagates grad_logits through the recorded pass. Parameter gradients
// are produced for every parameterized layer, frozen ones included (the
// optimizer is what ignores them). Pass grad_input to also get dL/dbatch.
template <typename S>
void backward(const Network<S>& net, const Trace<S>& trace, const Tensor<S>& grad_logits, Gradients<S>* grads,
              Tensor<S>* grad_input = nullptr) {
  require(trace.valid, Err::no_forward_state, "backward without a recorded forward pass");
  require(grad_logits.same_shape(trace.logits), Err::shape_mismatch, "grad_logits shape mismatch");
  const int L = int(net.layers.size());
  Tensor<S> g = grad_logits;
  int p = net.depth();
  for (int j = L - 1; j >= 0; --j) {
    const Layer<S>& l = net.layers[size_t(j)];
    const Tensor<S>& in = trace.inputs[size_t(j)];
    const bool want_gin = j > 0 || grad_input != nullptr;
    Tensor<S> gin;
    if (want_gin) gin = Tensor<S>(in.shape());
    switch (l.kind) {
      case LayerKind::conv2d:
        --p;
        detail::conv_backward(l, in, g, grads ? &grads->weight[size_t(p)] : nullptr,
                              grads ? &grads->bias[size_t(p)] : nullptr, want_gin ? &gin : nullptr);
        break;
      case LayerKind::dense:
        --p;
        detail::dense_backward(l, in, g, grads ? &grads->weight[size_t(p)] : nullptr,
                               grads ? &grads->bias[size_t(p)] : nullptr, want_gin ? &gin : nullptr);
        break;
      case LayerKind::relu:
        if (want_gin) gin.flat() = (in.flat() > S(0)).select(g.flat(), S(0));
        break;
      case LayerKind::maxpool2x2:
        if (want_gin) detail::pool_backward(trace.pool_argmax[size_t(j)], g, &gin);
        break;
      case LayerKind::flatten:
        if (want_gin) gin.flat() = g.flat();
        break;
    }
    if (!want_gin) return;
    g = std::move(gin);
  }
  if (grad_input) *grad_input = std::move(g);
}

// Mean absolute value of layer i's parameter gradients (weight and bias
// pooled together). i indexes parameterized layers, 0-based shallow to deep.
template <typename S>
double layer_grad_mean(const Gradients<S>& grads, int i) {
  require(i >= 0 && i < int(grads.weight.size()), Err::no_such_layer, "no parameterized layer " + std::to_string(i));
  double acc = 0.0;
  const auto& w = grads.weight[size_t(i)];
  const auto& b = grads.bias[size_t(i)];
  for (long j = 0; j < w.size(); ++j) acc += std::abs(double(w[j]));
  for (long j = 0; j < b.size(); ++j) acc += std::abs(double(b[j]));
  return acc / double(w.size() + b.size());
}

// Per-channel means of a recorded [B,C,H,W] activation.
template <typename S>
std::vector<double> channel_means(const Tensor<S>& activation) {
  require(activation.rank() == 4, Err::not_a_conv_activation, "activation is not [B,C,H,W]");
  const int B = activation.dim(0), C = activation.dim(1);
  const long HW = long(activation.dim(2)) * activation.dim(3);
  std::vector<double> mean(size_t(C), 0.0);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const S* p = activation.data() + (long(b) * C + c) * HW;
      double s = 0.0;
      for (long i = 0; i < HW; ++i) s += double(p[i]);
      mean[size_t(c)] += s;
    }
  for (double& m : mean) m /= double(B) * double(HW);
  return mean;
}

// --- freezing and transplants ------------------------------------------------

template <typename S>
void freeze_prefix(Network<S>& net, int count) {
  require(count >= 0 && count <= net.depth(), Err::range_out_of_bounds, "freeze count exceeds depth");
  auto idx = net.param_indices();
  for (int i = 0; i < count; ++i) net.layers[size_t(idx[size_t(i)])].frozen = true;
}

template <typename S>
void freeze_suffix(Network<S>& net, int count) {
  require(count >= 0 && count <= net.depth(), Err::range_out_of_bounds, "freeze count exceeds depth");
  auto idx = net.param_indices();
  for (int i = 0; i < count; ++i) net.layers[size_t(idx[idx.size() - 1 - size_t(i)])].frozen = true;
}

// Copies parameterized layers [first, first+count) from src into dst and
// freezes them. Architectures must match layer for layer.
template <typename S>
void transplant(Network<S>& dst, const Network<S>& src, int first, int count) {
  require(dst.layers.size() == src.layers.size(), Err::architecture_mismatch, "layer count differs");
  for (size_t i = 0; i < dst.layers.size(); ++i) {
    require(dst.layers[i].kind == src.layers[i].kind && dst.layers[i].weight.same_shape(src.layers[i].weight) &&
                dst.layers[i].bias.same_shape(src.layers[i].bias),
            Err::architecture_mismatch, "layer " + std::to_string(i) + " differs");
  }
  const int l = dst.depth();
  require(first >= 0 && count >= 0 && first + count <= l, Err::range_out_of_bounds, "transplant range out of bounds");
  auto idx = dst.param_indices();
  for (int i = first; i < first + count; ++i) {
    auto& d = dst.layers[size_t(idx[size_t(i)])];
    const auto& s = src.layers[size_t(idx[size_t(i)])];
    d.weight = s.weight;
    d.bias = s.bias;
    d.frozen = true;
  }
}

// --- construction ------------------------------------------------------------

template <typename S>
void he_init(Layer<S>& l, Rng& rng) {
  if (!l.has_params()) return;
  long fan_in = l.kind == LayerKind::conv2d ? long(l.weight.dim(1)) * l.weight.dim(2) * l.weight.dim(3)
                                            : l.weight.dim(1);
  const double std = std::sqrt(2.0 / double(fan_in));
  for (long i = 0; i < l.weight.size(); ++i) l.weight[i] = S(rng.normal(0.0, std));
  l.bias.flat().setZero();
}

struct DesknetSpec {
  int in_channels = 3;
  int height = 28;
  int width = 28;
  int classes = 10;
  int conv1 = 16;
  int conv2 = 32;
  int conv3 = 64;
  int fc = 128;
};

// conv16-relu-pool / conv32-relu-pool / conv64-relu-pool / flatten /
// dense(fc)-relu / dense(k). Five parameterized layers, shallow to deep.
template <typename S = float>
Network<S> make_desknet(const DesknetSpec& spec, Rng& rng) {
  Network<S> net;
  net.in_channels = spec.in_channels;
  net.in_h = spec.height;
  net.in_w = spec.width;
  auto add = [&](Layer<S> l) {
    he_init(l, rng);
    net.layers.push_back(std::move(l));
  };
  add(make_conv2d<S>(spec.conv1, spec.in_channels, 3));
  add(make_plain<S>(LayerKind::relu));
  add(make_plain<S>(LayerKind::maxpool2x2));
  add(make_conv2d<S>(spec.conv2, spec.conv1, 3));
  add(make_plain<S>(LayerKind::relu));
  add(make_plain<S>(LayerKind::maxpool2x2));
  add(make_conv2d<S>(spec.conv3, spec.conv2, 3));
  add(make_plain<S>(LayerKind::relu));
  add(make_plain<S>(LayerKind::maxpool2x2));
  add(make_plain<S>(LayerKind::flatten));
  const int h3 = spec.height / 2 / 2 / 2, w3 = spec.width / 2 / 2 / 2;
  add(make_dense<S>(spec.fc, spec.conv3 * h3 * w3));
  add(make_plain<S>(LayerKind::relu));
  net.penultimate_index = int(net.layers.size()) - 1;
  add(make_dense<S>(spec.classes, spec.fc));
  return net;
}

// 64-bit fingerprint of all parameters (FNV-1a over raw bytes).
template <typename S>
uint64_t param_fingerprint(const Network<S>& net) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&](const Tensor<S>& t) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(t.data());
    for (long i = 0; i < t.size() * long(sizeof(S)); ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& l : net.layers) {
    if (!l.has_params()) continue;
    feed(l.weight);
    feed(l.bias);
  }
  return h;
}

}  // namespace st
