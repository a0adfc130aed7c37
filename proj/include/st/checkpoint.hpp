#pragma once

#include <string>
#include <vector>

#include "st/network.hpp"
#include "st/optimizer.hpp"

namespace st {

// Full training state snapshot: parameters plus momentum buffers. Restoring
// one reproduces both bit for bit.
template <typename S = float>
struct Checkpoint {
  int epoch = 0;
  std::vector<Tensor<S>> weights;
  std::vector<Tensor<S>> biases;
  std::vector<Tensor<S>> mom_w;
  std::vector<Tensor<S>> mom_b;
};

template <typename S>
Checkpoint<S> snapshot(const Network<S>& net, const OptimizerState<S>& opt, int epoch = 0) {
  Checkpoint<S> ck;
  ck.epoch = epoch;
  for (const auto& l : net.layers) {
    if (!l.has_params()) continue;
    ck.weights.push_back(l.weight);
    ck.biases.push_back(l.bias);
  }
  ck.mom_w = opt.mom_w;
  ck.mom_b = opt.mom_b;
  return ck;
}

template <typename S>
void restore(Network<S>& net, OptimizerState<S>& opt, const Checkpoint<S>& ck) {
  auto idx = net.param_indices();
  require(ck.weights.size() == idx.size() && ck.mom_w.size() == idx.size(), Err::architecture_mismatch,
          "checkpoint layer count differs from network");
  for (size_t i = 0; i < idx.size(); ++i) {
    auto& l = net.layers[size_t(idx[i])];
    require(l.weight.same_shape(ck.weights[i]) && l.bias.same_shape(ck.biases[i]), Err::architecture_mismatch,
            "checkpoint shape differs at parameterized layer " + std::to_string(i));
    require(opt.mom_w[i].same_shape(ck.mom_w[i]), Err::architecture_mismatch,
            "momentum buffer shape differs at layer " + std::to_string(i));
  }
  for (size_t i = 0; i < idx.size(); ++i) {
    auto& l = net.layers[size_t(idx[i])];
    l.weight = ck.weights[i];
    l.bias = ck.biases[i];
    opt.mom_w[i] = ck.mom_w[i];
    opt.mom_b[i] = ck.mom_b[i];
  }
}

// STCKPT1 on-disk format (little endian):
//   "STCKPT1" | u32 layer_count | per layer: weight tensor, bias tensor
//            | u32 layer_count | per layer: momentum tensors in the same order
// where tensor := u32 rank | u32 dims[rank] | f32 payload.
void save_checkpoint(const std::string& path, const Checkpoint<float>& ck);
Checkpoint<float> load_checkpoint(const std::string& path);

}  // namespace st
