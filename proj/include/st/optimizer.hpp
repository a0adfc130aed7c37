#pragma once

#include <cmath>
#include <vector>

#include "st/network.hpp"

namespace st {

template <typename S = float>
struct OptimizerState {
  S momentum = S(0.9);
  S weight_decay = S(1e-4);
  std::vector<Tensor<S>> mom_w;  // one buffer per parameterized layer, zero-initialized
  std::vector<Tensor<S>> mom_b;
};

template <typename S>
OptimizerState<S> make_optimizer(const Network<S>& net, S momentum = S(0.9), S weight_decay = S(1e-4)) {
  OptimizerState<S> opt;
  opt.momentum = momentum;
  opt.weight_decay = weight_decay;
  for (const auto& l : net.layers) {
    if (!l.has_params()) continue;
    opt.mom_w.push_back(zeros_like(l.weight));
    opt.mom_b.push_back(zeros_like(l.bias));
  }
  return opt;
}

// SGD with momentum: buf <- m*buf + g + wd*p, p <- p - lr_i*buf. Biases are
// exempt from weight decay. A zero rate still accumulates the buffer; frozen
// layers are skipped entirely.
template <typename S>
void sgd_step(Network<S>& net, const Gradients<S>& grads, OptimizerState<S>& opt,
              const std::vector<double>& lr_per_layer) {
  require(int(lr_per_layer.size()) == net.depth(), Err::length_mismatch,
          "lr_per_layer length != parameterized layer count");
  for (double lr : lr_per_layer) require(lr >= 0.0, Err::bad_config, "learning rates must be nonnegative");
  int p = 0;
  for (auto& l : net.layers) {
    if (!l.has_params()) continue;
    const int i = p++;
    if (l.frozen) continue;
    const S lr = S(lr_per_layer[size_t(i)]) * S(l.lr_multiplier);
    auto bw = opt.mom_w[size_t(i)].flat();
    auto bb = opt.mom_b[size_t(i)].flat();
    bw = opt.momentum * bw + grads.weight[size_t(i)].flat() + opt.weight_decay * l.weight.flat();
    bb = opt.momentum * bb + grads.bias[size_t(i)].flat();
    if (lr != S(0)) {
      l.weight.flat() -= lr * bw;
      l.bias.flat() -= lr * bb;
    }
  }
}

struct LrSchedule {
  double base_lr = 0.1;
  int total_epochs = 40;
};

// base * 0.5 * (1 + cos(pi*e/E)) for e in [0, E].
inline double cosine_lr(const LrSchedule& sched, int epoch) {
  require(epoch >= 0 && epoch <= sched.total_epochs, Err::epoch_out_of_range,
          "epoch " + std::to_string(epoch) + " outside [0," + std::to_string(sched.total_epochs) + "]");
  return sched.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * double(epoch) / double(sched.total_epochs)));
}

// Rate used while training epoch e (1-based): the schedule value at e-1, so
// the first epoch runs at base_lr and the ramp ends just above zero.
inline double epoch_rate(const LrSchedule& sched, int epoch) { return cosine_lr(sched, epoch - 1); }

}  // namespace st
