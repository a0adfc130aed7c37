#pragma once

#include <functional>
#include <vector>

#include "st/acm.hpp"
#include "st/augment.hpp"
#include "st/data.hpp"
#include "st/loss.hpp"
#include "st/network.hpp"
#include "st/optimizer.hpp"

namespace st {

// Batch mechanics shared by the training loops, adversarial training, and
// the perturbation generators. Gradient work is sharded in fixed-size chunks
// and reduced in chunk order, so results do not depend on ST_THREADS.

struct BatchStats {
  double loss = 0.0;
  int correct = 0;
};

// Assembles a [B,C,H,W] batch from dataset rows. When aug is given, each
// image runs through the pipeline with an rng stream derived from
// (seed, epoch, dataset index), so the draw is independent of batch order.
Tensor<float> make_batch(const ImageDataset& ds, const std::vector<int>& idx, const AugConfig* aug, uint64_t seed,
                         int epoch);

std::vector<int> batch_labels(const ImageDataset& ds, const std::vector<int>& idx);

// Cross-entropy forward/backward over the batch. Outputs that are null are
// skipped (and their work avoided where possible).
BatchStats compute_grads(const Network<float>& net, const Tensor<float>& batch, const std::vector<int>& labels,
                         Gradients<float>* grads, Tensor<float>* grad_input);

// Clean accuracy in percent.
double evaluate(const Network<float>& net, const ImageDataset& ds, int batch_size = 256);

// Untargeted l-inf PGD ascent on the cross-entropy loss, projected to the
// epsilon ball around `batch` and to [0,1] after every step.
Tensor<float> pgd_attack(const Network<float>& net, const Tensor<float>& batch, const std::vector<int>& labels,
                         float epsilon, float step_size, int steps, Rng& rng, bool random_start = true);

// ACM of the network on ds, grouping penultimate activations by true label.
double acm_of_model(const Network<float>& net, const ImageDataset& ds, int batch_size = 256);

ActivationSet<float> collect_penultimate(const Network<float>& net, const ImageDataset& ds, int batch_size = 256);

// Channel-wise mean of layer `layer_index`'s output over the whole dataset.
std::vector<double> channel_mean_activation(const Network<float>& net, const ImageDataset& ds, int layer_index,
                                            int batch_size = 256);

}  // namespace st
