#include "st/engine.hpp"

#include <algorithm>
#include <cmath>

#include "st/parallel.hpp"

namespace st {

namespace {

constexpr int kShard = 8;  // fixed shard size keeps reductions thread-count independent

Tensor<float> slice_batch(const Tensor<float>& batch, int b0, int b1) {
  const long row = batch.size() / batch.dim(0);
  std::vector<int> shape = batch.shape();
  shape[0] = b1 - b0;
  return Tensor<float>(shape, std::vector<float>(batch.data() + b0 * row, batch.data() + b1 * row));
}

}  // namespace

Tensor<float> make_batch(const ImageDataset& ds, const std::vector<int>& idx, const AugConfig* aug, uint64_t seed,
                         int epoch) {
  require(!idx.empty(), Err::bad_config, "empty batch");
  const int B = int(idx.size());
  Tensor<float> batch({B, ds.channels(), ds.height(), ds.width()});
  const long row = ds.image_size();
  for (int b = 0; b < B; ++b) {
    const int i = idx[size_t(b)];
    if (aug) {
      Rng rng = derive_rng(seed, 0xa06, uint64_t(epoch), uint64_t(i));
      Tensor<float> img = augment_image(ds.copy_image(i), *aug, rng);
      std::copy(img.data(), img.data() + row, batch.data() + long(b) * row);
    } else {
      std::copy(ds.image_ptr(i), ds.image_ptr(i) + row, batch.data() + long(b) * row);
    }
  }
  return batch;
}

std::vector<int> batch_labels(const ImageDataset& ds, const std::vector<int>& idx) {
  std::vector<int> out(idx.size());
  for (size_t b = 0; b < idx.size(); ++b) out[b] = ds.labels[size_t(idx[b])];
  return out;
}

BatchStats compute_grads(const Network<float>& net, const Tensor<float>& batch, const std::vector<int>& labels,
                         Gradients<float>* grads, Tensor<float>* grad_input) {
  const int B = batch.dim(0);
  require(int(labels.size()) == B, Err::length_mismatch, "labels length != batch size");
  const int shards = (B + kShard - 1) / kShard;
  std::vector<Gradients<float>> shard_grads(grads ? size_t(shards) : 0);
  std::vector<double> shard_loss(size_t(shards), 0.0);
  std::vector<int> shard_correct(size_t(shards), 0);
  if (grad_input) *grad_input = Tensor<float>(batch.shape());
  const long row = batch.size() / B;

  parallel_for(shards, [&](int s) {
    const int b0 = s * kShard, b1 = std::min(B, b0 + kShard);
    Tensor<float> sub = slice_batch(batch, b0, b1);
    std::vector<int> sub_labels(labels.begin() + b0, labels.begin() + b1);
    Trace<float> trace;
    Tensor<float> logits = forward(net, sub, &trace);
    auto res = cross_entropy(logits, sub_labels);
    // cross_entropy divides by the shard size; rescale to the batch mean
    res.grad.flat() *= float(double(b1 - b0) / double(B));
    shard_loss[size_t(s)] = res.loss * double(b1 - b0);
    shard_correct[size_t(s)] = correct_count(logits, sub_labels);
    Tensor<float> gin;
    if (grads) shard_grads[size_t(s)] = zero_gradients(net);
    backward(net, trace, res.grad, grads ? &shard_grads[size_t(s)] : nullptr, grad_input ? &gin : nullptr);
    if (grad_input) std::copy(gin.data(), gin.data() + gin.size(), grad_input->data() + long(b0) * row);
  });

  BatchStats stats;
  for (int s = 0; s < shards; ++s) {
    stats.loss += shard_loss[size_t(s)];
    stats.correct += shard_correct[size_t(s)];
    if (grads) grads->accumulate(shard_grads[size_t(s)]);
  }
  stats.loss /= double(B);
  return stats;
}

double evaluate(const Network<float>& net, const ImageDataset& ds, int batch_size) {
  const int n = ds.size();
  require(n > 0, Err::bad_config, "empty dataset");
  int correct = 0;
  std::vector<int> idx;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    idx.resize(size_t(end - start));
    for (int i = start; i < end; ++i) idx[size_t(i - start)] = i;
    Tensor<float> batch = make_batch(ds, idx, nullptr, 0, 0);
    const std::vector<int> labels = batch_labels(ds, idx);
    const int B = end - start;
    const int shards = (B + kShard - 1) / kShard;
    std::vector<int> shard_correct(size_t(shards), 0);
    parallel_for(shards, [&](int s) {
      const int b0 = s * kShard, b1 = std::min(B, b0 + kShard);
      Tensor<float> sub = slice_batch(batch, b0, b1);
      std::vector<int> sub_labels(labels.begin() + b0, labels.begin() + b1);
      Tensor<float> logits = forward(net, sub);
      shard_correct[size_t(s)] = correct_count(logits, sub_labels);
    });
    for (int c : shard_correct) correct += c;
  }
  return 100.0 * double(correct) / double(n);
}

Tensor<float> pgd_attack(const Network<float>& net, const Tensor<float>& batch, const std::vector<int>& labels,
                         float epsilon, float step_size, int steps, Rng& rng, bool random_start) {
  Tensor<float> adv = batch;
  if (random_start && epsilon > 0) {
    for (long i = 0; i < adv.size(); ++i) adv[i] += float(rng.uniform(-double(epsilon), double(epsilon)));
    adv.flat() = adv.flat().min(batch.flat() + epsilon).max(batch.flat() - epsilon).min(1.0f).max(0.0f);
  }
  if (epsilon <= 0) return adv;
  Tensor<float> gin;
  for (int s = 0; s < steps; ++s) {
    compute_grads(net, adv, labels, nullptr, &gin);
    adv.flat() += step_size * gin.flat().sign();
    adv.flat() = adv.flat().min(batch.flat() + epsilon).max(batch.flat() - epsilon).min(1.0f).max(0.0f);
  }
  return adv;
}

ActivationSet<float> collect_penultimate(const Network<float>& net, const ImageDataset& ds, int batch_size) {
  require(net.penultimate_index >= 0, Err::no_such_layer, "network has no penultimate index");
  ActivationSet<float> as;
  as.resize_classes(ds.class_count);
  const int n = ds.size();
  std::vector<int> idx;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    idx.resize(size_t(end - start));
    for (int i = start; i < end; ++i) idx[size_t(i - start)] = i;
    Tensor<float> batch = make_batch(ds, idx, nullptr, 0, 0);
    Trace<float> trace;
    forward(net, batch, &trace);
    const Tensor<float>& act = trace.output_of(net.penultimate_index, net);
    const int B = end - start;
    const long d = act.size() / B;
    for (int b = 0; b < B; ++b) as.add(ds.labels[size_t(idx[size_t(b)])], act.data() + b * d, int(d));
  }
  return as;
}

double acm_of_model(const Network<float>& net, const ImageDataset& ds, int batch_size) {
  return acm(collect_penultimate(net, ds, batch_size));
}

std::vector<double> channel_mean_activation(const Network<float>& net, const ImageDataset& ds, int layer_index,
                                            int batch_size) {
  require(layer_index >= 0 && layer_index < int(net.layers.size()), Err::no_such_layer, "layer index out of range");
  const int n = ds.size();
  std::vector<double> acc;
  std::vector<int> idx;
  long seen = 0;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    idx.resize(size_t(end - start));
    for (int i = start; i < end; ++i) idx[size_t(i - start)] = i;
    Tensor<float> batch = make_batch(ds, idx, nullptr, 0, 0);
    Trace<float> trace;
    forward(net, batch, &trace);
    const Tensor<float>& act = trace.output_of(layer_index, net);
    std::vector<double> m = channel_means(act);  // throws NotAConvActivation on non-4D output
    if (acc.empty()) acc.assign(m.size(), 0.0);
    for (size_t c = 0; c < m.size(); ++c) acc[c] += m[c] * double(end - start);
    seen += end - start;
  }
  for (auto& v : acc) v /= double(seen);
  return acc;
}

}  // namespace st
