#pragma once

#include <cmath>
#include <vector>

#include "st/tensor.hpp"

namespace st {

template <typename S>
struct LossResult {
  double loss = 0.0;
  Tensor<S> grad;  // dL/dlogits, already divided by the batch size
};

// Mean softmax cross entropy over the batch. The gradient rows are
// (softmax - onehot)/B, so each row sums to zero.
template <typename S>
LossResult<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
  require(logits.rank() == 2, Err::shape_mismatch, "logits must be [B,k]");
  const int B = logits.dim(0), k = logits.dim(1);
  require(int(labels.size()) == B, Err::length_mismatch, "labels length != batch size");
  LossResult<S> res;
  res.grad = Tensor<S>({B, k});
  double total = 0.0;
  for (int b = 0; b < B; ++b) {
    const int y = labels[size_t(b)];
    require(y >= 0 && y < k, Err::label_out_of_range, "label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
    const S* row = logits.data() + long(b) * k;
    S mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(double(row[j]) - double(mx));
    const double log_denom = std::log(denom);
    total += log_denom - (double(row[y]) - double(mx));
    S* g = res.grad.data() + long(b) * k;
    for (int j = 0; j < k; ++j) {
      double p = std::exp(double(row[j]) - double(mx)) / denom;
      g[j] = S((p - (j == y ? 1.0 : 0.0)) / double(B));
    }
  }
  res.loss = total / double(B);
  return res;
}

// Count of argmax hits; ties resolve to the lowest index.
template <typename S>
int correct_count(const Tensor<S>& logits, const std::vector<int>& labels) {
  const int B = logits.dim(0), k = logits.dim(1);
  int correct = 0;
  for (int b = 0; b < B; ++b) {
    const S* row = logits.data() + long(b) * k;
    int arg = 0;
    for (int j = 1; j < k; ++j)
      if (row[j] > row[arg]) arg = j;
    if (arg == labels[size_t(b)]) ++correct;
  }
  return correct;
}

}  // namespace st
