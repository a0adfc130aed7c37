#pragma once

#include <string>
#include <utility>
#include <vector>

#include "st/tensor.hpp"

namespace st {

// Labeled image set with values in [0,1], stored as one [N,C,H,W] tensor.
struct ImageDataset {
  Tensor<float> images;
  std::vector<int> labels;
  int class_count = 0;
  std::string split;

  int size() const { return images.empty() ? 0 : images.dim(0); }
  int channels() const { return images.dim(1); }
  int height() const { return images.dim(2); }
  int width() const { return images.dim(3); }
  long image_size() const { return long(channels()) * height() * width(); }

  const float* image_ptr(int i) const { return images.data() + long(i) * image_size(); }
  float* image_ptr(int i) { return images.data() + long(i) * image_size(); }

  Tensor<float> copy_image(int i) const {
    const float* p = image_ptr(i);
    return Tensor<float>({channels(), height(), width()}, std::vector<float>(p, p + image_size()));
  }

  void set_image(int i, const Tensor<float>& img) {
    require(img.size() == image_size(), Err::shape_mismatch, "image size mismatch");
    std::copy(img.data(), img.data() + img.size(), image_ptr(i));
  }

  std::vector<int> class_histogram() const {
    std::vector<int> h(size_t(class_count), 0);
    for (int l : labels) ++h[size_t(l)];
    return h;
  }
};

ImageDataset make_dataset(int n, int c, int h, int w, int k, std::string split = "train");

// CIFAR-10 binary batches: 3073-byte records, one label byte then 3072
// pixel bytes (RGB planes of a 32x32 image). Pixels load as byte/255.
ImageDataset load_cifar10_binary(const std::string& path);
ImageDataset load_cifar10_binary(const std::vector<std::string>& paths);

// Writes any dataset in the same record layout (1 label byte + C*H*W pixel
// bytes, values rounded to the byte grid) and reads it back given the shape.
void save_records(const std::string& path, const ImageDataset& ds);
ImageDataset load_records(const std::string& path, int channels, int height, int width, int class_count);

struct SynthSpec {
  int classes = 4;
  int n_per_class = 500;
  int image_size = 28;
  int test_per_class = 125;
  float difficulty = 1.0f;  // scales sample noise and template jitter
};

// Class-conditional smooth templates (oriented grating + offset blob in
// luminance) with heavy per-sample variation. The semantic signal survives
// channel mixing and blur; additive pixel patterns do not.
std::pair<ImageDataset, ImageDataset> synth_shortcut_dataset(const SynthSpec& spec, uint64_t seed);

}  // namespace st
