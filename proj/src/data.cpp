#include "st/data.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include "st/rng.hpp"

namespace st {

ImageDataset make_dataset(int n, int c, int h, int w, int k, std::string split) {
  ImageDataset ds;
  ds.images = Tensor<float>({n, c, h, w});
  ds.labels.assign(size_t(n), 0);
  ds.class_count = k;
  ds.split = std::move(split);
  return ds;
}

namespace {

ImageDataset load_record_file(const std::string& path, int c, int h, int w, int k) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  require(f.good(), Err::io_failure, "cannot open " + path);
  const long len = long(f.tellg());
  const long rec = 1 + long(c) * h * w;
  require(len > 0 && len % rec == 0, Err::malformed_file,
          path + ": length " + std::to_string(len) + " is not a multiple of " + std::to_string(rec));
  const int n = int(len / rec);
  f.seekg(0);
  ImageDataset ds = make_dataset(n, c, h, w, k);
  std::vector<unsigned char> buf(static_cast<size_t>(rec));
  for (int i = 0; i < n; ++i) {
    f.read(reinterpret_cast<char*>(buf.data()), rec);
    require(f.gcount() == rec, Err::io_failure, path + ": short read");
    const int label = buf[0];
    require(label < k, Err::malformed_file, path + ": label " + std::to_string(label) + " out of range");
    ds.labels[size_t(i)] = label;
    float* dst = ds.image_ptr(i);
    for (long j = 0; j < rec - 1; ++j) dst[j] = float(buf[size_t(j) + 1]) / 255.0f;
  }
  return ds;
}

}  // namespace

ImageDataset load_cifar10_binary(const std::string& path) { return load_record_file(path, 3, 32, 32, 10); }

ImageDataset load_cifar10_binary(const std::vector<std::string>& paths) {
  require(!paths.empty(), Err::bad_config, "no CIFAR-10 files given");
  ImageDataset all = load_cifar10_binary(paths[0]);
  for (size_t i = 1; i < paths.size(); ++i) {
    ImageDataset part = load_cifar10_binary(paths[i]);
    const int n0 = all.size(), n1 = part.size();
    Tensor<float> merged({n0 + n1, 3, 32, 32});
    std::copy(all.images.data(), all.images.data() + all.images.size(), merged.data());
    std::copy(part.images.data(), part.images.data() + part.images.size(), merged.data() + all.images.size());
    all.images = std::move(merged);
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
  }
  return all;
}

void save_records(const std::string& path, const ImageDataset& ds) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), Err::io_failure, "cannot open " + path + " for writing");
  const long pix = ds.image_size();
  std::vector<unsigned char> buf(size_t(pix) + 1);
  for (int i = 0; i < ds.size(); ++i) {
    buf[0] = (unsigned char)(ds.labels[size_t(i)]);
    const float* src = ds.image_ptr(i);
    for (long j = 0; j < pix; ++j) {
      const float v = std::min(1.0f, std::max(0.0f, src[j]));
      buf[size_t(j) + 1] = (unsigned char)(std::lround(v * 255.0f));
    }
    f.write(reinterpret_cast<const char*>(buf.data()), long(buf.size()));
  }
  f.close();
  require(f.good(), Err::io_failure, "write failed for " + path);
}

ImageDataset load_records(const std::string& path, int channels, int height, int width, int class_count) {
  return load_record_file(path, channels, height, width, class_count);
}

namespace {

// One sample of class `cls`: oriented grating plus an offset blob, both in
// luminance, with randomized phase, position jitter, amplitudes, and noise.
// The randomness keeps the semantic signal slow to learn next to any
// constant-per-class additive pattern.
void render_synth_image(float* dst, int cls, int k, int s, int channels, float difficulty, Rng& rng) {
  const double theta = 3.14159265358979323846 * (double(cls) + 0.3) / double(k);
  const double freq = 2.1 + 0.4 * (cls % 2);
  const double blob_angle = 6.283185307179586 * double(cls) / double(k) + 0.8;
  const double blob_r = 0.27 * s;
  const double cx = 0.5 * (s - 1) + blob_r * std::cos(blob_angle);
  const double cy = 0.5 * (s - 1) + blob_r * std::sin(blob_angle);

  const double phase = rng.uniform(0.0, 6.283185307179586);
  const double jitter = 1.5 + 1.5 * difficulty;
  const double jx = rng.uniform(-jitter, jitter);
  const double jy = rng.uniform(-jitter, jitter);
  const double amp_g = 0.14 * rng.uniform(0.7, 1.3);
  const double amp_b = 0.26 * rng.uniform(0.75, 1.25);
  const double width = 0.13 * s * rng.uniform(0.85, 1.15);
  const double base = 0.45 + rng.uniform(-0.05, 0.05);
  const double noise = (0.05 + 0.07 * difficulty);

  const double ct = std::cos(theta), st_ = std::sin(theta);
  const long hw = long(s) * s;
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double u = (x * ct + y * st_) / double(s);
      const double g = std::sin(6.283185307179586 * freq * u + phase);
      const double dx = x - cx - jx, dy = y - cy - jy;
      const double b = std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
      const double lum = base + amp_g * g + amp_b * b;
      for (int c = 0; c < channels; ++c) {
        const double v = lum + noise * rng.normal();
        dst[c * hw + long(y) * s + x] = float(std::min(1.0, std::max(0.0, v)));
      }
    }
  }
}

ImageDataset render_split(const SynthSpec& spec, int per_class, Rng& rng, const char* split) {
  const int n = spec.classes * per_class;
  ImageDataset ds = make_dataset(n, 3, spec.image_size, spec.image_size, spec.classes, split);
  int i = 0;
  for (int cls = 0; cls < spec.classes; ++cls)
    for (int j = 0; j < per_class; ++j, ++i) {
      ds.labels[size_t(i)] = cls;
      render_synth_image(ds.image_ptr(i), cls, spec.classes, spec.image_size, 3, spec.difficulty, rng);
    }
  return ds;
}

}  // namespace

std::pair<ImageDataset, ImageDataset> synth_shortcut_dataset(const SynthSpec& spec, uint64_t seed) {
  require(spec.classes >= 2, Err::bad_config, "need at least two classes");
  require(spec.image_size >= 8, Err::bad_config, "image size too small");
  Rng train_rng = derive_rng(seed, 0x7281);
  Rng test_rng = derive_rng(seed, 0x7e57);
  return {render_split(spec, spec.n_per_class, train_rng, "train"),
          render_split(spec, spec.test_per_class, test_rng, "test")};
}

}  // namespace st
