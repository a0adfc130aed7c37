#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "st/acm.hpp"
#include "st/checkpoint.hpp"
#include "st/unlearnable.hpp"

// Binary container formats. Everything is little endian; this code assumes a
// little-endian host (checked at startup below).

namespace st {
namespace {

static_assert(sizeof(float) == 4, "32-bit IEEE floats required");

struct Writer {
  std::ofstream f;
  explicit Writer(const std::string& path) : f(path, std::ios::binary) {
    require(f.good(), Err::io_failure, "cannot open " + path + " for writing");
  }
  void bytes(const void* p, size_t n) { f.write(reinterpret_cast<const char*>(p), std::streamsize(n)); }
  void u8(uint8_t v) { bytes(&v, 1); }
  void u32(uint32_t v) { bytes(&v, 4); }
  void f32(float v) { bytes(&v, 4); }
  void magic(const char* m) { bytes(m, std::strlen(m)); }
  void tensor(const Tensor<float>& t) {
    u32(uint32_t(t.rank()));
    for (int i = 0; i < t.rank(); ++i) u32(uint32_t(t.dim(i)));
    bytes(t.data(), size_t(t.size()) * 4);
  }
  void close(const std::string& path) {
    f.close();
    require(f.good(), Err::io_failure, "write failed for " + path);
  }
};

struct Reader {
  std::ifstream f;
  std::string path;
  explicit Reader(const std::string& p) : f(p, std::ios::binary), path(p) {
    require(f.good(), Err::io_failure, "cannot open " + p);
  }
  void bytes(void* p, size_t n) {
    f.read(reinterpret_cast<char*>(p), std::streamsize(n));
    require(size_t(f.gcount()) == n, Err::corrupt_payload, "unexpected end of " + path);
  }
  uint8_t u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  float f32() {
    float v;
    bytes(&v, 4);
    return v;
  }
  void magic(const char* m) {
    std::string got(std::strlen(m), '\0');
    bytes(got.data(), got.size());
    require(got == m, Err::malformed_file, path + ": bad magic, expected " + m);
  }
  bool at_eof() { return f.peek() == std::ifstream::traits_type::eof(); }
  Tensor<float> tensor() {
    uint32_t rank = u32();
    require(rank <= 8, Err::corrupt_payload, path + ": implausible tensor rank");
    std::vector<int> shape(rank);
    long n = 1;
    for (auto& d : shape) {
      d = int(u32());
      require(d > 0 && n * d <= (1l << 31), Err::corrupt_payload, path + ": implausible tensor dim");
      n *= d;
    }
    Tensor<float> t(shape);
    bytes(t.data(), size_t(t.size()) * 4);
    return t;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint<float>& ck) {
  Writer w(path);
  w.magic("STCKPT1");
  w.u32(uint32_t(ck.weights.size()));
  for (size_t i = 0; i < ck.weights.size(); ++i) {
    w.tensor(ck.weights[i]);
    w.tensor(ck.biases[i]);
  }
  w.u32(uint32_t(ck.mom_w.size()));
  for (size_t i = 0; i < ck.mom_w.size(); ++i) {
    w.tensor(ck.mom_w[i]);
    w.tensor(ck.mom_b[i]);
  }
  w.close(path);
}

Checkpoint<float> load_checkpoint(const std::string& path) {
  Reader r(path);
  r.magic("STCKPT1");
  Checkpoint<float> ck;
  uint32_t layers = r.u32();
  require(layers <= 4096, Err::corrupt_payload, path + ": implausible layer count");
  for (uint32_t i = 0; i < layers; ++i) {
    ck.weights.push_back(r.tensor());
    ck.biases.push_back(r.tensor());
  }
  uint32_t opt_layers = r.u32();
  require(opt_layers == layers, Err::corrupt_payload, path + ": optimizer section layer count differs");
  for (uint32_t i = 0; i < opt_layers; ++i) {
    ck.mom_w.push_back(r.tensor());
    ck.mom_b.push_back(r.tensor());
    require(ck.mom_w.back().same_shape(ck.weights[i]) && ck.mom_b.back().same_shape(ck.biases[i]),
            Err::corrupt_payload, path + ": momentum shape differs from parameters");
  }
  return ck;
}

void save_activation_dump(const std::string& path, const ActivationSet<float>& as) {
  Writer w(path);
  w.magic("STACT1");
  const int k = as.class_count();
  const int d = as.dim();
  w.u32(uint32_t(k));
  w.u32(uint32_t(d));
  for (int i = 0; i < k; ++i) {
    const auto& m = as.classes[size_t(i)];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      w.u32(uint32_t(i));
      w.bytes(m.row(r).data(), size_t(d) * 4);
    }
  }
  w.close(path);
}

ActivationSet<float> load_activation_dump(const std::string& path) {
  Reader r(path);
  r.magic("STACT1");
  const uint32_t k = r.u32();
  const uint32_t d = r.u32();
  require(k >= 1 && k <= 100000 && d >= 1 && d <= 1000000, Err::corrupt_payload, path + ": implausible header");
  ActivationSet<float> as;
  as.resize_classes(int(k));
  std::vector<float> row(d);
  while (!r.at_eof()) {
    uint32_t label = r.u32();
    require(label < k, Err::corrupt_payload, path + ": record label out of range");
    r.bytes(row.data(), size_t(d) * 4);
    as.add(int(label), row.data(), int(d));
  }
  return as;
}

void save_perturbations(const std::string& path, const PerturbationSet& pset) {
  Writer w(path);
  w.magic("STPERT1");
  w.u8(uint8_t(pset.mode));
  w.u8(uint8_t(pset.family));
  w.f32(pset.epsilon);
  w.u32(uint32_t(pset.deltas.size()));
  for (size_t i = 0; i < pset.deltas.size(); ++i) {
    w.u32(pset.keys[i]);
    w.tensor(pset.deltas[i]);
  }
  w.close(path);
}

PerturbationSet load_perturbations(const std::string& path) {
  Reader r(path);
  r.magic("STPERT1");
  PerturbationSet p;
  uint8_t mode = r.u8(), family = r.u8();
  require(mode <= 1, Err::corrupt_payload, path + ": bad mode byte");
  require(family <= 3, Err::corrupt_payload, path + ": bad family byte");
  p.mode = PertMode(mode);
  p.family = PertFamily(family);
  p.epsilon = r.f32();
  uint32_t count = r.u32();
  require(count <= (1u << 26), Err::corrupt_payload, path + ": implausible delta count");
  for (uint32_t i = 0; i < count; ++i) {
    p.keys.push_back(r.u32());
    p.deltas.push_back(r.tensor());
  }
  return p;
}

}  // namespace st
