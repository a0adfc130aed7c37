#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "st/checkpoint.hpp"
#include "st/engine.hpp"
#include "st/staged_training.hpp"

using namespace st;

namespace {
Network<float> small_net(uint64_t seed) {
  Rng rng(seed);
  DesknetSpec spec;
  spec.in_channels = 2;
  spec.height = 8;
  spec.width = 8;
  spec.classes = 3;
  spec.conv1 = 4;
  spec.conv2 = 4;
  spec.conv3 = 4;
  spec.fc = 8;
  return make_desknet<float>(spec, rng);
}

bool bitwise_equal(const Network<float>& a, const Network<float>& b) {
  return param_fingerprint(a) == param_fingerprint(b);
}
}  // namespace

TEST_CASE("snapshot/restore round trip is bitwise exact") {
  Network<float> net = small_net(1);
  OptimizerState<float> opt = make_optimizer(net);
  opt.mom_w[0][3] = 0.123f;
  Checkpoint<float> ck = snapshot(net, opt, 7);
  const uint64_t before = param_fingerprint(net);

  for (auto& l : net.layers)
    if (l.has_params()) l.weight.flat() += 0.5f;
  opt.mom_w[0][3] = -9.0f;
  CHECK(param_fingerprint(net) != before);

  restore(net, opt, ck);
  CHECK(param_fingerprint(net) == before);
  CHECK(opt.mom_w[0][3] == 0.123f);
}

TEST_CASE("restore into a different architecture fails") {
  Network<float> net = small_net(1);
  OptimizerState<float> opt = make_optimizer(net);
  Checkpoint<float> ck = snapshot(net, opt);

  Rng rng(2);
  DesknetSpec other;
  other.in_channels = 2;
  other.height = 8;
  other.width = 8;
  other.classes = 3;
  other.conv1 = 5;  // differs
  other.conv2 = 4;
  other.conv3 = 4;
  other.fc = 8;
  Network<float> wide = make_desknet<float>(other, rng);
  OptimizerState<float> wopt = make_optimizer(wide);
  try {
    restore(wide, wopt, ck);
    FAIL("expected ArchitectureMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Err::architecture_mismatch);
  }
}

TEST_CASE("checkpoint file round trip is bitwise exact") {
  Network<float> net = small_net(3);
  OptimizerState<float> opt = make_optimizer(net);
  opt.mom_b[1][0] = 42.0f;
  Checkpoint<float> ck = snapshot(net, opt, 5);
  const std::string path = "test_ck.stckpt";
  save_checkpoint(path, ck);

  Checkpoint<float> back = load_checkpoint(path);
  REQUIRE(back.weights.size() == ck.weights.size());
  for (size_t i = 0; i < ck.weights.size(); ++i) {
    CHECK((back.weights[i].flat() == ck.weights[i].flat()).all());
    CHECK((back.biases[i].flat() == ck.biases[i].flat()).all());
    CHECK((back.mom_w[i].flat() == ck.mom_w[i].flat()).all());
    CHECK((back.mom_b[i].flat() == ck.mom_b[i].flat()).all());
  }

  Network<float> fresh = small_net(9);
  OptimizerState<float> fopt = make_optimizer(fresh);
  restore(fresh, fopt, back);
  CHECK(bitwise_equal(fresh, net));
  CHECK(fopt.mom_b[1][0] == 42.0f);
  std::remove(path.c_str());
}

TEST_CASE("truncated and corrupted checkpoint files are rejected") {
  Network<float> net = small_net(4);
  OptimizerState<float> opt = make_optimizer(net);
  const std::string path = "test_ck2.stckpt";
  save_checkpoint(path, snapshot(net, opt));

  {  // truncate
    std::ifstream in(path, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary);
    out.write(data.data(), long(data.size() / 2));
  }
  CHECK_THROWS_AS((void)load_checkpoint(path), Error);

  {  // bad magic
    std::ofstream out(path, std::ios::binary);
    out << "NOTCKPTxxxxxxxxxxxxxxxx";
  }
  try {
    (void)load_checkpoint(path);
    FAIL("expected MalformedFile");
  } catch (const Error& e) {
    CHECK(e.code() == Err::malformed_file);
  }
  std::remove(path.c_str());
}

TEST_CASE("freeze_prefix(0) is a no-op; freezing bounds are checked") {
  Network<float> net = small_net(5);
  freeze_prefix(net, 0);
  for (const auto& l : net.layers) CHECK(!l.frozen);
  CHECK_THROWS_AS(freeze_prefix(net, 99), Error);
  freeze_suffix(net, 2);
  auto idx = net.param_indices();
  CHECK(net.layers[size_t(idx[idx.size() - 1])].frozen);
  CHECK(net.layers[size_t(idx[idx.size() - 2])].frozen);
  CHECK(!net.layers[size_t(idx[0])].frozen);
}

TEST_CASE("transplanting the whole net reproduces the source outputs") {
  Network<float> src = small_net(6);
  Network<float> dst = small_net(7);
  transplant(dst, src, 0, dst.depth());
  Rng rng(8);
  Tensor<float> batch({3, 2, 8, 8});
  for (long i = 0; i < batch.size(); ++i) batch[i] = float(rng.uniform(0.0, 1.0));
  Tensor<float> a = forward(src, batch);
  Tensor<float> b = forward(dst, batch);
  CHECK((a.flat() == b.flat()).all());
  for (int i : dst.param_indices()) CHECK(dst.layers[size_t(i)].frozen);
}

TEST_CASE("transplant rejects mismatched architectures and bad ranges") {
  Network<float> net = small_net(1);
  Rng rng(2);
  DesknetSpec other;
  other.in_channels = 2;
  other.height = 8;
  other.width = 8;
  other.classes = 3;
  other.conv1 = 5;
  Network<float> diff = make_desknet<float>(other, rng);
  CHECK_THROWS_AS(transplant(net, diff, 0, 1), Error);
  Network<float> same = small_net(2);
  CHECK_THROWS_AS(transplant(net, same, 4, 2), Error);
}

TEST_CASE("frozen layers stay bitwise fixed through training") {
  Network<float> net = small_net(10);
  freeze_prefix(net, 2);
  auto idx = net.param_indices();
  std::vector<Tensor<float>> before;
  for (int i = 0; i < 2; ++i) before.push_back(net.layers[size_t(idx[size_t(i)])].weight);

  // small random dataset, 3 epochs
  ImageDataset ds = make_dataset(30, 2, 8, 8, 3);
  Rng rng(123);
  for (long i = 0; i < ds.images.size(); ++i) ds.images[i] = float(rng.uniform(0.0, 1.0));
  for (int i = 0; i < 30; ++i) ds.labels[size_t(i)] = i % 3;

  OptimizerState<float> opt = make_optimizer(net);
  TrainOptions opts;
  opts.batch_size = 10;
  opts.seed = 5;
  opts.aug.crop_flip = false;
  for (int e = 1; e <= 3; ++e)
    train_epoch(net, opt, ds, std::vector<double>(size_t(net.depth()), 0.05), opts, e);

  for (int i = 0; i < 2; ++i) {
    CHECK((net.layers[size_t(idx[size_t(i)])].weight.flat() == before[size_t(i)].flat()).all());
  }
  // un-frozen layers did move
  CHECK(!(net.layers[size_t(idx[2])].weight.flat() == small_net(10).layers[size_t(idx[2])].weight.flat()).all());
}
