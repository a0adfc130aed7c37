#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "st/engine.hpp"
#include "st/loss.hpp"
#include "st/optimizer.hpp"
#include "st/unlearnable.hpp"

using namespace st;

namespace {

ImageDataset small_data(int n, int k, uint64_t seed, int size = 10) {
  ImageDataset ds = make_dataset(n, 3, size, size, k);
  Rng rng(seed);
  for (long i = 0; i < ds.images.size(); ++i) ds.images[i] = float(rng.uniform(0.1, 0.9));
  for (int i = 0; i < n; ++i) ds.labels[size_t(i)] = i % k;
  return ds;
}

Network<float> small_net(uint64_t seed, int k, int size = 10) {
  Rng rng(seed);
  DesknetSpec spec;
  spec.in_channels = 3;
  spec.height = size;
  spec.width = size;
  spec.classes = k;
  spec.conv1 = 4;
  spec.conv2 = 4;
  spec.conv3 = 8;
  spec.fc = 8;
  return make_desknet<float>(spec, rng);
}

GenConfig quick_cfg(uint64_t seed) {
  GenConfig cfg;
  cfg.model_steps_per_round = 2;
  cfg.pert_steps = 4;
  cfg.max_rounds = 2;
  cfg.batch_size = 12;
  cfg.adv_steps = 2;
  cfg.seed = seed;
  return cfg;
}

constexpr float kEps = 8.0f / 255.0f;

}  // namespace

TEST_CASE("EM with zero budget returns identically zero deltas") {
  ImageDataset ds = small_data(24, 3, 1);
  Network<float> net = small_net(2, 3);
  GenResult res = gen_em(ds, net, 0.0f, PertMode::sample_wise, quick_cfg(3));
  CHECK(res.pset.deltas.size() == 24);
  CHECK(res.pset.max_abs() == 0.0f);
  ImageDataset out = apply_perturbations(ds, res.pset, 1.0, 5);
  CHECK((out.images.flat() == ds.images.flat()).all());
}

TEST_CASE("EM deltas stay inside the budget and projections are audited") {
  ImageDataset ds = small_data(24, 3, 4);
  Network<float> net = small_net(5, 3);
  GenResult res = gen_em(ds, net, kEps, PertMode::sample_wise, quick_cfg(6));
  CHECK(res.pset.max_abs() <= kEps);
  CHECK(res.pset.max_abs() > 0.0f);
  CHECK(res.projection_checks > 0);
  CHECK(res.projection_checks >= long(res.rounds) * 4 /*steps*/ * 24 /*samples*/);
}

TEST_CASE("class-wise EM shares one delta per class") {
  ImageDataset ds = small_data(24, 3, 7);
  Network<float> net = small_net(8, 3);
  GenResult res = gen_em(ds, net, kEps, PertMode::class_wise, quick_cfg(9));
  CHECK(res.pset.deltas.size() == 3);
  CHECK(res.pset.max_abs() <= kEps);
}

TEST_CASE("EM generation is deterministic under the seed") {
  ImageDataset ds = small_data(24, 3, 10);
  Network<float> n1 = small_net(11, 3);
  Network<float> n2 = small_net(11, 3);
  GenResult a = gen_em(ds, n1, kEps, PertMode::sample_wise, quick_cfg(12));
  GenResult b = gen_em(ds, n2, kEps, PertMode::sample_wise, quick_cfg(12));
  REQUIRE(a.pset.deltas.size() == b.pset.deltas.size());
  for (size_t i = 0; i < a.pset.deltas.size(); ++i)
    CHECK((a.pset.deltas[i].flat() == b.pset.deltas[i].flat()).all());
}

TEST_CASE("REM with zero adversarial budget reproduces EM exactly") {
  ImageDataset ds = small_data(24, 3, 13);
  Network<float> n1 = small_net(14, 3);
  Network<float> n2 = small_net(14, 3);
  GenResult em = gen_em(ds, n1, kEps, PertMode::sample_wise, quick_cfg(15));
  GenResult rem = gen_rem(ds, n2, kEps, 0.0f, quick_cfg(15));
  REQUIRE(em.pset.deltas.size() == rem.pset.deltas.size());
  for (size_t i = 0; i < em.pset.deltas.size(); ++i)
    CHECK((em.pset.deltas[i].flat() == rem.pset.deltas[i].flat()).all());
  CHECK(param_fingerprint(n1) == param_fingerprint(n2));  // surrogate trajectories agree too
}

TEST_CASE("REM holds both budgets; adversarial budget must not exceed delta budget") {
  ImageDataset ds = small_data(24, 3, 16);
  Network<float> net = small_net(17, 3);
  GenResult res = gen_rem(ds, net, kEps, kEps / 2.0f, quick_cfg(18));
  CHECK(res.pset.max_abs() <= kEps);
  CHECK(res.projection_checks > 0);
  Network<float> net2 = small_net(17, 3);
  CHECK_THROWS_AS((void)gen_rem(ds, net2, kEps, 2.0f * kEps, quick_cfg(18)), Error);
}

TEST_CASE("REM-T (with_cg) runs and stays inside budgets") {
  ImageDataset ds = small_data(24, 3, 19);
  Network<float> net = small_net(20, 3);
  GenConfig cfg = quick_cfg(21);
  cfg.with_cg = true;
  GenResult res = gen_rem(ds, net, kEps, kEps / 2.0f, cfg);
  CHECK(res.pset.max_abs() <= kEps);
  CHECK(res.pset.max_abs() > 0.0f);
}

TEST_CASE("SP: exact budget, determinism, distinct class patterns") {
  PerturbationSet p = gen_sp(3, 28, 28, 10, kEps, 42);
  CHECK(p.deltas.size() == 10);
  for (const auto& d : p.deltas) {
    CHECK(d.flat().abs().maxCoeff() == kEps);   // every cell is exactly +-eps
    CHECK(d.flat().abs().minCoeff() == kEps);
  }
  PerturbationSet q = gen_sp(3, 28, 28, 10, kEps, 42);
  for (size_t i = 0; i < p.deltas.size(); ++i) CHECK((p.deltas[i].flat() == q.deltas[i].flat()).all());
  for (size_t i = 0; i < p.deltas.size(); ++i)
    for (size_t j = i + 1; j < p.deltas.size(); ++j)
      CHECK(!(p.deltas[i].flat() == p.deltas[j].flat()).all());
}

TEST_CASE("SP patterns are linearly separable from noise (probe)") {
  // a linear classifier on delta_c + small noise must nail the class
  const int k = 4;
  PerturbationSet p = gen_sp(3, 12, 12, k, kEps, 7);
  Rng rng(8);
  const long dim = p.deltas[0].size();
  ImageDataset probe_train = make_dataset(k * 100, 3, 12, 12, k);
  for (int c = 0; c < k; ++c)
    for (int i = 0; i < 100; ++i) {
      const int row = c * 100 + i;
      probe_train.labels[size_t(row)] = c;
      float* dst = probe_train.image_ptr(row);
      for (long j = 0; j < dim; ++j) dst[j] = p.deltas[size_t(c)][j] + float(rng.normal(0.0, 0.004));
    }
  // single dense layer, plain SGD
  Network<float> lin;
  lin.in_channels = 3;
  lin.in_h = 12;
  lin.in_w = 12;
  lin.layers.push_back(make_plain<float>(LayerKind::flatten));
  Layer<float> dense = make_dense<float>(k, int(dim));
  Rng wrng(3);
  he_init(dense, wrng);
  lin.layers.push_back(dense);
  lin.penultimate_index = 0;
  OptimizerState<float> opt = make_optimizer(lin, 0.9f, 0.0f);
  std::vector<int> idx(size_t(probe_train.size()));
  for (int i = 0; i < probe_train.size(); ++i) idx[size_t(i)] = i;
  for (int e = 0; e < 30; ++e) {
    Tensor<float> batch = make_batch(probe_train, idx, nullptr, 0, 0);
    Gradients<float> g = zero_gradients(lin);
    compute_grads(lin, batch, probe_train.labels, &g, nullptr);
    sgd_step(lin, g, opt, {1.0});
  }
  CHECK(evaluate(lin, probe_train) >= 99.0);
}

TEST_CASE("OPS: one extreme pixel per class, distinct positions") {
  PerturbationSet p = gen_ops(3, 16, 16, 10, 3);
  CHECK(p.deltas.size() == 10);
  std::vector<int> positions;
  for (const auto& d : p.deltas) {
    int nonzero_positions = 0, pos = -1;
    for (int q = 0; q < 16 * 16; ++q) {
      bool any = false;
      for (int c = 0; c < 3; ++c) any = any || d[c * 256 + q] != 0.0f;
      if (any) {
        ++nonzero_positions;
        pos = q;
        for (int c = 0; c < 3; ++c) CHECK(std::abs(d[c * 256 + q]) == 1.0f);
      }
    }
    CHECK(nonzero_positions == 1);
    positions.push_back(pos);
  }
  std::sort(positions.begin(), positions.end());
  CHECK(std::adjacent_find(positions.begin(), positions.end()) == positions.end());
  try {
    (void)gen_ops(3, 2, 2, 5, 3);
    FAIL("expected TooManyClasses");
  } catch (const Error& e) {
    CHECK(e.code() == Err::too_many_classes);
  }
}

TEST_CASE("applying OPS pushes the chosen pixel to an extreme") {
  ImageDataset ds = small_data(8, 4, 30, 16);
  PerturbationSet p = gen_ops(3, 16, 16, 4, 31);
  ImageDataset out = apply_perturbations(ds, p, 1.0, 32);
  for (int i = 0; i < out.size(); ++i) {
    const Tensor<float>& d = p.deltas[size_t(out.labels[size_t(i)])];
    for (long j = 0; j < d.size(); ++j) {
      if (d[j] > 0) CHECK(out.image_ptr(i)[j] == 1.0f);
      if (d[j] < 0) CHECK(out.image_ptr(i)[j] == 0.0f);
    }
  }
}

TEST_CASE("apply_perturbations: ratio semantics and determinism") {
  ImageDataset ds = small_data(40, 4, 33, 12);
  PerturbationSet p = gen_sp(3, 12, 12, 4, kEps, 34);

  ImageDataset none = apply_perturbations(ds, p, 0.0, 35);
  CHECK((none.images.flat() == ds.images.flat()).all());

  ImageDataset half = apply_perturbations(ds, p, 0.5, 35);
  int changed = 0;
  for (int i = 0; i < 40; ++i) {
    bool diff = false;
    for (long j = 0; j < ds.image_size() && !diff; ++j)
      diff = half.image_ptr(i)[j] != ds.image_ptr(i)[j];
    changed += diff ? 1 : 0;
  }
  CHECK(changed == 20);

  ImageDataset full = apply_perturbations(ds, p, 1.0, 36);
  CHECK(full.images.flat().minCoeff() >= 0.0f);
  CHECK(full.images.flat().maxCoeff() <= 1.0f);
  // class-wise: same-class samples moved by the same delta (inputs are interior)
  ImageDataset again = apply_perturbations(ds, p, 1.0, 37);
  CHECK((full.images.flat() == again.images.flat()).all());
}

TEST_CASE("perturbation file round trip") {
  PerturbationSet p = gen_sp(3, 8, 8, 5, kEps, 50);
  const std::string path = "test_pert.stpert";
  save_perturbations(path, p);
  PerturbationSet back = load_perturbations(path);
  CHECK(back.mode == p.mode);
  CHECK(back.family == p.family);
  CHECK(back.epsilon == p.epsilon);
  REQUIRE(back.deltas.size() == p.deltas.size());
  for (size_t i = 0; i < p.deltas.size(); ++i) {
    CHECK(back.keys[i] == p.keys[i]);
    CHECK((back.deltas[i].flat() == p.deltas[i].flat()).all());
  }
  std::remove(path.c_str());
}

TEST_CASE("pgd attack honors its ball and the pixel box") {
  ImageDataset ds = small_data(12, 3, 60, 10);
  Network<float> net = small_net(61, 3);
  std::vector<int> idx;
  for (int i = 0; i < 12; ++i) idx.push_back(i);
  Tensor<float> batch = make_batch(ds, idx, nullptr, 0, 0);
  std::vector<int> labels = batch_labels(ds, idx);
  Rng rng(62);
  const float eps = 4.0f / 255.0f;
  Tensor<float> adv = pgd_attack(net, batch, labels, eps, 1.0f / 255.0f, 10, rng);
  CHECK((adv.flat() - batch.flat()).abs().maxCoeff() <= eps + 1e-7f);
  CHECK(adv.flat().minCoeff() >= 0.0f);
  CHECK(adv.flat().maxCoeff() <= 1.0f);
  // the attack should not reduce the loss
  auto clean = cross_entropy(forward(net, batch), labels);
  auto attacked = cross_entropy(forward(net, adv), labels);
  CHECK(attacked.loss >= clean.loss - 1e-4);
}
