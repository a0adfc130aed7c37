#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "st/staged_training.hpp"

using namespace st;

namespace {

ImageDataset random_dataset(int n, int k, uint64_t seed, int size = 8, int channels = 2) {
  ImageDataset ds = make_dataset(n, channels, size, size, k);
  Rng rng(seed);
  for (long i = 0; i < ds.images.size(); ++i) ds.images[i] = float(rng.uniform(0.0, 1.0));
  for (int i = 0; i < n; ++i) ds.labels[size_t(i)] = i % k;
  return ds;
}

Network<float> tiny_net(uint64_t seed, int k = 3) {
  Rng rng(seed);
  DesknetSpec spec;
  spec.in_channels = 2;
  spec.height = 8;
  spec.width = 8;
  spec.classes = k;
  spec.conv1 = 4;
  spec.conv2 = 4;
  spec.conv3 = 8;
  spec.fc = 8;
  return make_desknet<float>(spec, rng);
}

}  // namespace

TEST_CASE("adjustment coefficients: sigmoid midpoint and saturation") {
  // i=4, beta=1/5, tau=1, l=20: exponent i/(beta*tau) - l = 20 - 20 = 0
  auto h = adjust_coefficients(1, 0.2, 20);
  REQUIRE(h.size() == 20);
  CHECK(h[3] == doctest::Approx(0.5).epsilon(1e-15));
  // i=20: sigmoid(80), within 1e-9 of 1
  CHECK(std::abs(h[19] - 1.0) < 1e-9);
  for (double a : h) {
    CHECK(a > 0.0);
    CHECK(a < 1.0);
  }
}

TEST_CASE("adjustment coefficients: monotone in layer, nonincreasing in tau") {
  for (int tau = 1; tau <= 4; ++tau) {
    auto h = adjust_coefficients(tau, 0.2, 20);
    for (int i = 1; i < 20; ++i) CHECK(h[size_t(i)] > h[size_t(i - 1)]);
    if (tau > 1) {
      auto prev = adjust_coefficients(tau - 1, 0.2, 20);
      for (int i = 0; i < 20; ++i) CHECK(h[size_t(i)] <= prev[size_t(i)] + 1e-15);
    }
  }
  // extreme beta*tau does not overflow
  auto h = adjust_coefficients(1, 0.05, 20);
  CHECK(std::isfinite(h[19]));
  CHECK(h[19] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("adjustment coefficients validate tau and beta") {
  CHECK_THROWS_AS((void)adjust_coefficients(0, 0.25, 5), Error);
  CHECK_THROWS_AS((void)adjust_coefficients(1, 0.0, 5), Error);
  try {
    (void)adjust_coefficients(0, 0.25, 5);
  } catch (const Error& e) {
    CHECK(e.code() == Err::non_positive_tau);
  }
}

TEST_CASE("tau cap follows ceil(1/beta)-1 with rational snapping") {
  CHECK(tau_cap(0.25) == 3);
  CHECK(tau_cap(0.2) == 4);
  CHECK(tau_cap(1.0 / 3.0) == 2);  // binary 1/3 must not sneak past the guard
  CHECK(tau_cap(0.26) == 3);       // 1/0.26 = 3.846..., ceil-1 = 3
  CHECK(tau_cap(1.0) == 0);
}

TEST_CASE("validation subset: exact per-class counts, deterministic") {
  ImageDataset ds = random_dataset(120, 4, 99);
  ImageDataset sub = select_validation_subset(ds, 10, 7);
  CHECK(sub.size() == 40);
  auto hist = sub.class_histogram();
  for (int c = 0; c < 4; ++c) CHECK(hist[size_t(c)] == 10);
  ImageDataset sub2 = select_validation_subset(ds, 10, 7);
  CHECK((sub.images.flat() == sub2.images.flat()).all());
  CHECK(sub.labels == sub2.labels);
  ImageDataset sub3 = select_validation_subset(ds, 10, 8);
  CHECK(!(sub.images.flat() == sub3.images.flat()).all());
  CHECK_THROWS_AS((void)select_validation_subset(ds, 1000, 7), Error);
  try {
    (void)select_validation_subset(ds, 1000, 7);
  } catch (const Error& e) {
    CHECK(e.code() == Err::insufficient_class_samples);
  }
}

TEST_CASE("scripted ACM sequence triggers exactly one rollback at the right epoch") {
  Network<float> net = tiny_net(1);
  OptimizerState<float> opt = make_optimizer(net);
  ImageDataset train = random_dataset(60, 3, 5);
  STConfig cfg;
  cfg.gamma = 1.0;
  cfg.beta = 0.25;
  cfg.epochs = 4;
  cfg.base_lr = 0.05;
  TrainOptions opts;
  opts.batch_size = 20;
  opts.seed = 11;
  opts.aug.crop_flip = false;

  const std::vector<double> script{0.1, 0.1, 5.0, 0.1};  // one trigger at epoch 3
  STState state = init_st_state(net, opt);
  std::vector<uint64_t> post_epoch_fp;
  std::vector<EpochRecord> recs;
  for (int e = 1; e <= 4; ++e) {
    auto acm_fn = [&](const Network<float>&) { return script[size_t(e - 1)]; };
    recs.push_back(st_epoch(net, opt, train, nullptr, cfg, opts, state, acm_fn));
    post_epoch_fp.push_back(param_fingerprint(net));
  }
  CHECK(!recs[0].rollback);
  CHECK(!recs[1].rollback);
  CHECK(recs[2].rollback);
  CHECK(!recs[3].rollback);
  CHECK(recs[2].tau == 1);
  CHECK(recs[3].tau == 1);
  // rollback restored the epoch-2 checkpoint bitwise
  CHECK(post_epoch_fp[2] == post_epoch_fp[1]);
  // the adjusted H is in effect for epoch 4
  auto expect = adjust_coefficients(1, cfg.beta, net.depth());
  REQUIRE(recs[3].alpha.size() == expect.size());
  for (size_t i = 0; i < expect.size(); ++i) CHECK(recs[3].alpha[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  // epochs before the trigger ran at all-ones
  for (double a : recs[2].alpha) CHECK(a == 1.0);
}

TEST_CASE("gamma=0 saturates tau at the cap and never exceeds it") {
  Network<float> net = tiny_net(2);
  OptimizerState<float> opt = make_optimizer(net);
  ImageDataset train = random_dataset(60, 3, 6);
  STConfig cfg;
  cfg.gamma = 1e-300;  // triggers whenever the guard allows
  cfg.beta = 0.25;
  cfg.epochs = 8;
  cfg.base_lr = 0.05;
  TrainOptions opts;
  opts.batch_size = 20;
  opts.seed = 12;
  opts.aug.crop_flip = false;

  TrainLog log = run_st(net, opt, train, nullptr, cfg, opts);
  int max_tau = 0, prev_tau = 0;
  for (const auto& r : log.records) {
    CHECK(r.tau >= prev_tau);  // nondecreasing
    prev_tau = r.tau;
    max_tau = std::max(max_tau, r.tau);
  }
  CHECK(max_tau == 3);
  CHECK(log.records[0].rollback);
  CHECK(log.records[1].rollback);
  CHECK(log.records[2].rollback);
  CHECK(!log.records[3].rollback);  // guard: tau < 1/beta - 1 fails at tau = 3
}

TEST_CASE("trigger at epoch 1 rolls back to initialization") {
  Network<float> net = tiny_net(3);
  OptimizerState<float> opt = make_optimizer(net);
  const uint64_t init_fp = param_fingerprint(net);
  ImageDataset train = random_dataset(60, 3, 7);
  STConfig cfg;
  cfg.gamma = 1e-300;
  cfg.beta = 0.25;
  cfg.epochs = 1;
  cfg.base_lr = 0.05;
  TrainOptions opts;
  opts.batch_size = 20;
  opts.seed = 13;
  opts.aug.crop_flip = false;
  TrainLog log = run_st(net, opt, train, nullptr, cfg, opts);
  CHECK(log.records[0].rollback);
  CHECK(param_fingerprint(net) == init_fp);
}

TEST_CASE("with the trigger disabled, run_st matches natural training bitwise") {
  ImageDataset train = random_dataset(90, 3, 21);
  ImageDataset test = random_dataset(30, 3, 22);
  TrainOptions opts;
  opts.batch_size = 30;
  opts.seed = 77;
  opts.aug.crop_flip = true;  // augmentation streams must line up too

  Network<float> a = tiny_net(50);
  OptimizerState<float> oa = make_optimizer(a);
  Network<float> b = tiny_net(50);
  OptimizerState<float> ob = make_optimizer(b);
  REQUIRE(param_fingerprint(a) == param_fingerprint(b));

  STConfig cfg;
  cfg.gamma = std::numeric_limits<double>::infinity();
  cfg.beta = 0.25;
  cfg.epochs = 3;
  cfg.base_lr = 0.1;
  cfg.validation_per_class = 5;

  std::vector<uint64_t> fp_st, fp_nat;
  RunHooks hs;
  hs.after_epoch = [&](int, const Network<float>& m) { fp_st.push_back(param_fingerprint(m)); };
  TrainLog ls = run_st(a, oa, train, &test, cfg, opts, hs);

  RunHooks hn;
  hn.after_epoch = [&](int, const Network<float>& m) { fp_nat.push_back(param_fingerprint(m)); };
  LrSchedule sched{cfg.base_lr, cfg.epochs};
  TrainLog ln = run_natural(b, ob, train, &test, sched, opts, hn);

  REQUIRE(fp_st.size() == fp_nat.size());
  for (size_t i = 0; i < fp_st.size(); ++i) CHECK(fp_st[i] == fp_nat[i]);  // whole trajectory
  for (size_t i = 0; i < ls.records.size(); ++i) {
    CHECK(ls.records[i].train_acc == ln.records[i].train_acc);
    CHECK(ls.records[i].acm == ln.records[i].acm);
    CHECK(ls.records[i].tau == 0);
    CHECK(!ls.records[i].rollback);
  }
}

TEST_CASE("empty schedule leaves the net untouched") {
  Network<float> net = tiny_net(60);
  OptimizerState<float> opt = make_optimizer(net);
  const uint64_t fp = param_fingerprint(net);
  ImageDataset train = random_dataset(30, 3, 61);
  STConfig cfg;
  cfg.epochs = 0;
  cfg.validation_per_class = 5;
  TrainOptions opts;
  opts.seed = 1;
  TrainLog log = run_st(net, opt, train, nullptr, cfg, opts);
  CHECK(log.records.empty());
  CHECK(param_fingerprint(net) == fp);
}

TEST_CASE("train log csv round trip") {
  TrainLog log;
  for (int e = 1; e <= 3; ++e) {
    EpochRecord r;
    r.epoch = e;
    r.train_acc = 50.0 + e;
    r.test_acc = 40.0 + e;
    r.train_loss = 1.0 / e;
    r.acm = 0.001 * e;
    r.tau = e - 1;
    r.rollback = e == 2;
    r.alpha = {1.0, 0.5, 0.25};
    r.gmv = {0.01, 0.02, 0.03};
    log.records.push_back(r);
  }
  const std::string path = "test_log.csv";
  log.write_csv(path);
  TrainLog back = TrainLog::read_csv(path);
  REQUIRE(back.records.size() == 3);
  for (int e = 0; e < 3; ++e) {
    CHECK(back.records[size_t(e)].epoch == log.records[size_t(e)].epoch);
    CHECK(back.records[size_t(e)].train_acc == doctest::Approx(log.records[size_t(e)].train_acc));
    CHECK(back.records[size_t(e)].rollback == log.records[size_t(e)].rollback);
    CHECK(back.records[size_t(e)].alpha.size() == 3);
    CHECK(back.records[size_t(e)].alpha[2] == doctest::Approx(0.25));
  }
  std::remove(path.c_str());
}

TEST_CASE("epoch results are independent of the thread count") {
  // All reductions run over fixed-size shards; ST_THREADS must not matter.
  ImageDataset train = random_dataset(64, 3, 31);
  auto run_once = [&](const char* threads) {
    setenv("ST_THREADS", threads, 1);
    Network<float> net = tiny_net(70);
    OptimizerState<float> opt = make_optimizer(net);
    TrainOptions opts;
    opts.batch_size = 32;
    opts.seed = 3;
    opts.aug.crop_flip = true;
    for (int e = 1; e <= 2; ++e)
      train_epoch(net, opt, train, std::vector<double>(size_t(net.depth()), 0.05), opts, e);
    unsetenv("ST_THREADS");
    return param_fingerprint(net);
  };
  const uint64_t one = run_once("1");
  const uint64_t two = run_once("2");
  const uint64_t four = run_once("4");
  CHECK(one == two);
  CHECK(one == four);
}
