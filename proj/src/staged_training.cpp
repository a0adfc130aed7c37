#include "st/staged_training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

namespace st {

int tau_cap(double beta) {
  require(beta > 0.0, Err::non_positive_beta, "beta must be positive");
  double q = 1.0 / beta;
  const double r = std::round(q);
  if (std::abs(q - r) < 1e-9 * std::max(1.0, q)) q = r;  // 1/3 etc. round-trip through binary
  return int(std::ceil(q)) - 1;
}

namespace {
bool trigger_guard(int tau, double beta) { return tau < tau_cap(beta); }
}  // namespace

std::vector<double> adjust_coefficients(int tau, double beta, int l) {
  require(tau >= 1, Err::non_positive_tau, "tau must be >= 1 here; tau = 0 is the all-ones branch");
  require(beta > 0.0, Err::non_positive_beta, "beta must be positive");
  std::vector<double> h(static_cast<size_t>(l));
  for (int i = 1; i <= l; ++i) {
    const double x = double(i) / (beta * double(tau)) - double(l);
    // stable sigmoid
    h[size_t(i - 1)] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return h;
}

STState init_st_state(const Network<float>& net, const OptimizerState<float>& opt) {
  STState s;
  s.tau = 0;
  s.H.assign(size_t(net.depth()), 1.0);
  s.H_tmp = s.H;
  s.theta_tmp = snapshot(net, opt, 0);  // a trigger in epoch 1 rolls back to initialization
  s.epoch = 0;
  return s;
}

EpochResult train_epoch(Network<float>& net, OptimizerState<float>& opt, const ImageDataset& train,
                        const std::vector<double>& lr_per_layer, const TrainOptions& opts, int epoch) {
  const int n = train.size();
  require(n > 0, Err::bad_config, "empty training set");
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = derive_rng(opts.seed, 0x0e0c, uint64_t(epoch));
  shuffle_rng.shuffle(order);

  EpochResult res;
  res.gmv.assign(size_t(net.depth()), 0.0);
  int correct = 0;
  double loss_sum = 0.0;
  int batches = 0;
  Gradients<float> grads = zero_gradients(net);
  for (int start = 0; start < n; start += opts.batch_size) {
    const int end = std::min(n, start + opts.batch_size);
    std::vector<int> idx(order.begin() + start, order.begin() + end);
    Tensor<float> batch = make_batch(train, idx, &opts.aug, opts.seed, epoch);
    std::vector<int> labels = batch_labels(train, idx);
    if (opts.adversarial) {
      Rng adv_rng = derive_rng(opts.seed, 0xadd, uint64_t(epoch), uint64_t(batches));
      batch = pgd_attack(net, batch, labels, opts.adv_epsilon, opts.adv_step, opts.adv_steps, adv_rng);
    }
    for (auto& g : grads.weight) g.flat().setZero();
    for (auto& g : grads.bias) g.flat().setZero();
    BatchStats stats = compute_grads(net, batch, labels, &grads, nullptr);
    for (int i = 0; i < net.depth(); ++i) res.gmv[size_t(i)] += layer_grad_mean(grads, i);
    sgd_step(net, grads, opt, lr_per_layer);
    correct += stats.correct;
    loss_sum += stats.loss * double(end - start);
    ++batches;
  }
  for (auto& g : res.gmv) g /= double(batches);
  res.train_acc = 100.0 * double(correct) / double(n);
  res.train_loss = loss_sum / double(n);
  return res;
}

ImageDataset select_validation_subset(const ImageDataset& ds, int per_class, uint64_t seed) {
  require(per_class > 0, Err::bad_config, "per_class must be positive");
  std::vector<std::vector<int>> by_class(size_t(ds.class_count));
  for (int i = 0; i < ds.size(); ++i) by_class[size_t(ds.labels[size_t(i)])].push_back(i);
  std::vector<int> chosen;
  for (int c = 0; c < ds.class_count; ++c) {
    auto& pool = by_class[size_t(c)];
    require(int(pool.size()) >= per_class, Err::insufficient_class_samples,
            "class " + std::to_string(c) + " has " + std::to_string(pool.size()) + " < " + std::to_string(per_class));
    Rng rng = derive_rng(seed, 0xd5, uint64_t(c));
    rng.shuffle(pool);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + per_class);
  }
  ImageDataset sub = make_dataset(int(chosen.size()), ds.channels(), ds.height(), ds.width(), ds.class_count, "ds");
  for (size_t i = 0; i < chosen.size(); ++i) {
    sub.labels[i] = ds.labels[size_t(chosen[i])];
    std::copy(ds.image_ptr(chosen[i]), ds.image_ptr(chosen[i]) + ds.image_size(), sub.image_ptr(int(i)));
  }
  return sub;
}

EpochRecord st_epoch(Network<float>& net, OptimizerState<float>& opt, const ImageDataset& train,
                     const ImageDataset* test, const STConfig& cfg, const TrainOptions& opts, STState& state,
                     const AcmFn& acm_fn) {
  const int l = net.depth();
  require(int(state.H.size()) == l, Err::length_mismatch, "state vector length != depth");
  state.epoch += 1;
  const int e = state.epoch;

  EpochRecord rec;
  rec.epoch = e;
  rec.alpha = state.H;

  const LrSchedule sched{cfg.base_lr, cfg.epochs};
  const double rate = epoch_rate(sched, e);  // attenuation; identical across layers under cosine
  std::vector<double> lr(static_cast<size_t>(l));
  for (int i = 0; i < l; ++i) lr[size_t(i)] = state.H[size_t(i)] * rate;  // adjustment

  EpochResult tr = train_epoch(net, opt, train, lr, opts, e);
  rec.train_acc = tr.train_acc;
  rec.train_loss = tr.train_loss;
  rec.gmv = tr.gmv;

  rec.acm = acm_fn(net);
  if (rec.acm > cfg.gamma && trigger_guard(state.tau, cfg.beta)) {
    state.tau += 1;
    restore(net, opt, state.theta_tmp);  // roll back to the last non-overfit checkpoint
    state.H = adjust_coefficients(state.tau, cfg.beta, l);
    rec.rollback = true;
  } else {
    if (state.tau == 0)
      state.H.assign(size_t(l), 1.0);
    else
      state.H = state.H_tmp;
    state.theta_tmp = snapshot(net, opt, e);
  }
  state.H_tmp = state.H;

  rec.tau = state.tau;
  rec.test_acc = test ? evaluate(net, *test) : 0.0;
  return rec;
}

namespace {
// The validation subset is drawn once up front; the returned closure owns it.
AcmFn make_acm_fn(const RunHooks& hooks, const ImageDataset& train, int per_class, uint64_t seed) {
  if (hooks.acm_override) return hooks.acm_override;
  auto ds = std::make_shared<ImageDataset>(select_validation_subset(train, per_class, seed));
  return [ds](const Network<float>& m) { return acm_of_model(m, *ds); };
}
}  // namespace

// Plain loop on purpose: no snapshots, no state machine. Its update sequence
// is the reference that run_st must reproduce when the trigger is disabled.
TrainLog run_natural(Network<float>& net, OptimizerState<float>& opt, const ImageDataset& train,
                     const ImageDataset* test, const LrSchedule& sched, const TrainOptions& opts,
                     const RunHooks& hooks) {
  TrainLog log;
  STConfig defaults;
  AcmFn acm_fn = make_acm_fn(hooks, train, defaults.validation_per_class, opts.seed);
  const int l = net.depth();
  for (int e = 1; e <= sched.total_epochs; ++e) {
    std::vector<double> lr(size_t(l), epoch_rate(sched, e));
    EpochResult tr = train_epoch(net, opt, train, lr, opts, e);
    EpochRecord rec;
    rec.epoch = e;
    rec.alpha.assign(size_t(l), 1.0);
    rec.train_acc = tr.train_acc;
    rec.train_loss = tr.train_loss;
    rec.gmv = tr.gmv;
    rec.acm = acm_fn(net);
    rec.test_acc = test ? evaluate(net, *test) : 0.0;
    log.records.push_back(std::move(rec));
    if (hooks.after_epoch) hooks.after_epoch(e, net);
  }
  return log;
}

TrainLog run_st(Network<float>& net, OptimizerState<float>& opt, const ImageDataset& train, const ImageDataset* test,
                const STConfig& cfg, const TrainOptions& opts, const RunHooks& hooks) {
  TrainLog log;
  AcmFn acm_fn = make_acm_fn(hooks, train, cfg.validation_per_class, opts.seed);
  STState state = init_st_state(net, opt);
  for (int e = 1; e <= cfg.epochs; ++e) {
    log.records.push_back(st_epoch(net, opt, train, test, cfg, opts, state, acm_fn));
    if (hooks.after_epoch) hooks.after_epoch(e, net);
  }
  return log;
}

void TrainLog::write_csv(const std::string& path) const {
  std::ofstream f(path);
  require(f.good(), Err::io_failure, "cannot open " + path + " for writing");
  const int l = records.empty() ? 0 : int(records.front().alpha.size());
  f << "epoch,train_acc,test_acc,train_loss,acm,tau,rollback";
  for (int i = 1; i <= l; ++i) f << ",alpha_" << i;
  for (int i = 1; i <= l; ++i) f << ",gmv_" << i;
  f << "\n";
  char buf[64];
  for (const auto& r : records) {
    f << r.epoch;
    auto num = [&](double v) {
      std::snprintf(buf, sizeof buf, ",%.9g", v);
      f << buf;
    };
    num(r.train_acc);
    num(r.test_acc);
    num(r.train_loss);
    num(r.acm);
    f << "," << r.tau << "," << (r.rollback ? 1 : 0);
    for (double a : r.alpha) num(a);
    for (double g : r.gmv) num(g);
    f << "\n";
  }
  f.close();
  require(f.good(), Err::io_failure, "write failed for " + path);
}

TrainLog TrainLog::read_csv(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Err::io_failure, "cannot open " + path);
  std::string line;
  require(bool(std::getline(f, line)), Err::missing_logs, path + " is empty");
  int l = 0;
  {
    std::stringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ','))
      if (col.rfind("alpha_", 0) == 0) ++l;
  }
  TrainLog log;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    require(int(cells.size()) == 7 + 2 * l, Err::malformed_file, path + ": bad row width");
    EpochRecord r;
    r.epoch = std::stoi(cells[0]);
    r.train_acc = std::stod(cells[1]);
    r.test_acc = std::stod(cells[2]);
    r.train_loss = std::stod(cells[3]);
    r.acm = std::stod(cells[4]);
    r.tau = std::stoi(cells[5]);
    r.rollback = cells[6] == "1";
    for (int i = 0; i < l; ++i) r.alpha.push_back(std::stod(cells[size_t(7 + i)]));
    for (int i = 0; i < l; ++i) r.gmv.push_back(std::stod(cells[size_t(7 + l + i)]));
    log.records.push_back(std::move(r));
  }
  return log;
}

}  // namespace st
