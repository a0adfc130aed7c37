#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "st/checkpoint.hpp"
#include "st/engine.hpp"

namespace st {

struct STConfig {
  double gamma = 2.6e-4;  // ACM threshold; scale-dependent, calibrate per architecture
  double beta = 0.25;
  int epochs = 40;
  double base_lr = 0.1;
  int validation_per_class = 100;
};

// Largest tau the trigger guard admits: ceil(1/beta) - 1, with 1/beta snapped
// to the nearest integer when it is one up to rounding noise.
int tau_cap(double beta);

// Per-layer coefficients alpha_i = sigmoid(i/(beta*tau) - l), i = 1..l.
// Shallow layers get the small multipliers; larger tau pushes every entry
// down. tau = 0 never reaches this formula (the all-ones branch handles it).
std::vector<double> adjust_coefficients(int tau, double beta, int l);

struct STState {
  int tau = 0;
  std::vector<double> H;      // multipliers applied in the next epoch
  std::vector<double> H_tmp;  // previous epoch's vector, per the rollback rule
  Checkpoint<float> theta_tmp;
  int epoch = 0;
};

STState init_st_state(const Network<float>& net, const OptimizerState<float>& opt);

struct EpochRecord {
  int epoch = 0;
  double train_acc = 0.0;  // percent, on the augmented training stream
  double test_acc = 0.0;   // percent, measured after any rollback
  double train_loss = 0.0;
  double acm = 0.0;        // measured before any rollback
  int tau = 0;
  bool rollback = false;
  std::vector<double> alpha;  // multipliers used during this epoch
  std::vector<double> gmv;    // per-layer mean |grad|, averaged over batches
};

struct TrainLog {
  std::vector<EpochRecord> records;

  void write_csv(const std::string& path) const;
  static TrainLog read_csv(const std::string& path);
};

struct TrainOptions {
  int batch_size = 50;
  uint64_t seed = 0;
  AugConfig aug;
  bool adversarial = false;  // PGD inner attack per batch
  float adv_epsilon = 4.0f / 255.0f;
  float adv_step = 1.0f / 255.0f;
  int adv_steps = 10;
};

struct EpochResult {
  double train_acc = 0.0;
  double train_loss = 0.0;
  std::vector<double> gmv;
};

// One pass over the training set: shuffle (stream (seed, epoch)), augment,
// optional PGD, gradient step per batch at the given per-layer rates.
EpochResult train_epoch(Network<float>& net, OptimizerState<float>& opt, const ImageDataset& train,
                        const std::vector<double>& lr_per_layer, const TrainOptions& opts, int epoch);

// Exactly per_class samples of each class, drawn without replacement,
// deterministic under seed.
ImageDataset select_validation_subset(const ImageDataset& ds, int per_class, uint64_t seed);

using AcmFn = std::function<double(const Network<float>&)>;

// One epoch of the staged-training state machine. Returns the log record;
// mutates net/opt/state. acm_fn defaults to ACM on the validation subset and
// is injectable so the trigger logic can be driven by a script under test.
EpochRecord st_epoch(Network<float>& net, OptimizerState<float>& opt, const ImageDataset& train,
                     const ImageDataset* test, const STConfig& cfg, const TrainOptions& opts, STState& state,
                     const AcmFn& acm_fn);

struct RunHooks {
  AcmFn acm_override;                                    // replaces ACM-on-D^s when set
  std::function<void(int, const Network<float>&)> after_epoch;  // e.g. per-epoch checkpoints
};

// Natural training: cosine-attenuated global rate, no adjustment, no
// rollback. The update sequence matches run_st with the trigger disabled.
TrainLog run_natural(Network<float>& net, OptimizerState<float>& opt, const ImageDataset& train,
                     const ImageDataset* test, const LrSchedule& sched, const TrainOptions& opts,
                     const RunHooks& hooks = {});

// Staged training over cfg.epochs: attenuation, per-layer adjustment,
// ACM check against gamma, rollback + coefficient shrink on trigger.
TrainLog run_st(Network<float>& net, OptimizerState<float>& opt, const ImageDataset& train, const ImageDataset* test,
                const STConfig& cfg, const TrainOptions& opts, const RunHooks& hooks = {});

}  // namespace st
