#pragma once

#include <string>
#include <vector>

#include "st/augment.hpp"
#include "st/data.hpp"
#include "st/network.hpp"

namespace st {

enum class PertMode : uint8_t { sample_wise = 0, class_wise = 1 };
enum class PertFamily : uint8_t { em = 0, rem = 1, sp = 2, ops = 3 };

const char* pert_mode_name(PertMode m);
const char* pert_family_name(PertFamily f);
PertMode pert_mode_from(const std::string& s);
PertFamily pert_family_from(const std::string& s);

// Additive deltas, one per sample or one per class, with their l-inf budget.
struct PerturbationSet {
  PertMode mode = PertMode::sample_wise;
  PertFamily family = PertFamily::em;
  float epsilon = 8.0f / 255.0f;
  std::vector<uint32_t> keys;          // sample index or class id per delta
  std::vector<Tensor<float>> deltas;

  float max_abs() const;
};

struct GenConfig {
  int model_steps_per_round = 10;  // optimizer batches between delta passes
  int pert_steps = 20;             // projected sign steps per batch pass
  float pert_step_size = 0.0f;     // 0 -> epsilon/8
  int adv_steps = 5;               // inner maximization (REM)
  float adv_step_size = 0.0f;      // 0 -> adv_epsilon/4
  float stop_error = 0.01f;        // perturbed-train error target
  int max_rounds = 30;
  int batch_size = 50;
  bool with_cg = false;            // sample the CG transform inside the loss
  AugConfig cg;                    // strengths for with_cg
  uint64_t seed = 0;
};

struct GenResult {
  PerturbationSet pset;
  bool converged = false;
  int rounds = 0;
  float final_error = 1.0f;
  long projection_checks = 0;  // budget assertions evaluated during generation
};

// Error-minimizing deltas via alternating min-min: model steps on perturbed
// data, then projected sign descent on the deltas. Mutates the surrogate net.
GenResult gen_em(const ImageDataset& ds, Network<float>& net, float epsilon, PertMode mode, const GenConfig& cfg);

// Robust variant: the delta objective is evaluated at the worst-case
// adversarial noise within eps_adv (min-min-max). eps_adv = 0 degrades to
// gen_em step for step. cfg.with_cg applies the CG transform inside the loss.
GenResult gen_rem(const ImageDataset& ds, Network<float>& net, float eps_unlearnable, float eps_adv,
                  const GenConfig& cfg);

// Optimization-free class-wise patterns: an 8x8 random sign grid per class,
// nearest-neighbor upsampled and scaled to exactly +-epsilon.
PerturbationSet gen_sp(int channels, int height, int width, int k, float epsilon, uint64_t seed);

// One distinct pixel position per class pushed to an extreme value.
PerturbationSet gen_ops(int channels, int height, int width, int k, uint64_t seed);

// x <- clip(x + delta, 0, 1) on a deterministic fraction `ratio` of samples.
// Class-wise sets index deltas by the sample label.
ImageDataset apply_perturbations(const ImageDataset& ds, const PerturbationSet& pset, double ratio, uint64_t seed);

// STPERT1 on-disk format (little endian):
//   "STPERT1" | u8 mode | u8 family | f32 epsilon | u32 count
//   | per entry: u32 key | u32 rank | u32 dims[rank] | f32 payload
void save_perturbations(const std::string& path, const PerturbationSet& pset);
PerturbationSet load_perturbations(const std::string& path);

}  // namespace st
