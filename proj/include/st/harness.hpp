#pragma once

#include <optional>
#include <string>
#include <vector>

#include "st/staged_training.hpp"
#include "st/unlearnable.hpp"

namespace st {

enum class Pipeline { nt, nt_cg, at, st, st_cg, st_full };

const char* pipeline_name(Pipeline p);
Pipeline pipeline_from(const std::string& s);

struct DatasetSpec {
  std::string type = "synthetic";  // synthetic | cifar10 | records
  SynthSpec synth;
  std::vector<std::string> train_files;
  std::string test_file;
  int channels = 3, height = 32, width = 32, classes = 10;
  int limit_train = 0;  // keep only the first N training samples when > 0
};

struct PerturbSpec {
  std::string family = "sp";
  std::string mode = "class";
  float epsilon = 8.0f / 255.0f;
  double ratio = 1.0;
  std::string file;  // STPERT1 path; empty disables perturbation on train
  GenConfig gen;
};

struct ExperimentConfig {
  uint64_t seed = 1;
  std::string out_dir;
  Pipeline pipeline = Pipeline::nt;
  int epochs = 40;
  int batch_size = 50;
  DatasetSpec dataset;
  PerturbSpec perturb;
  DesknetSpec model;  // classes resolved from the dataset
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr = 0.0;  // 0 -> pipeline default (0.1; 0.2 for ST-CG)
  STConfig st;
  int finetune_epochs = 0;  // 0 -> 30% of epochs
  double finetune_lr = 0.3;
  AugConfig aug;
  float at_epsilon = 4.0f / 255.0f;
  float at_step = 1.0f / 255.0f;
  int at_steps = 10;
  std::string save_checkpoints = "final";  // none | final | all
};

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig config_from_json_file(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);
uint64_t config_hash(const ExperimentConfig& cfg);

struct RunReport {
  double final_test_acc = 0.0;
  double final_train_acc = 0.0;
  int epochs = 0;
  int rollbacks = 0;
  uint64_t config_hash = 0;
  double wall_seconds = 0.0;
  std::string log_csv;
  std::string checkpoint;
  TrainLog log;
};

struct LoadedData {
  ImageDataset train;  // with perturbation applied when configured
  ImageDataset test;   // always clean
  ImageDataset clean_train;
};

LoadedData load_data(const ExperimentConfig& cfg);

// Trains per the pipeline and writes config.json, log.csv, report.json and
// checkpoints into out_dir (when set).
RunReport run_experiment(const ExperimentConfig& cfg);

// Generates the configured perturbation file; returns the budget audit line.
std::string cmd_generate(const ExperimentConfig& cfg, const std::string& out_file);

struct SweepCell {
  double value = 0.0;
  bool ok = false;
  std::string error;
  RunReport report;
};

std::vector<SweepCell> cmd_sweep(const ExperimentConfig& cfg, const std::string& axis,
                                 const std::vector<double>& values, const std::string& out_dir);

struct TransplantReport {
  double train_acc = 0.0;
  double test_acc = 0.0;
};

// Builds M^S (mode "shallow": clean frozen prefix) or M^D (mode "deep":
// clean frozen suffix) from the reference checkpoint and naturally trains the
// remaining layers on the configured (perturbed) data.
TransplantReport cmd_transplant(const ExperimentConfig& cfg, const std::string& mode,
                                const std::string& reference_checkpoint, int frozen_layers = 2);

// Summarizes a finished run directory; optionally dumps STACT1 activations
// for the requested epochs (needs save_checkpoints = "all").
void cmd_report(const std::string& run_dir, const std::vector<int>& dump_epochs, const std::string& out_csv);

// NT on clean data; gamma = 1.5x the peak ACM seen across epochs.
double cmd_calibrate_gamma(const ExperimentConfig& cfg);

}  // namespace st
