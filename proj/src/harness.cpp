#include "st/harness.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace st {

using nlohmann::json;
namespace fs = std::filesystem;

const char* pipeline_name(Pipeline p) {
  switch (p) {
    case Pipeline::nt: return "NT";
    case Pipeline::nt_cg: return "NT-CG";
    case Pipeline::at: return "AT";
    case Pipeline::st: return "ST";
    case Pipeline::st_cg: return "ST-CG";
    case Pipeline::st_full: return "ST-FULL";
  }
  return "?";
}

Pipeline pipeline_from(const std::string& s) {
  std::string u;
  for (char c : s) u += char(std::toupper(c));
  if (u == "NT") return Pipeline::nt;
  if (u == "NT-CG" || u == "NTCG") return Pipeline::nt_cg;
  if (u == "AT") return Pipeline::at;
  if (u == "ST") return Pipeline::st;
  if (u == "ST-CG" || u == "STCG") return Pipeline::st_cg;
  if (u == "ST-FULL" || u == "STFULL" || u == "ST-FULL") return Pipeline::st_full;
  fail(Err::bad_config, "unknown pipeline: " + s);
}

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_aug(const json& j, AugConfig& a) {
  get_if(j, "crop_padding", a.crop_padding);
  get_if(j, "flip_prob", a.flip_prob);
  get_if(j, "jitter_prob", a.jitter_prob);
  get_if(j, "brightness", a.brightness);
  get_if(j, "contrast", a.contrast);
  get_if(j, "saturation", a.saturation);
  get_if(j, "hue", a.hue);
  get_if(j, "grayscale_prob", a.grayscale_prob);
  get_if(j, "cutout_size", a.cutout_size);
  get_if(j, "gaussian_sigma", a.gaussian_sigma);
  get_if(j, "gaussian_ksize", a.gaussian_ksize);
  get_if(j, "cutout", a.use_cutout);
  get_if(j, "gaussian", a.use_gaussian);
}

json aug_to_json(const AugConfig& a) {
  return json{{"crop_padding", a.crop_padding},
              {"flip_prob", a.flip_prob},
              {"jitter_prob", a.jitter_prob},
              {"brightness", a.brightness},
              {"contrast", a.contrast},
              {"saturation", a.saturation},
              {"hue", a.hue},
              {"grayscale_prob", a.grayscale_prob},
              {"cutout_size", a.cutout_size},
              {"gaussian_sigma", a.gaussian_sigma},
              {"gaussian_ksize", a.gaussian_ksize},
              {"cutout", a.use_cutout},
              {"gaussian", a.use_gaussian}};
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail(Err::bad_config, std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  get_if(j, "seed", c.seed);
  get_if(j, "out", c.out_dir);
  if (j.contains("pipeline")) c.pipeline = pipeline_from(j.at("pipeline").get<std::string>());
  get_if(j, "epochs", c.epochs);
  get_if(j, "batch_size", c.batch_size);
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    get_if(d, "type", c.dataset.type);
    get_if(d, "k", c.dataset.synth.classes);
    get_if(d, "n_per_class", c.dataset.synth.n_per_class);
    get_if(d, "image_size", c.dataset.synth.image_size);
    get_if(d, "test_per_class", c.dataset.synth.test_per_class);
    get_if(d, "difficulty", c.dataset.synth.difficulty);
    get_if(d, "train_files", c.dataset.train_files);
    get_if(d, "test_file", c.dataset.test_file);
    get_if(d, "channels", c.dataset.channels);
    get_if(d, "height", c.dataset.height);
    get_if(d, "width", c.dataset.width);
    get_if(d, "classes", c.dataset.classes);
    get_if(d, "limit_train", c.dataset.limit_train);
  }
  if (j.contains("perturbation")) {
    const json& p = j.at("perturbation");
    get_if(p, "family", c.perturb.family);
    get_if(p, "mode", c.perturb.mode);
    get_if(p, "epsilon", c.perturb.epsilon);
    get_if(p, "ratio", c.perturb.ratio);
    get_if(p, "file", c.perturb.file);
    if (p.contains("generator")) {
      const json& g = p.at("generator");
      get_if(g, "model_steps_per_round", c.perturb.gen.model_steps_per_round);
      get_if(g, "pert_steps", c.perturb.gen.pert_steps);
      get_if(g, "pert_step_size", c.perturb.gen.pert_step_size);
      get_if(g, "adv_steps", c.perturb.gen.adv_steps);
      get_if(g, "adv_step_size", c.perturb.gen.adv_step_size);
      get_if(g, "stop_error", c.perturb.gen.stop_error);
      get_if(g, "max_rounds", c.perturb.gen.max_rounds);
      get_if(g, "batch_size", c.perturb.gen.batch_size);
      get_if(g, "with_cg", c.perturb.gen.with_cg);
    }
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    get_if(m, "conv1", c.model.conv1);
    get_if(m, "conv2", c.model.conv2);
    get_if(m, "conv3", c.model.conv3);
    get_if(m, "fc", c.model.fc);
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    get_if(o, "momentum", c.momentum);
    get_if(o, "weight_decay", c.weight_decay);
    get_if(o, "lr", c.lr);
  }
  if (j.contains("st")) {
    const json& s = j.at("st");
    get_if(s, "gamma", c.st.gamma);
    get_if(s, "beta", c.st.beta);
    get_if(s, "validation_per_class", c.st.validation_per_class);
  }
  if (j.contains("finetune")) {
    const json& f = j.at("finetune");
    get_if(f, "epochs", c.finetune_epochs);
    get_if(f, "lr", c.finetune_lr);
  }
  if (j.contains("augment")) parse_aug(j.at("augment"), c.aug);
  if (j.contains("at")) {
    const json& a = j.at("at");
    get_if(a, "epsilon", c.at_epsilon);
    get_if(a, "step_size", c.at_step);
    get_if(a, "steps", c.at_steps);
  }
  get_if(j, "save_checkpoints", c.save_checkpoints);
  require(c.epochs >= 0, Err::bad_config, "epochs must be nonnegative");
  require(c.batch_size >= 1, Err::bad_config, "batch_size must be positive");
  require(c.st.beta > 0, Err::bad_config, "beta must be positive");
  require(c.st.gamma > 0, Err::bad_config, "gamma must be positive");
  return c;
}

ExperimentConfig config_from_json_file(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Err::io_failure, "cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out"] = c.out_dir;
  j["pipeline"] = pipeline_name(c.pipeline);
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["dataset"] = json{{"type", c.dataset.type},
                      {"k", c.dataset.synth.classes},
                      {"n_per_class", c.dataset.synth.n_per_class},
                      {"image_size", c.dataset.synth.image_size},
                      {"test_per_class", c.dataset.synth.test_per_class},
                      {"difficulty", c.dataset.synth.difficulty},
                      {"train_files", c.dataset.train_files},
                      {"test_file", c.dataset.test_file},
                      {"channels", c.dataset.channels},
                      {"height", c.dataset.height},
                      {"width", c.dataset.width},
                      {"classes", c.dataset.classes},
                      {"limit_train", c.dataset.limit_train}};
  j["perturbation"] = json{{"family", c.perturb.family},
                           {"mode", c.perturb.mode},
                           {"epsilon", c.perturb.epsilon},
                           {"ratio", c.perturb.ratio},
                           {"file", c.perturb.file},
                           {"generator", json{{"model_steps_per_round", c.perturb.gen.model_steps_per_round},
                                              {"pert_steps", c.perturb.gen.pert_steps},
                                              {"pert_step_size", c.perturb.gen.pert_step_size},
                                              {"adv_steps", c.perturb.gen.adv_steps},
                                              {"adv_step_size", c.perturb.gen.adv_step_size},
                                              {"stop_error", c.perturb.gen.stop_error},
                                              {"max_rounds", c.perturb.gen.max_rounds},
                                              {"batch_size", c.perturb.gen.batch_size},
                                              {"with_cg", c.perturb.gen.with_cg}}}};
  j["model"] = json{{"conv1", c.model.conv1}, {"conv2", c.model.conv2}, {"conv3", c.model.conv3}, {"fc", c.model.fc}};
  j["optimizer"] = json{{"momentum", c.momentum}, {"weight_decay", c.weight_decay}, {"lr", c.lr}};
  j["st"] = json{{"gamma", c.st.gamma}, {"beta", c.st.beta}, {"validation_per_class", c.st.validation_per_class}};
  j["finetune"] = json{{"epochs", c.finetune_epochs}, {"lr", c.finetune_lr}};
  j["augment"] = aug_to_json(c.aug);
  j["at"] = json{{"epsilon", c.at_epsilon}, {"step_size", c.at_step}, {"steps", c.at_steps}};
  j["save_checkpoints"] = c.save_checkpoints;
  return j.dump(2);
}

uint64_t config_hash(const ExperimentConfig& cfg) {
  ExperimentConfig canon = cfg;
  canon.out_dir.clear();  // the hash identifies the run, not where it lands
  const std::string s = config_to_json(canon);
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

LoadedData load_data(const ExperimentConfig& cfg) {
  LoadedData d;
  if (cfg.dataset.type == "synthetic") {
    auto pair = synth_shortcut_dataset(cfg.dataset.synth, cfg.seed);
    d.clean_train = std::move(pair.first);
    d.test = std::move(pair.second);
  } else if (cfg.dataset.type == "cifar10") {
    require(!cfg.dataset.train_files.empty(), Err::bad_config, "cifar10 dataset needs train_files");
    d.clean_train = load_cifar10_binary(cfg.dataset.train_files);
    require(!cfg.dataset.test_file.empty(), Err::bad_config, "cifar10 dataset needs test_file");
    d.test = load_cifar10_binary(cfg.dataset.test_file);
  } else if (cfg.dataset.type == "records") {
    require(cfg.dataset.train_files.size() == 1, Err::bad_config, "records dataset needs one train file");
    d.clean_train = load_records(cfg.dataset.train_files[0], cfg.dataset.channels, cfg.dataset.height,
                                 cfg.dataset.width, cfg.dataset.classes);
    d.test = load_records(cfg.dataset.test_file, cfg.dataset.channels, cfg.dataset.height, cfg.dataset.width,
                          cfg.dataset.classes);
  } else {
    fail(Err::bad_config, "unknown dataset type: " + cfg.dataset.type);
  }
  if (cfg.dataset.limit_train > 0 && cfg.dataset.limit_train < d.clean_train.size()) {
    const int n = cfg.dataset.limit_train;
    ImageDataset cut = make_dataset(n, d.clean_train.channels(), d.clean_train.height(), d.clean_train.width(),
                                    d.clean_train.class_count, "train");
    std::copy(d.clean_train.images.data(), d.clean_train.images.data() + long(n) * d.clean_train.image_size(),
              cut.images.data());
    cut.labels.assign(d.clean_train.labels.begin(), d.clean_train.labels.begin() + n);
    d.clean_train = std::move(cut);
  }
  d.test.split = "test";
  if (!cfg.perturb.file.empty() && cfg.perturb.ratio > 0) {
    PerturbationSet pset = load_perturbations(cfg.perturb.file);
    d.train = apply_perturbations(d.clean_train, pset, cfg.perturb.ratio, cfg.seed);
  } else {
    d.train = d.clean_train;
  }
  return d;
}

namespace {

double pipeline_lr(const ExperimentConfig& cfg) {
  if (cfg.lr > 0) return cfg.lr;
  return cfg.pipeline == Pipeline::st_cg || cfg.pipeline == Pipeline::st_full ? 0.2 : 0.1;
}

AugConfig pipeline_aug(const ExperimentConfig& cfg, bool cg) {
  AugConfig a = cfg.aug;
  a.crop_flip = true;
  a.cg = cg;
  return a;
}

int resolved_finetune_epochs(const ExperimentConfig& cfg) {
  return cfg.finetune_epochs > 0 ? cfg.finetune_epochs : std::max(1, int(std::lround(0.3 * cfg.epochs)));
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  LoadedData data = load_data(cfg);
  const int k = data.train.class_count;

  DesknetSpec spec = cfg.model;
  spec.in_channels = data.train.channels();
  spec.height = data.train.height();
  spec.width = data.train.width();
  spec.classes = k;
  Rng init_rng = derive_rng(cfg.seed, 0x1417);
  Network<float> net = make_desknet<float>(spec, init_rng);
  OptimizerState<float> opt = make_optimizer(net, float(cfg.momentum), float(cfg.weight_decay));

  TrainOptions opts;
  opts.batch_size = cfg.batch_size;
  opts.seed = cfg.seed;

  const bool use_cg = cfg.pipeline == Pipeline::nt_cg || cfg.pipeline == Pipeline::st_cg ||
                      cfg.pipeline == Pipeline::st_full;
  opts.aug = pipeline_aug(cfg, use_cg);
  if (cfg.pipeline == Pipeline::at) {
    opts.adversarial = true;
    opts.adv_epsilon = cfg.at_epsilon;
    opts.adv_step = cfg.at_step;
    opts.adv_steps = cfg.at_steps;
  }

  RunHooks hooks;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    if (cfg.save_checkpoints == "all") {
      hooks.after_epoch = [&](int e, const Network<float>& m) {
        save_checkpoint(cfg.out_dir + "/epoch_" + std::to_string(e) + ".stckpt", snapshot(m, opt, e));
      };
    }
  }

  RunReport rep;
  TrainLog log;
  const bool staged = cfg.pipeline == Pipeline::st || cfg.pipeline == Pipeline::st_cg ||
                      cfg.pipeline == Pipeline::st_full;
  if (cfg.epochs > 0) {
    if (staged) {
      STConfig st_cfg = cfg.st;
      st_cfg.epochs = cfg.epochs;
      st_cfg.base_lr = pipeline_lr(cfg);
      log = run_st(net, opt, data.train, &data.test, st_cfg, opts, hooks);
    } else {
      LrSchedule sched{pipeline_lr(cfg), cfg.epochs};
      log = run_natural(net, opt, data.train, &data.test, sched, opts, hooks);
    }
  }

  if (cfg.pipeline == Pipeline::st_full && cfg.epochs > 0) {
    // step 2: natural fine-tune with CG from the staged result
    const int ft = resolved_finetune_epochs(cfg);
    TrainOptions ft_opts = opts;
    ft_opts.aug = pipeline_aug(cfg, true);
    ft_opts.seed = detail::mix64(cfg.seed ^ 0xf17e);  // distinct stream from step 1
    OptimizerState<float> ft_opt = make_optimizer(net, float(cfg.momentum), float(cfg.weight_decay));
    LrSchedule sched{cfg.finetune_lr, ft};
    TrainLog ft_log = run_natural(net, ft_opt, data.train, &data.test, sched, ft_opts, hooks);
    for (auto& r : ft_log.records) {
      r.epoch += cfg.epochs;
      log.records.push_back(r);
    }
  }

  rep.log = std::move(log);
  rep.epochs = int(rep.log.records.size());
  for (const auto& r : rep.log.records) rep.rollbacks += r.rollback ? 1 : 0;
  if (!rep.log.records.empty()) {
    rep.final_test_acc = rep.log.records.back().test_acc;
    rep.final_train_acc = rep.log.records.back().train_acc;
  }
  rep.config_hash = config_hash(cfg);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!cfg.out_dir.empty()) {
    std::ofstream cf(cfg.out_dir + "/config.json");
    cf << config_to_json(cfg) << "\n";
    rep.log_csv = cfg.out_dir + "/log.csv";
    rep.log.write_csv(rep.log_csv);
    if (cfg.save_checkpoints == "final" || cfg.save_checkpoints == "all") {
      rep.checkpoint = cfg.out_dir + "/final.stckpt";
      save_checkpoint(rep.checkpoint, snapshot(net, opt, rep.epochs));
    }
    json rj{{"final_test_acc", rep.final_test_acc}, {"final_train_acc", rep.final_train_acc},
            {"epochs", rep.epochs},                 {"rollbacks", rep.rollbacks},
            {"config_hash", rep.config_hash},       {"wall_seconds", rep.wall_seconds},
            {"log_csv", rep.log_csv},               {"checkpoint", rep.checkpoint}};
    std::ofstream rf(cfg.out_dir + "/report.json");
    rf << rj.dump(2) << "\n";
  }
  return rep;
}

std::string cmd_generate(const ExperimentConfig& cfg, const std::string& out_file) {
  LoadedData data = load_data(cfg);
  const ImageDataset& ds = data.clean_train;
  const PertFamily family = pert_family_from(cfg.perturb.family);
  const PertMode mode = pert_mode_from(cfg.perturb.mode);
  GenConfig gen = cfg.perturb.gen;
  gen.seed = cfg.seed;
  gen.cg = cfg.aug;

  PerturbationSet pset;
  bool converged = true;
  if (family == PertFamily::sp) {
    pset = gen_sp(ds.channels(), ds.height(), ds.width(), ds.class_count, cfg.perturb.epsilon, cfg.seed);
  } else if (family == PertFamily::ops) {
    pset = gen_ops(ds.channels(), ds.height(), ds.width(), ds.class_count, cfg.seed);
  } else {
    DesknetSpec spec = cfg.model;
    spec.in_channels = ds.channels();
    spec.height = ds.height();
    spec.width = ds.width();
    spec.classes = ds.class_count;
    Rng init_rng = derive_rng(cfg.seed, 0x6e0);
    Network<float> surrogate = make_desknet<float>(spec, init_rng);
    GenResult res = family == PertFamily::em
                        ? gen_em(ds, surrogate, cfg.perturb.epsilon, mode, gen)
                        : gen_rem(ds, surrogate, cfg.perturb.epsilon, cfg.at_epsilon, gen);
    pset = std::move(res.pset);
    converged = res.converged;
  }
  save_perturbations(out_file, pset);

  std::ostringstream audit;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.8f", double(pset.max_abs()));
  audit << "wrote " << out_file << ": family=" << pert_family_name(pset.family)
        << " mode=" << pert_mode_name(pset.mode) << " deltas=" << pset.deltas.size() << " max|delta|=" << buf;
  if (family == PertFamily::ops) {
    long nonzero_positions = 0;
    for (const auto& d : pset.deltas) {
      const long hw = long(d.dim(1)) * d.dim(2);
      for (long p = 0; p < hw; ++p) {
        bool any = false;
        for (int c = 0; c < d.dim(0); ++c) any = any || d[c * hw + p] != 0.0f;
        nonzero_positions += any ? 1 : 0;
      }
    }
    audit << " pixels_per_class=" << double(nonzero_positions) / double(pset.deltas.size());
  }
  if (!converged) audit << " warning=non-convergence";
  return audit.str();
}

std::vector<SweepCell> cmd_sweep(const ExperimentConfig& cfg, const std::string& axis,
                                 const std::vector<double>& values, const std::string& out_dir) {
  require(axis == "ratio" || axis == "gamma" || axis == "beta", Err::bad_config,
          "sweep axis must be ratio, gamma, or beta");
  require(!values.empty(), Err::bad_config, "sweep needs at least one value");
  std::vector<SweepCell> cells;
  fs::create_directories(out_dir);
  for (size_t v = 0; v < values.size(); ++v) {
    SweepCell cell;
    cell.value = values[v];
    ExperimentConfig run = cfg;
    run.out_dir = out_dir + "/" + axis + "_" + std::to_string(v);
    if (axis == "ratio")
      run.perturb.ratio = values[v];
    else if (axis == "gamma")
      run.st.gamma = values[v];
    else
      run.st.beta = values[v];
    try {
      cell.report = run_experiment(run);
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
    cells.push_back(std::move(cell));
  }
  std::ofstream f(out_dir + "/sweep.csv");
  f << axis << ",status,final_test_acc,final_train_acc,rollbacks,max_tau,error\n";
  for (const auto& c : cells) {
    int max_tau = 0;
    for (const auto& r : c.report.log.records) max_tau = std::max(max_tau, r.tau);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", c.value);
    f << buf << "," << (c.ok ? "ok" : "failed") << "," << c.report.final_test_acc << ","
      << c.report.final_train_acc << "," << c.report.rollbacks << "," << max_tau << "," << c.error << "\n";
  }
  return cells;
}

TransplantReport cmd_transplant(const ExperimentConfig& cfg, const std::string& mode,
                                const std::string& reference_checkpoint, int frozen_layers) {
  require(mode == "shallow" || mode == "deep", Err::bad_config, "transplant mode must be shallow or deep");
  require(fs::exists(reference_checkpoint), Err::missing_reference_checkpoint,
          "reference checkpoint not found: " + reference_checkpoint);
  LoadedData data = load_data(cfg);

  DesknetSpec spec = cfg.model;
  spec.in_channels = data.train.channels();
  spec.height = data.train.height();
  spec.width = data.train.width();
  spec.classes = data.train.class_count;
  Rng init_rng = derive_rng(cfg.seed, 0x7a9);
  Network<float> net = make_desknet<float>(spec, init_rng);
  Rng ref_rng = derive_rng(cfg.seed, 0x7aa);
  Network<float> reference = make_desknet<float>(spec, ref_rng);
  OptimizerState<float> ref_opt = make_optimizer(reference);
  restore(reference, ref_opt, load_checkpoint(reference_checkpoint));

  const int l = net.depth();
  require(frozen_layers <= l, Err::range_out_of_bounds, "frozen layer count exceeds depth");
  if (mode == "shallow")
    transplant(net, reference, 0, frozen_layers);
  else
    transplant(net, reference, l - frozen_layers, frozen_layers);

  OptimizerState<float> opt = make_optimizer(net, float(cfg.momentum), float(cfg.weight_decay));
  TrainOptions opts;
  opts.batch_size = cfg.batch_size;
  opts.seed = cfg.seed;
  opts.aug = cfg.aug;
  opts.aug.crop_flip = true;
  opts.aug.cg = false;
  LrSchedule sched{cfg.lr > 0 ? cfg.lr : 0.1, cfg.epochs};
  TrainLog log = run_natural(net, opt, data.train, &data.test, sched, opts);

  TransplantReport rep;
  rep.train_acc = log.records.empty() ? 0.0 : log.records.back().train_acc;
  rep.test_acc = log.records.empty() ? 0.0 : log.records.back().test_acc;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    log.write_csv(cfg.out_dir + "/transplant_" + mode + ".csv");
  }
  return rep;
}

void cmd_report(const std::string& run_dir, const std::vector<int>& dump_epochs, const std::string& out_csv) {
  const std::string log_path = run_dir + "/log.csv";
  require(fs::exists(log_path), Err::missing_logs, "no log.csv under " + run_dir);
  TrainLog log = TrainLog::read_csv(log_path);
  require(!log.records.empty(), Err::missing_logs, "log.csv has no records");

  const std::string out = out_csv.empty() ? run_dir + "/summary.csv" : out_csv;
  {
    std::ofstream f(out);
    require(f.good(), Err::io_failure, "cannot open " + out + " for writing");
    f << "epoch,train_acc,test_acc,acm,tau,rollback,gmv_shallow,gmv_deep\n";
    for (const auto& r : log.records) {
      f << r.epoch << "," << r.train_acc << "," << r.test_acc << "," << r.acm << "," << r.tau << ","
        << (r.rollback ? 1 : 0) << "," << (r.gmv.empty() ? 0.0 : r.gmv.front()) << ","
        << (r.gmv.empty() ? 0.0 : r.gmv.back()) << "\n";
    }
  }

  if (dump_epochs.empty()) return;
  const std::string cfg_path = run_dir + "/config.json";
  require(fs::exists(cfg_path), Err::missing_logs, "no config.json under " + run_dir + " (needed for dumps)");
  ExperimentConfig cfg = config_from_json_file(cfg_path);
  LoadedData data = load_data(cfg);
  ImageDataset subset = select_validation_subset(data.train, cfg.st.validation_per_class, cfg.seed);

  DesknetSpec spec = cfg.model;
  spec.in_channels = data.train.channels();
  spec.height = data.train.height();
  spec.width = data.train.width();
  spec.classes = data.train.class_count;
  for (int e : dump_epochs) {
    const std::string ck = run_dir + "/epoch_" + std::to_string(e) + ".stckpt";
    require(fs::exists(ck), Err::missing_logs, "no checkpoint for epoch " + std::to_string(e) +
                                                   " (rerun with save_checkpoints=all)");
    Rng init_rng = derive_rng(cfg.seed, 0x1417);
    Network<float> net = make_desknet<float>(spec, init_rng);
    OptimizerState<float> opt = make_optimizer(net);
    restore(net, opt, load_checkpoint(ck));
    save_activation_dump(run_dir + "/activations_epoch_" + std::to_string(e) + ".stact",
                         collect_penultimate(net, subset));
  }
}

double cmd_calibrate_gamma(const ExperimentConfig& cfg) {
  ExperimentConfig clean = cfg;
  clean.pipeline = Pipeline::nt;
  clean.perturb.file.clear();  // clean data by definition
  clean.out_dir.clear();
  clean.save_checkpoints = "none";
  RunReport rep = run_experiment(clean);
  double peak = 0.0;
  for (const auto& r : rep.log.records) peak = std::max(peak, r.acm);
  require(peak > 0.0, Err::bad_config, "calibration run produced no ACM measurements");
  return 1.5 * peak;
}

}  // namespace st
