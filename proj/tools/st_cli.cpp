#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "st/harness.hpp"

namespace {

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell == "inf" || cell == "Inf")
      out.push_back(std::numeric_limits<double>::infinity());
    else
      out.push_back(std::stod(cell));
  }
  return out;
}

std::vector<int> parse_ints(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stoi(cell));
  return out;
}

struct Common {
  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
};

st::ExperimentConfig resolve(const Common& c) {
  st::ExperimentConfig cfg =
      c.config_path.empty() ? st::ExperimentConfig{} : st::config_from_json_file(c.config_path);
  if (c.seed_set) cfg.seed = c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  return cfg;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "experiment config (JSON)");
  app->add_option("--seed", c.seed, "override the config seed")->each([&](const std::string&) { c.seed_set = true; });
  app->add_option("--out", c.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"staged-training experiment harness"};
  app.require_subcommand(1);

  Common c_gen, c_train, c_sweep, c_trans, c_cal;

  auto* gen = app.add_subcommand("generate", "generate a perturbation file");
  std::string gen_file;
  add_common(gen, c_gen);
  gen->add_option("--file", gen_file, "output STPERT1 path (defaults to <out>/perturbation.stpert)");

  auto* train = app.add_subcommand("train", "run one training pipeline");
  add_common(train, c_train);

  auto* sweep = app.add_subcommand("sweep", "run a hyperparameter or ratio sweep");
  add_common(sweep, c_sweep);
  std::string axis, values_csv;
  sweep->add_option("--axis", axis, "ratio | gamma | beta")->required();
  sweep->add_option("--values", values_csv, "comma-separated values (inf allowed for gamma)")->required();

  auto* trans = app.add_subcommand("transplant", "frozen shallow/deep transplant experiment");
  add_common(trans, c_trans);
  std::string mode = "shallow", reference;
  int frozen = 2;
  trans->add_option("--mode", mode, "shallow | deep")->required();
  trans->add_option("--reference", reference, "clean-trained STCKPT1 checkpoint")->required();
  trans->add_option("--frozen-layers", frozen, "parameterized layers to transplant (default 2)");

  auto* report = app.add_subcommand("report", "summarize a finished run directory");
  std::string run_dir, dump_csv, report_out;
  report->add_option("--run", run_dir, "run directory with log.csv")->required();
  report->add_option("--dump-epochs", dump_csv, "epochs to dump STACT1 activations for");
  report->add_option("--out", report_out, "summary CSV path (defaults to <run>/summary.csv)");

  auto* cal = app.add_subcommand("calibrate-gamma", "calibrate gamma from a clean NT run");
  add_common(cal, c_cal);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      st::ExperimentConfig cfg = resolve(c_gen);
      if (gen_file.empty()) {
        st::require(!cfg.out_dir.empty(), st::Err::bad_config, "generate needs --file or --out");
        gen_file = cfg.out_dir + "/perturbation.stpert";
      }
      std::cout << st::cmd_generate(cfg, gen_file) << "\n";
    } else if (train->parsed()) {
      st::ExperimentConfig cfg = resolve(c_train);
      st::RunReport rep = st::run_experiment(cfg);
      std::printf("pipeline=%s epochs=%d rollbacks=%d final_train_acc=%.2f final_test_acc=%.2f\n",
                  st::pipeline_name(cfg.pipeline), rep.epochs, rep.rollbacks, rep.final_train_acc,
                  rep.final_test_acc);
    } else if (sweep->parsed()) {
      st::ExperimentConfig cfg = resolve(c_sweep);
      st::require(!cfg.out_dir.empty(), st::Err::bad_config, "sweep needs --out");
      auto cells = st::cmd_sweep(cfg, axis, parse_values(values_csv), cfg.out_dir);
      for (const auto& cell : cells)
        std::printf("%s=%.9g status=%s final_test_acc=%.2f\n", axis.c_str(), cell.value,
                    cell.ok ? "ok" : "failed", cell.report.final_test_acc);
      std::cout << "table: " << cfg.out_dir << "/sweep.csv\n";
    } else if (trans->parsed()) {
      st::ExperimentConfig cfg = resolve(c_trans);
      st::TransplantReport rep = st::cmd_transplant(cfg, mode, reference, frozen);
      std::printf("mode=%s train_acc=%.2f test_acc=%.2f\n", mode.c_str(), rep.train_acc, rep.test_acc);
    } else if (report->parsed()) {
      st::cmd_report(run_dir, dump_csv.empty() ? std::vector<int>{} : parse_ints(dump_csv), report_out);
      std::cout << "summary written\n";
    } else if (cal->parsed()) {
      st::ExperimentConfig cfg = resolve(c_cal);
      const double gamma = st::cmd_calibrate_gamma(cfg);
      std::printf("gamma=%.9g\n", gamma);
      if (!cfg.out_dir.empty()) {
        std::ofstream f(cfg.out_dir + "/gamma.json");
        f << "{\n  \"gamma\": " << gamma << "\n}\n";
      }
    }
  } catch (const st::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
