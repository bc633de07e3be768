#include <CLI11.hpp>
#include <iostream>

#include "tribranch/commands.hpp"
#include "tribranch/errors.hpp"

namespace {

tribranch::KeyValues parse_overrides(const std::vector<std::string>& sets) {
  tribranch::KeyValues kv;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw tribranch::ConfigError(s, "--set expects key=value");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return kv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tri-branch elastic self-distillation: pretrain, extract and evaluate nested sub-networks"};
  app.require_subcommand(1);

  std::string config, ckpt, data, out, csv, depth, mode = "knn";
  std::vector<std::string> sets;
  std::vector<double> levels;
  int width = 0;
  std::optional<int> eval_width;
  std::optional<std::string> eval_depth;
  bool table = false;
  int k = 20;
  std::uint64_t seed = 0;
  std::size_t n_train = 1280, n_test = 600;
  int size = 32;

  auto* pretrain = app.add_subcommand("pretrain", "train teacher and students from a run config");
  pretrain->add_option("--config", config, "INI run config")->required();
  pretrain->add_option("--set", sets, "override a config key (key=value), repeatable");

  auto* extract = app.add_subcommand("extract", "write a standalone alpha-baked sub-network checkpoint");
  extract->add_option("--ckpt", ckpt, "intact checkpoint")->required();
  extract->add_option("--width", width, "sub-network width")->required();
  extract->add_option("--depth", depth, "sub-network depth, e.g. 12 or 8x36")->required();
  extract->add_option("--out", out, "output checkpoint")->required();

  auto* enumerate = app.add_subcommand("enumerate", "list the lattice of a checkpoint or run config");
  enumerate->add_option("--ckpt,--config", ckpt, "checkpoint or INI run config")->required();

  auto* sweep = app.add_subcommand("sweep", "k-NN accuracy of every sub-network");
  sweep->add_option("--ckpt", ckpt, "teacher checkpoint")->required();
  sweep->add_option("--data", data, "dataset file")->required();
  sweep->add_option("--csv", csv, "CSV output (stdout when omitted)");
  sweep->add_flag("--table", table, "also print the depth x width table");
  sweep->add_option("--k", k, "neighbours");

  auto* eval = app.add_subcommand("eval", "evaluate one sub-network or run a robustness probe");
  eval->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval->add_option("--data", data, "dataset file")->required();
  eval->add_option("--mode", mode, "knn | probe | occlusion | shuffle");
  eval->add_option("--width", eval_width, "sub-network width (knn / probe)");
  eval->add_option("--depth", eval_depth, "sub-network depth (knn / probe)");
  eval->add_option("--levels", levels, "occlusion fractions or shuffle grid sizes")->delimiter(',');
  eval->add_option("--seed", seed, "corruption seed");
  eval->add_option("--k", k, "neighbours");

  auto* make_data = app.add_subcommand("make-data", "generate the synthetic shapes dataset");
  make_data->add_option("--out", out, "output file")->required();
  make_data->add_option("--train", n_train, "training images");
  make_data->add_option("--test", n_test, "test images");
  make_data->add_option("--size", size, "image side in pixels");
  make_data->add_option("--seed", seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : tribranch::kExitConfig;
  }

  try {
    if (*pretrain) {
      const auto res = tribranch::cmd_pretrain(config, parse_overrides(sets), &std::cerr);
      std::cout << "steps " << res.steps << "\nteacher " << res.teacher_path << "\nstudent " << res.student_path
                << "\nmetrics " << res.metrics_path << '\n';
    } else if (*extract) {
      tribranch::cmd_extract(ckpt, width, depth, out);
    } else if (*enumerate) {
      tribranch::cmd_enumerate(ckpt, std::cout);
    } else if (*sweep) {
      tribranch::KnnConfig knn;
      knn.k = k;
      tribranch::cmd_sweep(ckpt, data, csv, std::cout, table ? &std::cout : nullptr, knn);
    } else if (*eval) {
      tribranch::EvalOptions opts;
      opts.mode = mode;
      opts.width = eval_width;
      opts.depth = eval_depth;
      opts.levels = levels;
      opts.seed = seed;
      opts.knn.k = k;
      tribranch::cmd_eval(ckpt, data, opts, std::cout);
    } else if (*make_data) {
      tribranch::cmd_make_data(out, n_train, n_test, size, seed);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return tribranch::exit_code_for(e);
  }
  return tribranch::kExitOk;
}
