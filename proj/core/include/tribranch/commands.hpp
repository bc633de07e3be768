#pragma once

#include <cstdint>
#include <exception>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tribranch/config.hpp"
#include "tribranch/evalkit.hpp"

namespace tribranch {

/// Command implementations behind the `tribranch` executable. Each throws on
/// failure; exit_code_for maps the exception to the process exit status.
enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitConfig = 2 };

// ConfigError and GridError (bad user input) -> 2, anything else -> 1.
int exit_code_for(const std::exception& e);

struct PretrainResult {
  std::string teacher_path;
  std::string student_path;
  std::string metrics_path;
  std::int64_t steps = 0;
  double final_loss = 0;
};

/// Loads the run config (then applies `overrides`, which win over file
/// keys), trains, and writes out.dir/{teacher,student}.ckpt plus a JSON-lines
/// metric log out.dir/metrics.jsonl with one row per step. With out.every = E
/// the teacher is also snapshotted as teacher_eN.ckpt every E epochs.
PretrainResult cmd_pretrain(const std::string& config_path, const KeyValues& overrides = {},
                            std::ostream* progress = nullptr);

// "12" -> {12}, "8x36" -> {8, 36}; ConfigError("depth") when malformed.
std::vector<int> parse_depth(const std::string& text);

/// Writes the alpha-baked backbone of lattice point (width, depth) as a
/// standalone checkpoint. GridError lists the valid values for off-lattice
/// requests; ParameterError when the input is already an extracted file.
void cmd_extract(const std::string& ckpt, int width, const std::string& depth, const std::string& out);

// CSV `i,j,width,depth` in canonical order, from a checkpoint or a run config.
std::size_t cmd_enumerate(const std::string& ckpt_or_config, std::ostream& out);

/// k-NN sweep of every lattice point of a checkpoint on a dataset file.
/// Writes the CSV to `csv_path` (or to `out` when empty) and the pivoted
/// table to `table` when given.
SweepReport cmd_sweep(const std::string& ckpt, const std::string& data, const std::string& csv_path,
                      std::ostream& out, std::ostream* table = nullptr, const KnnConfig& knn = {});

struct EvalOptions {
  std::string mode = "knn";  // knn | probe | occlusion | shuffle
  std::optional<int> width;
  std::optional<std::string> depth;
  std::vector<double> levels;  // robustness levels; defaults per mode when empty
  std::uint64_t seed = 0;
  KnnConfig knn;
  ProbeConfig probe;
};

// CSV `mode,level,value` (level empty for knn / probe).
std::vector<double> cmd_eval(const std::string& ckpt, const std::string& data, const EvalOptions& opts,
                             std::ostream& out);

// Synthetic three-class shapes dataset written in the dataset container.
void cmd_make_data(const std::string& out, std::size_t n_train, std::size_t n_test, int size, std::uint64_t seed);

}  // namespace tribranch
