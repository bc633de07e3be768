#pragma once

#include <map>
#include <string>
#include <string_view>

#include "tribranch/trainer.hpp"

namespace tribranch {

/// Flat key -> value document. INI sections prefix their keys, so
///
///   [backbone]
///   depth = 4
///
/// becomes "backbone.depth" = "4". '#' and ';' start comments.
using KeyValues = std::map<std::string, std::string>;

// ConfigError("line N") on syntax errors or duplicate keys.
KeyValues parse_ini(std::string_view text);

/// Everything a pretraining run needs. Unset keys keep the TrainConfig
/// defaults (the reference training recipe); steps per epoch are derived
/// from the training set at run time.
struct RunConfig {
  TrainConfig train;
  std::string data_path;         // data.path, required by pretrain
  std::string out_dir = "run";   // out.dir
  int checkpoint_every = 0;      // out.every, epochs between snapshots; 0 = final only
  int precision = 32;            // run.precision, 32 or 64
};

/// Applies every key to a default RunConfig. Unknown keys, unparsable values
/// and failed validation all raise ConfigError naming the key.
RunConfig run_config_from(const KeyValues& kv);

RunConfig load_run_config(const std::string& path);  // IoError when unreadable

// Recognised keys, sorted, for help output and tests.
std::vector<std::string> known_config_keys();

/// Grid implied by a config: width lattice from the backbone head geometry,
/// depth_max from the elastic stage, plus the grid.* keys.
ElasticGrid grid_for(const BackboneSpec& spec, int width_steps, int depth_steps,
                     const std::vector<std::pair<int, int>>& depth_ranges);

// TRIBRANCH_DETERMINISTIC=1 forces 64-bit runs regardless of run.precision.
int effective_precision(int configured);

}  // namespace tribranch
