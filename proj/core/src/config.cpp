#include "tribranch/config.hpp"

#include <algorithm>
#include <climits>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "tribranch/persist.hpp"

namespace tribranch {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key, "expected an integer, got '" + v + "'");
}

int to_i32(const std::string& key, const std::string& v) {
  const long long x = to_int(key, v);
  if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(key, "integer out of range: " + v);
  return static_cast<int>(x);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.front() == '-') throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key, "expected a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  for (const auto& item : split(v, ',')) out.push_back(to_i32(key, item));
  return out;
}

// "4-8, 6-36" -> {{4, 8}, {6, 36}}
std::vector<std::pair<int, int>> to_ranges(const std::string& key, const std::string& v) {
  std::vector<std::pair<int, int>> out;
  for (const auto& item : split(v, ',')) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) throw ConfigError(key, "expected lo-hi ranges, got '" + item + "'");
    const int lo = to_i32(key, trim(item.substr(0, dash))), hi = to_i32(key, trim(item.substr(dash + 1)));
    if (lo < 1 || lo > hi) throw ConfigError(key, "range '" + item + "' must satisfy 1 <= lo <= hi");
    out.emplace_back(lo, hi);
  }
  return out;
}

struct GridKeys {
  int width_steps = 0;
  int depth_steps = 0;
  std::vector<std::pair<int, int>> depth_ranges;
};

using Setter = std::function<void(RunConfig&, GridKeys&, const std::string& key, const std::string& value)>;

template <typename F>
Setter int_field(F field) {
  return [field](RunConfig& c, GridKeys&, const std::string& k, const std::string& v) { field(c) = to_i32(k, v); };
}
template <typename F>
Setter double_field(F field) {
  return [field](RunConfig& c, GridKeys&, const std::string& k, const std::string& v) { field(c) = to_double(k, v); };
}

#define TB_INT(path) int_field([](RunConfig& c) -> int& { return c.path; })
#define TB_DBL(path) double_field([](RunConfig& c) -> double& { return c.path; })

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"backbone.family",
       [](RunConfig& c, GridKeys&, const std::string& k, const std::string& v) {
         try {
           c.train.backbone.family = family_from_string(v);
         } catch (const ParameterError&) {
           throw ConfigError(k, "expected vit, swin or resnet, got '" + v + "'");
         }
       }},
      {"backbone.image_size", TB_INT(train.backbone.image_size)},
      {"backbone.patch_size", TB_INT(train.backbone.patch_size)},
      {"backbone.in_channels", TB_INT(train.backbone.in_channels)},
      {"backbone.head_dim", TB_INT(train.backbone.head_dim)},
      {"backbone.num_heads", TB_INT(train.backbone.num_heads)},
      {"backbone.depth", TB_INT(train.backbone.depth)},
      {"backbone.mlp_ratio", TB_INT(train.backbone.mlp_ratio)},
      {"backbone.stage_depths",
       [](RunConfig& c, GridKeys&, const std::string& k, const std::string& v) {
         c.train.backbone.stage_depths = to_int_list(k, v);
       }},
      {"backbone.window", TB_INT(train.backbone.window)},
      {"backbone.drop_path", TB_DBL(train.backbone.drop_path)},
      {"backbone.ln_eps", TB_DBL(train.backbone.ln_eps)},
      {"backbone.stem_width", TB_INT(train.backbone.stem_width)},
      {"backbone.out_width", TB_INT(train.backbone.out_width)},

      {"grid.width_steps",
       [](RunConfig&, GridKeys& g, const std::string& k, const std::string& v) { g.width_steps = to_i32(k, v); }},
      {"grid.depth_steps",
       [](RunConfig&, GridKeys& g, const std::string& k, const std::string& v) { g.depth_steps = to_i32(k, v); }},
      {"grid.depth_ranges",
       [](RunConfig&, GridKeys& g, const std::string& k, const std::string& v) { g.depth_ranges = to_ranges(k, v); }},

      {"sampler.mode",
       [](RunConfig& c, GridKeys&, const std::string& k, const std::string& v) {
         if (v == "probabilistic") {
           c.train.sampler.mode = SamplerMode::probabilistic;
         } else if (v == "round_robin") {
           c.train.sampler.mode = SamplerMode::round_robin;
         } else {
           throw ConfigError(k, "expected probabilistic or round_robin, got '" + v + "'");
         }
       }},
      {"sampler.width_skew", TB_DBL(train.sampler.width_skew)},
      {"sampler.depth_skew", TB_DBL(train.sampler.depth_skew)},
      {"sampler.seed",
       [](RunConfig& c, GridKeys&, const std::string& k, const std::string& v) { c.train.sampler.seed = to_u64(k, v); }},

      {"heads.hidden", TB_INT(train.heads.hidden)},
      {"heads.bottleneck", TB_INT(train.heads.bottleneck)},
      {"heads.prototypes",
       [](RunConfig& c, GridKeys&, const std::string& k, const std::string& v) {
         c.train.heads.prototypes = to_int_list(k, v);
       }},

      {"loss.lambda", TB_DBL(train.loss.lambda)},
      {"loss.gamma", TB_DBL(train.loss.gamma)},
      {"loss.same_view",
       [](RunConfig& c, GridKeys&, const std::string& k, const std::string& v) { c.train.same_view = to_bool(k, v); }},
      {"loss.sk_iters", TB_INT(train.sk_iters)},

      {"sched.epochs", TB_INT(train.sched.epochs)},
      {"sched.batch_size", TB_INT(train.sched.batch_size)},
      {"sched.lr_reference", TB_DBL(train.sched.lr_reference)},
      {"sched.min_lr", TB_DBL(train.sched.min_lr)},
      {"sched.warmup_epochs", TB_INT(train.sched.warmup_epochs)},
      {"sched.wd_start", TB_DBL(train.sched.wd_start)},
      {"sched.wd_end", TB_DBL(train.sched.wd_end)},
      {"sched.tau_start", TB_DBL(train.sched.tau_start)},
      {"sched.tau_end", TB_DBL(train.sched.tau_end)},
      {"sched.tau_warmup_epochs", TB_INT(train.sched.tau_warmup_epochs)},
      {"sched.tau_student", TB_DBL(train.sched.tau_student)},
      {"sched.mu_start", TB_DBL(train.sched.mu_start)},
      {"sched.mu_end", TB_DBL(train.sched.mu_end)},
      {"sched.clip_norm", TB_DBL(train.sched.clip_norm)},
      {"sched.layer_decay", TB_DBL(train.sched.layer_decay)},
      {"sched.patch_embed_lr_scale", TB_DBL(train.sched.patch_embed_lr_scale)},
      {"sched.freeze_last_layer_epochs", TB_INT(train.sched.freeze_last_layer_epochs)},

      {"aug.global_size", TB_INT(train.aug.global_size)},
      {"aug.local_size", TB_INT(train.aug.local_size)},
      {"aug.local_crops", TB_INT(train.aug.local_crops)},
      {"aug.min_gcs", TB_DBL(train.aug.min_gcs)},
      {"aug.max_gcs", TB_DBL(train.aug.max_gcs)},
      {"aug.min_lcs", TB_DBL(train.aug.min_lcs)},
      {"aug.max_lcs", TB_DBL(train.aug.max_lcs)},
      {"aug.flip_prob", TB_DBL(train.aug.flip_prob)},
      {"aug.jitter_prob", TB_DBL(train.aug.jitter_prob)},
      {"aug.brightness", TB_DBL(train.aug.brightness)},
      {"aug.contrast", TB_DBL(train.aug.contrast)},
      {"aug.saturation", TB_DBL(train.aug.saturation)},
      {"aug.hue", TB_DBL(train.aug.hue)},
      {"aug.blur_radius_min", TB_DBL(train.aug.blur_radius_min)},
      {"aug.blur_radius_max", TB_DBL(train.aug.blur_radius_max)},
      {"aug.blur_prob_g1", TB_DBL(train.aug.blur_prob_g1)},
      {"aug.blur_prob_g2", TB_DBL(train.aug.blur_prob_g2)},
      {"aug.blur_prob_l", TB_DBL(train.aug.blur_prob_l)},
      {"aug.solarize_threshold", TB_DBL(train.aug.solarize_threshold)},
      {"aug.solarize_prob_g1", TB_DBL(train.aug.solarize_prob_g1)},
      {"aug.solarize_prob_g2", TB_DBL(train.aug.solarize_prob_g2)},
      {"aug.solarize_prob_l", TB_DBL(train.aug.solarize_prob_l)},

      {"data.path", [](RunConfig& c, GridKeys&, const std::string&, const std::string& v) { c.data_path = v; }},
      {"out.dir", [](RunConfig& c, GridKeys&, const std::string&, const std::string& v) { c.out_dir = v; }},
      {"out.every", TB_INT(checkpoint_every)},
      {"run.seed",
       [](RunConfig& c, GridKeys&, const std::string& k, const std::string& v) { c.train.seed = to_u64(k, v); }},
      {"run.precision", TB_INT(precision)},
  };
  return table;
}

#undef TB_INT
#undef TB_DBL

}  // namespace

KeyValues parse_ini(std::string_view text) {
  KeyValues kv;
  std::string section;
  std::size_t lineno = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto cut = raw.find_first_of("#;");
    const std::string line = trim(cut == std::string::npos ? raw : raw.substr(0, cut));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError(where, "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where, "expected key = value, got '" + line + "'");
    const std::string name = trim(line.substr(0, eq));
    if (name.empty()) throw ConfigError(where, "empty key");
    const std::string key = section.empty() ? name : section + "." + name;
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second) throw ConfigError(key, "set twice (" + where + ")");
  }
  return kv;
}

ElasticGrid grid_for(const BackboneSpec& spec, int width_steps, int depth_steps,
                     const std::vector<std::pair<int, int>>& depth_ranges) {
  ElasticGrid g;
  g.head_dim = spec.head_dim;
  g.num_heads = spec.num_heads;
  g.width_steps = width_steps;
  const auto stages = spec.elastic_stages();
  if (spec.family == Family::resnet) {
    if (depth_ranges.empty()) {
      std::vector<int> full;
      for (int s : stages) full.push_back(spec.blocks_in_stage(s));
      g.depth_table = {full};
    } else {
      g.depth_table = depth_table_product(depth_ranges);
    }
    return g;
  }
  g.depth_max = spec.blocks_in_stage(stages.front());
  g.depth_steps = depth_steps;
  return g;
}

RunConfig run_config_from(const KeyValues& kv) {
  RunConfig c;
  GridKeys g;
  bool has_ranges = false;
  for (const auto& [key, value] : kv) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(key, "unknown configuration key");
    it->second(c, g, key, value);
    has_ranges = has_ranges || key == "grid.depth_ranges";
  }
  if (c.train.backbone.family != Family::resnet && has_ranges) {
    throw ConfigError("grid.depth_ranges", "only ResNet grids take per-stage depth ranges; use grid.depth_steps");
  }
  if (c.train.backbone.family == Family::resnet && kv.count("grid.depth_steps") != 0) {
    throw ConfigError("grid.depth_steps", "ResNet grids take grid.depth_ranges");
  }
  if (c.precision != 32 && c.precision != 64) throw ConfigError("run.precision", "must be 32 or 64");
  if (c.checkpoint_every < 0) throw ConfigError("out.every", "must be >= 0");
  c.train.backbone.validate();
  try {
    c.train.grid = grid_for(c.train.backbone, g.width_steps, g.depth_steps, g.depth_ranges);
    check_grid_matches(c.train.backbone, c.train.grid);
  } catch (const GridError& e) {
    throw ConfigError(has_ranges ? "grid.depth_ranges" : "grid", e.what());
  } catch (const RangeError& e) {
    throw ConfigError("grid.depth_ranges", e.what());
  }
  c.train.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) { return run_config_from(parse_ini(read_file(path))); }

std::vector<std::string> known_config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, s] : setters()) out.push_back(k);
  return out;
}

int effective_precision(int configured) {
  const char* env = std::getenv("TRIBRANCH_DETERMINISTIC");
  if (env != nullptr && std::string(env) == "1") return 64;
  return configured;
}

}  // namespace tribranch
