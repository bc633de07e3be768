#include "tribranch/commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "tribranch/persist.hpp"

namespace tribranch {

namespace {

namespace fs = std::filesystem;

// Calls f with a value of the precision the checkpoint was stored in.
template <typename F>
decltype(auto) at_precision(DType d, F&& f) {
  if (d == DType::f64) return f(double{});
  return f(float{});
}

template <typename T>
CheckpointMeta run_meta(const Trainer<T>& t, const RunConfig& rc, Role role) {
  CheckpointMeta m;
  m.role = role;
  m.step = t.step();
  m.seed = rc.train.seed;
  m.sampler_seed = rc.train.sampler.seed;
  m.schedule = rc.train.sched;
  return m;
}

template <typename T>
PretrainResult pretrain(const RunConfig& rc_in, std::ostream* progress) {
  RunConfig rc = rc_in;
  const Dataset<T> data = read_dataset<T>(rc.data_path);
  const std::size_t n = data.train.images.dim(0);
  const auto batch = static_cast<std::size_t>(rc.train.sched.batch_size);
  if (n < batch) {
    throw ConfigError("sched.batch_size", "exceeds the " + std::to_string(n) + " training images in data.path");
  }
  rc.train.sched.steps_per_epoch = static_cast<int>(n / batch);
  Trainer<T> trainer(rc.train);

  fs::create_directories(rc.out_dir);
  PretrainResult res;
  res.metrics_path = (fs::path(rc.out_dir) / "metrics.jsonl").string();
  res.teacher_path = (fs::path(rc.out_dir) / "teacher.ckpt").string();
  res.student_path = (fs::path(rc.out_dir) / "student.ckpt").string();
  std::ofstream log(res.metrics_path, std::ios::trunc);
  if (!log) throw IoError("cannot write '" + res.metrics_path + "'");

  const ElasticGrid& grid = rc.train.grid;
  const auto spe = static_cast<std::int64_t>(rc.train.sched.steps_per_epoch);
  const auto t0 = std::chrono::steady_clock::now();
  trainer.fit(data.train.images, [&](const StepReport& r) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const nlohmann::json row = {{"step", r.step},       {"epoch", r.epoch},
                                {"i", r.id.i},          {"j", r.id.j},
                                {"width", width_of(grid, r.id.i)}, {"depth", depth_label(grid, r.id.j)},
                                {"lr", r.lr},           {"wd", r.wd},
                                {"mu", r.mu},           {"tau", r.tau},
                                {"loss", r.loss},       {"intact", r.intact},
                                {"es1", r.es1},         {"es2", r.es2},
                                {"koleo", r.koleo},     {"grad_norm", r.grad_norm},
                                {"seconds", secs}};
    log << row.dump() << '\n';
    res.final_loss = r.loss;
    const std::int64_t done = r.step + 1;
    if (done % spe == 0) {
      const std::int64_t epoch = done / spe;
      if (rc.checkpoint_every > 0 && epoch % rc.checkpoint_every == 0) {
        const auto snap = fs::path(rc.out_dir) / ("teacher_e" + std::to_string(epoch) + ".ckpt");
        CheckpointMeta m = run_meta(trainer, rc, Role::teacher);
        m.step = done;
        write_checkpoint(snap.string(), trainer.teacher(), m);
      }
      if (progress != nullptr) {
        *progress << "epoch " << epoch << "/" << rc.train.sched.epochs << " loss " << r.loss << '\n';
      }
    }
  });
  log.flush();
  if (!log) throw IoError("short write to '" + res.metrics_path + "'");
  write_checkpoint(res.teacher_path, trainer.teacher(), run_meta(trainer, rc, Role::teacher));
  write_checkpoint(res.student_path, trainer.student(), run_meta(trainer, rc, Role::student));
  res.steps = trainer.step();
  return res;
}

template <typename T>
SubNetId resolve_point(const ParamStore<T>& store, std::optional<int> width, const std::optional<std::string>& depth) {
  const ElasticGrid& g = store.grid();
  SubNetId id;
  if (width) id.i = width_index(g, *width);
  if (depth) id.j = depth_index(g, parse_depth(*depth));
  return id;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw IoError(what + " '" + path + "' does not exist");
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr || dynamic_cast<const GridError*>(&e) != nullptr) {
    return kExitConfig;
  }
  return kExitRuntime;
}

PretrainResult cmd_pretrain(const std::string& config_path, const KeyValues& overrides, std::ostream* progress) {
  KeyValues kv = parse_ini(read_file(config_path));
  for (const auto& [k, v] : overrides) kv[k] = v;
  const RunConfig rc = run_config_from(kv);
  if (rc.data_path.empty()) throw ConfigError("data.path", "required for pretraining");
  if (!fs::exists(rc.data_path)) throw ConfigError("data.path", "no such file '" + rc.data_path + "'");
  if (effective_precision(rc.precision) == 64) return pretrain<double>(rc, progress);
  return pretrain<float>(rc, progress);
}

std::vector<int> parse_depth(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (part.empty() || used != part.size()) throw ConfigError("depth", "expected '12' or '8x36', got '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("depth", "empty depth");
  return out;
}

void cmd_extract(const std::string& ckpt, int width, const std::string& depth, const std::string& out) {
  require_file(ckpt, "checkpoint");
  at_precision(checkpoint_dtype(ckpt), [&](auto tag) {
    using T = decltype(tag);
    Checkpoint<T> ck = read_checkpoint<T>(ckpt);
    if (ck.meta.alpha_baked) {
      throw ParameterError("'" + ckpt + "' is already an extracted sub-network (alpha baked); extract from the intact checkpoint");
    }
    const SubNetId id = resolve_point(ck.store, width, depth);
    const SubNetView<T> view = materialize(ck.store, ck.store.grid(), id);
    CheckpointMeta m = ck.meta;
    m.role = Role::extracted;
    m.alpha_baked = true;
    m.source = id;
    m.width = width;
    m.depth = depth_label(ck.store.grid(), id.j);
    write_checkpoint(out, bake(view), m);
  });
}

std::size_t cmd_enumerate(const std::string& path, std::ostream& out) {
  require_file(path, "input");
  ElasticGrid grid;
  std::string head(6, '\0');
  std::ifstream(path, std::ios::binary).read(head.data(), 6);
  if (head == "TBCKPT") {
    grid = at_precision(checkpoint_dtype(path), [&](auto tag) {
      using T = decltype(tag);
      return read_checkpoint<T>(path).store.grid();
    });
  } else {
    grid = load_run_config(path).train.grid;
  }
  out << "i,j,width,depth\n";
  const auto ids = enumerate(grid);
  for (const SubNetId id : ids) {
    out << id.i << ',' << id.j << ',' << width_of(grid, id.i) << ',' << depth_label(grid, id.j) << '\n';
  }
  return ids.size();
}

SweepReport cmd_sweep(const std::string& ckpt, const std::string& data, const std::string& csv_path,
                      std::ostream& out, std::ostream* table, const KnnConfig& knn) {
  require_file(ckpt, "checkpoint");
  require_file(data, "dataset");
  const SweepReport rep = at_precision(checkpoint_dtype(ckpt), [&](auto tag) {
    using T = decltype(tag);
    Checkpoint<T> ck = read_checkpoint<T>(ckpt);
    const Dataset<T> d = read_dataset<T>(data);
    return sweep(ck.store, ck.store.grid(), d, knn);
  });
  if (csv_path.empty()) {
    rep.write_csv(out);
  } else {
    std::ostringstream ss;
    rep.write_csv(ss);
    write_file_atomic(csv_path, ss.str());
  }
  if (table != nullptr) rep.write_table(*table);
  return rep;
}

std::vector<double> cmd_eval(const std::string& ckpt, const std::string& data, const EvalOptions& opts,
                             std::ostream& out) {
  require_file(ckpt, "checkpoint");
  require_file(data, "dataset");
  const bool robust = opts.mode == "occlusion" || opts.mode == "shuffle";
  if (!robust && opts.mode != "knn" && opts.mode != "probe") {
    throw ConfigError("mode", "expected knn, probe, occlusion or shuffle, got '" + opts.mode + "'");
  }
  std::vector<double> levels = opts.levels;
  if (levels.empty() && opts.mode == "occlusion") levels = {0.0, 0.25, 0.5, 0.75, 1.0};
  if (levels.empty() && opts.mode == "shuffle") levels = {1, 2, 4};
  const std::vector<double> values = at_precision(checkpoint_dtype(ckpt), [&](auto tag) {
    using T = decltype(tag);
    Checkpoint<T> ck = read_checkpoint<T>(ckpt);
    const Dataset<T> d = read_dataset<T>(data);
    if (robust) {
      if (opts.width || opts.depth) throw ConfigError("width", "robustness probes use the intact network");
      return robustness_probe(ck.store, d, opts.mode == "occlusion" ? ProbeMode::occlusion : ProbeMode::shuffle,
                              levels, opts.seed, opts.knn);
    }
    const SubNetView<T> view = materialize(ck.store, ck.store.grid(), resolve_point(ck.store, opts.width, opts.depth));
    const LabeledFeatures train = view_features(view, d.train), test = view_features(view, d.test);
    return std::vector<double>{opts.mode == "knn" ? knn_eval(train, test, opts.knn)
                                                  : linear_probe(train, test, opts.probe)};
  });
  out << "mode,level,value\n";
  out.precision(17);
  for (std::size_t k = 0; k < values.size(); ++k) {
    out << opts.mode << ',';
    if (robust) out << levels[k];
    out << ',' << values[k] << '\n';
  }
  return values;
}

void cmd_make_data(const std::string& out, std::size_t n_train, std::size_t n_test, int size, std::uint64_t seed) {
  write_dataset(out, make_shapes<float>(n_train, n_test, size, seed));
}

}  // namespace tribranch
