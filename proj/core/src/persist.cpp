#include "tribranch/persist.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unistd.h>

#include "tribranch/errors.hpp"

namespace tribranch {

namespace {

using nlohmann::json;

constexpr char kCkptMagic[8] = {'T', 'B', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr char kDataMagic[8] = {'T', 'B', 'D', 'A', 'T', 'A', '\0', '\0'};
constexpr std::uint32_t kDataVersion = 1;

template <typename U>
void put_le(std::string& out, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U get_le(std::string_view in, std::size_t at) {
  if (at + sizeof(U) > in.size()) throw FormatError("file truncated");
  char buf[sizeof(U)];
  std::memcpy(buf, in.data() + at, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  U v;
  std::memcpy(&v, buf, sizeof(U));
  return v;
}

template <typename U>
void put_array(std::string& out, const U* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(data), n * sizeof(U));
  } else {
    for (std::size_t k = 0; k < n; ++k) put_le(out, data[k]);
  }
}

template <typename U>
void get_array(std::string_view in, std::size_t at, U* data, std::size_t n) {
  if (at + n * sizeof(U) > in.size()) throw FormatError("tensor payload truncated");
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(data, in.data() + at, n * sizeof(U));
  } else {
    for (std::size_t k = 0; k < n; ++k) data[k] = get_le<U>(in, at + k * sizeof(U));
  }
}

void pad8(std::string& out) {
  while (out.size() % 8 != 0) out.push_back('\0');
}

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

// Envelope shared by both containers: magic, version, JSON header.
std::string envelope(const char (&magic)[8], std::uint32_t version, const json& header) {
  std::string out(magic, 8);
  put_le(out, version);
  const std::string h = header.dump();
  put_le(out, static_cast<std::uint64_t>(h.size()));
  out += h;
  pad8(out);
  return out;
}

struct Opened {
  std::uint32_t version;
  json header;
  std::size_t payload;
};

Opened open_envelope(std::string_view bytes, const char (&magic)[8], const char* what) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), magic, 8) != 0) {
    throw FormatError(std::string("not a ") + what + " file (bad magic)");
  }
  Opened o;
  o.version = get_le<std::uint32_t>(bytes, 8);
  const auto len = get_le<std::uint64_t>(bytes, 12);
  if (len > bytes.size() - 20) throw FormatError(std::string(what) + " header truncated");
  try {
    o.header = json::parse(bytes.substr(20, static_cast<std::size_t>(len)));
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + " header is not valid JSON: " + e.what());
  }
  o.payload = (20 + static_cast<std::size_t>(len) + 7) / 8 * 8;
  return o;
}

json spec_json(const BackboneSpec& s) {
  return {{"family", to_string(s.family)}, {"image_size", s.image_size}, {"patch_size", s.patch_size},
          {"in_channels", s.in_channels}, {"head_dim", s.head_dim},     {"num_heads", s.num_heads},
          {"depth", s.depth},             {"mlp_ratio", s.mlp_ratio},   {"stage_depths", s.stage_depths},
          {"window", s.window},           {"drop_path", s.drop_path},   {"ln_eps", s.ln_eps},
          {"stem_width", s.stem_width},   {"out_width", s.out_width}};
}

BackboneSpec spec_from(const json& j) {
  BackboneSpec s;
  s.family = family_from_string(j.at("family").get<std::string>());
  j.at("image_size").get_to(s.image_size);
  j.at("patch_size").get_to(s.patch_size);
  j.at("in_channels").get_to(s.in_channels);
  j.at("head_dim").get_to(s.head_dim);
  j.at("num_heads").get_to(s.num_heads);
  j.at("depth").get_to(s.depth);
  j.at("mlp_ratio").get_to(s.mlp_ratio);
  j.at("stage_depths").get_to(s.stage_depths);
  j.at("window").get_to(s.window);
  j.at("drop_path").get_to(s.drop_path);
  j.at("ln_eps").get_to(s.ln_eps);
  j.at("stem_width").get_to(s.stem_width);
  j.at("out_width").get_to(s.out_width);
  return s;
}

json grid_json(const ElasticGrid& g) {
  return {{"head_dim", g.head_dim},     {"num_heads", g.num_heads},     {"width_steps", g.width_steps},
          {"depth_max", g.depth_max},   {"depth_steps", g.depth_steps}, {"depth_table", g.depth_table}};
}

ElasticGrid grid_from(const json& j) {
  ElasticGrid g;
  j.at("head_dim").get_to(g.head_dim);
  j.at("num_heads").get_to(g.num_heads);
  j.at("width_steps").get_to(g.width_steps);
  j.at("depth_max").get_to(g.depth_max);
  j.at("depth_steps").get_to(g.depth_steps);
  j.at("depth_table").get_to(g.depth_table);
  return g;
}

json schedule_json(const ScheduleConfig& c) {
  return {{"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"batch_size", c.batch_size},
          {"lr_reference", c.lr_reference},
          {"min_lr", c.min_lr},
          {"warmup_epochs", c.warmup_epochs},
          {"wd_start", c.wd_start},
          {"wd_end", c.wd_end},
          {"tau_start", c.tau_start},
          {"tau_end", c.tau_end},
          {"tau_warmup_epochs", c.tau_warmup_epochs},
          {"tau_student", c.tau_student},
          {"mu_start", c.mu_start},
          {"mu_end", c.mu_end},
          {"clip_norm", c.clip_norm},
          {"layer_decay", c.layer_decay},
          {"patch_embed_lr_scale", c.patch_embed_lr_scale},
          {"freeze_last_layer_epochs", c.freeze_last_layer_epochs}};
}

ScheduleConfig schedule_from(const json& j) {
  ScheduleConfig c;
  j.at("epochs").get_to(c.epochs);
  j.at("steps_per_epoch").get_to(c.steps_per_epoch);
  j.at("batch_size").get_to(c.batch_size);
  j.at("lr_reference").get_to(c.lr_reference);
  j.at("min_lr").get_to(c.min_lr);
  j.at("warmup_epochs").get_to(c.warmup_epochs);
  j.at("wd_start").get_to(c.wd_start);
  j.at("wd_end").get_to(c.wd_end);
  j.at("tau_start").get_to(c.tau_start);
  j.at("tau_end").get_to(c.tau_end);
  j.at("tau_warmup_epochs").get_to(c.tau_warmup_epochs);
  j.at("tau_student").get_to(c.tau_student);
  j.at("mu_start").get_to(c.mu_start);
  j.at("mu_end").get_to(c.mu_end);
  j.at("clip_norm").get_to(c.clip_norm);
  j.at("layer_decay").get_to(c.layer_decay);
  j.at("patch_embed_lr_scale").get_to(c.patch_embed_lr_scale);
  j.at("freeze_last_layer_epochs").get_to(c.freeze_last_layer_epochs);
  return c;
}

json meta_json(const CheckpointMeta& m) {
  json j = {{"role", to_string(m.role)}, {"alpha_baked", m.alpha_baked}, {"step", m.step},
            {"seed", m.seed},            {"sampler_seed", m.sampler_seed}, {"width", m.width},
            {"depth", m.depth}};
  j["schedule"] = m.schedule ? schedule_json(*m.schedule) : json(nullptr);
  j["source"] = m.source ? json{{"i", m.source->i}, {"j", m.source->j}} : json(nullptr);
  return j;
}

CheckpointMeta meta_from(const json& j) {
  CheckpointMeta m;
  m.role = role_from_string(j.at("role").get<std::string>());
  j.at("alpha_baked").get_to(m.alpha_baked);
  j.at("step").get_to(m.step);
  j.at("seed").get_to(m.seed);
  j.at("sampler_seed").get_to(m.sampler_seed);
  j.at("width").get_to(m.width);
  j.at("depth").get_to(m.depth);
  if (!j.at("schedule").is_null()) m.schedule = schedule_from(j.at("schedule"));
  if (!j.at("source").is_null()) m.source = SubNetId{j.at("source").at("i").get<int>(), j.at("source").at("j").get<int>()};
  return m;
}

Shape shape_from(const json& j) {
  Shape s;
  for (const auto& d : j) {
    const auto v = d.get<std::int64_t>();
    if (v < 0) throw FormatError("negative tensor extent");
    s.push_back(static_cast<std::size_t>(v));
  }
  return s;
}

std::size_t volume(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

}  // namespace

std::string to_string(Role r) {
  switch (r) {
    case Role::student: return "student";
    case Role::teacher: return "teacher";
    case Role::extracted: return "extracted";
  }
  return "student";
}

Role role_from_string(const std::string& s) {
  if (s == "student") return Role::student;
  if (s == "teacher") return Role::teacher;
  if (s == "extracted") return Role::extracted;
  throw FormatError("unknown checkpoint role '" + s + "'");
}

bool CheckpointMeta::operator==(const CheckpointMeta& o) const {
  const bool sched_eq = schedule.has_value() == o.schedule.has_value() &&
                        (!schedule || schedule_json(*schedule) == schedule_json(*o.schedule));
  return role == o.role && alpha_baked == o.alpha_baked && step == o.step && seed == o.seed &&
         sampler_seed == o.sampler_seed && sched_eq && source == o.source && width == o.width && depth == o.depth;
}

template <typename T>
std::string encode_checkpoint(const ParamStore<T>& store, const CheckpointMeta& meta) {
  json index = json::array();
  std::size_t offset = 0;
  for (const auto& [name, p] : store) {
    const std::size_t nbytes = p.value.size() * sizeof(T);
    index.push_back({{"name", name},
                     {"dtype", static_cast<int>(dtype_of<T>())},
                     {"shape", p.value.shape()},
                     {"offset", offset},
                     {"nbytes", nbytes}});
    offset += (nbytes + 7) / 8 * 8;
  }
  const json header = {{"spec", spec_json(store.spec())},
                       {"grid", grid_json(store.grid())},
                       {"heads", {{"hidden", store.heads().hidden},
                                  {"bottleneck", store.heads().bottleneck},
                                  {"prototypes", store.heads().prototypes}}},
                       {"meta", meta_json(meta)},
                       {"tensors", index}};
  std::string out = envelope(kCkptMagic, kCheckpointVersion, header);
  for (const auto& [name, p] : store) {
    put_array(out, p.value.ptr(), p.value.size());
    pad8(out);
  }
  return out;
}

template <typename T>
Checkpoint<T> decode_checkpoint(std::string_view bytes) {
  const Opened o = open_envelope(bytes, kCkptMagic, "checkpoint");
  if (o.version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(o.version) + " (this build reads " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  try {
    const json& h = o.header;
    HeadConfig heads;
    h.at("heads").at("hidden").get_to(heads.hidden);
    h.at("heads").at("bottleneck").get_to(heads.bottleneck);
    h.at("heads").at("prototypes").get_to(heads.prototypes);
    Checkpoint<T> ck{ParamStore<T>(spec_from(h.at("spec")), grid_from(h.at("grid")), heads), meta_from(h.at("meta"))};
    for (const auto& e : h.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto dtype = static_cast<DType>(e.at("dtype").get<int>());
      const Shape shape = shape_from(e.at("shape"));
      const auto at = o.payload + e.at("offset").get<std::size_t>();
      const auto nbytes = e.at("nbytes").get<std::size_t>();
      if (dtype != DType::f32 && dtype != DType::f64) {
        throw FormatError("tensor '" + name + "' has unsupported dtype code " + std::to_string(static_cast<int>(dtype)));
      }
      if (nbytes != volume(shape) * dtype_size(dtype)) throw FormatError("tensor '" + name + "' size mismatch");
      Tensor<T> t(shape);
      if (dtype == DType::f32) {
        std::vector<float> raw(t.size());
        get_array(bytes, at, raw.data(), raw.size());
        std::copy(raw.begin(), raw.end(), t.ptr());
      } else {
        std::vector<double> raw(t.size());
        get_array(bytes, at, raw.data(), raw.size());
        for (std::size_t k = 0; k < raw.size(); ++k) t.ptr()[k] = static_cast<T>(raw[k]);
      }
      ck.store.add(name, std::move(t));
    }
    return ck;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ParameterError& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

template <typename T>
void write_checkpoint(const std::string& path, const ParamStore<T>& store, const CheckpointMeta& meta) {
  write_file_atomic(path, encode_checkpoint(store, meta));
}

template <typename T>
Checkpoint<T> read_checkpoint(const std::string& path) {
  return decode_checkpoint<T>(read_file(path));
}

DType checkpoint_dtype(const std::string& path) {
  const std::string bytes = read_file(path);
  const Opened o = open_envelope(bytes, kCkptMagic, "checkpoint");
  try {
    const auto& t = o.header.at("tensors");
    if (t.empty()) return DType::f32;
    return static_cast<DType>(t.front().at("dtype").get<int>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  }
}

template <typename T>
bool same_params(const ParamStore<T>& a, const ParamStore<T>& b) {
  if (!(a.spec() == b.spec()) || !(a.grid() == b.grid()) || !(a.heads() == b.heads()) || a.size() != b.size()) {
    return false;
  }
  auto ib = b.begin();
  for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.value.shape() != ib->second.value.shape()) return false;
    if (std::memcmp(ia->second.value.ptr(), ib->second.value.ptr(), ia->second.value.size() * sizeof(T)) != 0) {
      return false;
    }
  }
  return true;
}

template <typename T>
void write_dataset(const std::string& path, const Dataset<T>& data) {
  const json header = {{"num_classes", data.num_classes},
                       {"train", data.train.images.shape()},
                       {"test", data.test.images.shape()}};
  std::string out = envelope(kDataMagic, kDataVersion, header);
  for (const auto* split : {&data.train, &data.test}) {
    if (split->images.rank() != 4 || split->images.dim(0) != split->labels.size()) {
      throw DimensionError("dataset split images and labels disagree");
    }
    const Tensor<float> f = split->images.template cast<float>();
    put_array(out, f.ptr(), f.size());
    pad8(out);
    put_array(out, split->labels.data(), split->labels.size());
  }
  write_file_atomic(path, out);
}

template <typename T>
Dataset<T> read_dataset(const std::string& path) {
  const std::string bytes = read_file(path);
  const Opened o = open_envelope(bytes, kDataMagic, "dataset");
  if (o.version != kDataVersion) throw FormatError("unsupported dataset version " + std::to_string(o.version));
  Dataset<T> d;
  std::size_t at = o.payload;
  try {
    d.num_classes = o.header.at("num_classes").get<int>();
    for (auto [split, key] : {std::pair{&d.train, "train"}, std::pair{&d.test, "test"}}) {
      const Shape shape = shape_from(o.header.at(key));
      if (shape.size() != 4) throw FormatError(std::string("dataset ") + key + " images must be rank 4");
      std::vector<float> raw(volume(shape));
      get_array(bytes, at, raw.data(), raw.size());
      at += (raw.size() * 4 + 7) / 8 * 8;
      split->images = Tensor<T>(shape);
      std::copy(raw.begin(), raw.end(), split->images.ptr());
      split->labels.resize(shape[0]);
      get_array(bytes, at, split->labels.data(), shape[0]);
      at += shape[0] * 8;
      for (auto l : split->labels) {
        if (l < 0 || l >= d.num_classes) throw FormatError("dataset label out of range");
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed dataset header: ") + e.what());
  }
  return d;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read '" + path + "'");
  return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot rename into '" + path + "': " + ec.message());
  }
}

#define TRIBRANCH_INSTANTIATE(T)                                                              \
  template std::string encode_checkpoint(const ParamStore<T>&, const CheckpointMeta&);        \
  template Checkpoint<T> decode_checkpoint(std::string_view);                                 \
  template void write_checkpoint(const std::string&, const ParamStore<T>&, const CheckpointMeta&); \
  template Checkpoint<T> read_checkpoint(const std::string&);                                 \
  template bool same_params(const ParamStore<T>&, const ParamStore<T>&);                      \
  template void write_dataset(const std::string&, const Dataset<T>&);                         \
  template Dataset<T> read_dataset(const std::string&);

TRIBRANCH_INSTANTIATE(float)
TRIBRANCH_INSTANTIATE(double)
#undef TRIBRANCH_INSTANTIATE

}  // namespace tribranch
