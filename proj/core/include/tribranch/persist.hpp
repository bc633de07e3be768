#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "tribranch/dataset.hpp"
#include "tribranch/param_store.hpp"
#include "tribranch/schedule.hpp"

namespace tribranch {

/// Single-file checkpoint layout (all integers little-endian):
///
///   "TBCKPT\0\0" | u32 version | u64 header bytes | JSON header | payload
///
/// The JSON header holds the backbone spec, grid, head config, metadata and
/// an index table of {name, dtype, shape, offset, nbytes}; offsets are
/// relative to the payload start. Dtype codes: 1 = f32, 2 = f64, 3 = i64.
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : int { f32 = 1, f64 = 2, i64 = 3 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

enum class Role { student, teacher, extracted };

std::string to_string(Role r);
Role role_from_string(const std::string& s);  // FormatError

struct CheckpointMeta {
  Role role = Role::student;
  bool alpha_baked = false;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t sampler_seed = 0;
  std::optional<ScheduleConfig> schedule;
  // Extraction provenance: lattice point and its width / depth label.
  std::optional<SubNetId> source;
  int width = 0;
  std::string depth;

  bool operator==(const CheckpointMeta&) const;
};

template <typename T>
struct Checkpoint {
  ParamStore<T> store;
  CheckpointMeta meta;
};

template <typename T>
std::string encode_checkpoint(const ParamStore<T>& store, const CheckpointMeta& meta);

/// Decodes into precision T (stored values are converted when the file was
/// written at the other precision). FormatError on bad magic, unknown
/// versions, truncated payloads or inconsistent headers.
template <typename T>
Checkpoint<T> decode_checkpoint(std::string_view bytes);

// Writes through a temporary file and an atomic rename.
template <typename T>
void write_checkpoint(const std::string& path, const ParamStore<T>& store, const CheckpointMeta& meta);

template <typename T>
Checkpoint<T> read_checkpoint(const std::string& path);

// Precision the parameters were stored at (f32 or f64).
DType checkpoint_dtype(const std::string& path);

// Same spec, grid, heads, names and bit-identical values.
template <typename T>
bool same_params(const ParamStore<T>& a, const ParamStore<T>& b);

/// Labeled image container: "TBDATA\0\0" | u32 version | u64 header bytes |
/// JSON header {num_classes, train, test shapes} | f32 images and i64 labels
/// of the train split, then of the test split.
template <typename T>
void write_dataset(const std::string& path, const Dataset<T>& data);

template <typename T>
Dataset<T> read_dataset(const std::string& path);

// IoError when the file cannot be read / written.
std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, std::string_view bytes);

}  // namespace tribranch
