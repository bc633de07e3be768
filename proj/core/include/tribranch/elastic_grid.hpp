#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tribranch {

/// Lattice of extractable sub-networks for one backbone.
///
/// Widths are `(num_heads - i) * head_dim` for `0 <= i <= width_steps`, so
/// `i = 0` is the full width. Depths are `depth_max - j` for
/// `0 <= j <= depth_steps` on a single elastic stage. Families with more
/// than one elastic stage (ResNet) instead carry a `depth_table` whose entry
/// `j` lists the block count of every elastic stage; entry 0 is the deepest.
struct ElasticGrid {
  int head_dim = 8;
  int num_heads = 4;
  int width_steps = 0;
  int depth_max = 1;
  int depth_steps = 0;
  std::vector<std::vector<int>> depth_table;

  int max_width() const { return num_heads * head_dim; }
  int width_count() const { return width_steps + 1; }
  int depth_count() const;
  std::size_t size() const { return static_cast<std::size_t>(width_count()) * static_cast<std::size_t>(depth_count()); }

  // Throws GridError when the lattice violates its side conditions.
  void validate() const;

  bool operator==(const ElasticGrid&) const = default;
};

/// Position on the lattice, both indices counted from the full network
/// (i = 0 is the widest, j = 0 the deepest).
struct SubNetId {
  int i = 0;
  int j = 0;
  bool operator==(const SubNetId&) const = default;
  auto operator<=>(const SubNetId&) const = default;
};

// Width at lattice index i; RangeError when i > width_steps.
int width_of(const ElasticGrid& grid, int i);

// Single-stage depth at lattice index j.
int depth_of(const ElasticGrid& grid, int j);

// Per-elastic-stage block counts at lattice index j. For single-stage grids
// this is {depth_of(grid, j)}.
std::vector<int> stage_depths_of(const ElasticGrid& grid, int j);

// Lattice index of a width / depth value; GridError listing the valid
// values when the value is off-lattice.
int width_index(const ElasticGrid& grid, int width);
int depth_index(const ElasticGrid& grid, const std::vector<int>& stage_depths);

// Human-readable depth label: "12" or "8x36".
std::string depth_label(const ElasticGrid& grid, int j);

/// Evenly spaced active block ids: floor((depth_max - 1) * k / (depth - 1))
/// for k in [0, depth). Requires 2 <= depth <= depth_max (RangeError
/// otherwise); depth 1 would divide by zero.
std::vector<int> block_ids(int depth_max, int depth);

// All (width_count * depth_count) ids, lexicographic in (i, j).
std::vector<SubNetId> enumerate(const ElasticGrid& grid);

// Cross product of per-stage depth ranges, deepest first. Each range is
// inclusive [lo, hi].
std::vector<std::vector<int>> depth_table_product(const std::vector<std::pair<int, int>>& ranges);

}  // namespace tribranch
