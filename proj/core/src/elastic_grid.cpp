#include "tribranch/elastic_grid.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "tribranch/errors.hpp"

namespace tribranch {

int ElasticGrid::depth_count() const {
  return depth_table.empty() ? depth_steps + 1 : static_cast<int>(depth_table.size());
}

void ElasticGrid::validate() const {
  if (head_dim < 1 || num_heads < 1) throw GridError("grid needs head_dim >= 1 and num_heads >= 1");
  if (width_steps < 0 || width_steps >= num_heads) {
    throw GridError("width_steps must satisfy 0 <= m < num_heads (" + std::to_string(num_heads) + "), got " +
                    std::to_string(width_steps));
  }
  if (depth_table.empty()) {
    if (depth_max < 1) throw GridError("depth_max must be >= 1");
    if (depth_steps < 0 || depth_steps >= depth_max) {
      throw GridError("depth_steps must satisfy 0 <= n < depth_max (" + std::to_string(depth_max) + "), got " +
                      std::to_string(depth_steps));
    }
    if (depth_steps > 0 && depth_max - depth_steps < 2) {
      throw GridError("smallest elastic depth must be >= 2, got " + std::to_string(depth_max - depth_steps));
    }
    return;
  }
  const std::size_t stages = depth_table.front().size();
  if (stages == 0) throw GridError("depth_table entries must name at least one stage");
  std::set<std::vector<int>> seen;
  for (const auto& row : depth_table) {
    if (row.size() != stages) throw GridError("depth_table entries have inconsistent stage counts");
    for (int d : row) {
      if (d < 1) throw GridError("depth_table block counts must be positive");
    }
    if (!seen.insert(row).second) throw GridError("depth_table contains a duplicate entry");
  }
  for (std::size_t s = 0; s < stages; ++s) {
    const int top = depth_table.front()[s];
    for (const auto& row : depth_table) {
      if (row[s] > top) throw GridError("depth_table entry 0 must be the deepest configuration");
      if (row[s] < top && row[s] < 2) throw GridError("elastic stage depths below 2 are not supported");
    }
  }
}

int width_of(const ElasticGrid& grid, int i) {
  if (i < 0 || i > grid.width_steps) {
    throw RangeError("width index " + std::to_string(i) + " outside [0, " + std::to_string(grid.width_steps) + "]");
  }
  return (grid.num_heads - i) * grid.head_dim;
}

int depth_of(const ElasticGrid& grid, int j) {
  if (!grid.depth_table.empty()) {
    const auto d = stage_depths_of(grid, j);
    int total = 0;
    for (int x : d) total += x;
    return total;
  }
  if (j < 0 || j > grid.depth_steps) {
    throw RangeError("depth index " + std::to_string(j) + " outside [0, " + std::to_string(grid.depth_steps) + "]");
  }
  return grid.depth_max - j;
}

std::vector<int> stage_depths_of(const ElasticGrid& grid, int j) {
  if (grid.depth_table.empty()) return {depth_of(grid, j)};
  if (j < 0 || j >= static_cast<int>(grid.depth_table.size())) {
    throw RangeError("depth index " + std::to_string(j) + " outside [0, " +
                     std::to_string(grid.depth_table.size() - 1) + "]");
  }
  return grid.depth_table[static_cast<std::size_t>(j)];
}

int width_index(const ElasticGrid& grid, int width) {
  for (int i = 0; i <= grid.width_steps; ++i) {
    if (width_of(grid, i) == width) return i;
  }
  std::ostringstream os;
  os << "width " << width << " is not on the lattice; valid widths:";
  for (int i = 0; i <= grid.width_steps; ++i) os << ' ' << width_of(grid, i);
  throw GridError(os.str());
}

int depth_index(const ElasticGrid& grid, const std::vector<int>& stage_depths) {
  for (int j = 0; j < grid.depth_count(); ++j) {
    if (stage_depths_of(grid, j) == stage_depths) return j;
  }
  std::ostringstream os;
  os << "depth is not on the lattice; valid depths:";
  for (int j = 0; j < grid.depth_count(); ++j) os << ' ' << depth_label(grid, j);
  throw GridError(os.str());
}

std::string depth_label(const ElasticGrid& grid, int j) {
  const auto d = stage_depths_of(grid, j);
  std::string s;
  for (std::size_t k = 0; k < d.size(); ++k) s += (k ? "x" : "") + std::to_string(d[k]);
  return s;
}

std::vector<int> block_ids(int depth_max, int depth) {
  if (depth > depth_max) {
    throw RangeError("depth " + std::to_string(depth) + " exceeds depth_max " + std::to_string(depth_max));
  }
  if (depth < 2) throw RangeError("block_ids requires depth >= 2, got " + std::to_string(depth));
  std::vector<int> ids(static_cast<std::size_t>(depth));
  for (int k = 0; k < depth; ++k) {
    ids[static_cast<std::size_t>(k)] =
        static_cast<int>((static_cast<long long>(depth_max - 1) * k) / (depth - 1));
  }
  return ids;
}

std::vector<SubNetId> enumerate(const ElasticGrid& grid) {
  std::vector<SubNetId> ids;
  ids.reserve(grid.size());
  for (int i = 0; i < grid.width_count(); ++i) {
    for (int j = 0; j < grid.depth_count(); ++j) ids.push_back({i, j});
  }
  return ids;
}

std::vector<std::vector<int>> depth_table_product(const std::vector<std::pair<int, int>>& ranges) {
  std::vector<std::vector<int>> table{{}};
  for (const auto& [lo, hi] : ranges) {
    if (lo > hi) throw GridError("depth range lower bound exceeds upper bound");
    std::vector<std::vector<int>> next;
    for (const auto& prefix : table) {
      for (int d = hi; d >= lo; --d) {
        auto row = prefix;
        row.push_back(d);
        next.push_back(std::move(row));
      }
    }
    table = std::move(next);
  }
  return table;
}

}  // namespace tribranch
