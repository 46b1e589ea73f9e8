#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pcdim/common.hpp"
#include "pcdim/point.hpp"

namespace pcdim {

inline constexpr int kMaxMortonLevel = 21;

enum class PplMode { kOccupancy, kMidOc };

// Occupied-cell counts for octree levels 1..n (level 0 is implicit).
struct PplVector {
  std::vector<std::uint64_t> counts;
  PplMode mode = PplMode::kOccupancy;

  std::size_t levels() const { return counts.size(); }
  // 1-based level access.
  std::uint64_t at_level(std::size_t level) const { return counts.at(level - 1); }

  friend bool operator==(const PplVector&, const PplVector&) = default;
};

// Per-axis cell coordinate at `level`: floor((c - lo) / edge * 2^level),
// clamped to [0, 2^level - 1].
std::uint32_t quantize_axis(double c, double lo, double edge, int level);

// Interleave three `level`-bit coordinates; x lands on bit 0 of each triple.
std::uint64_t interleave_bits(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz, int level);

// Morton key of `p` inside `cube` at `level` (1..21). Throws UsageError for a
// zero-edge cube or an out-of-range level. Points on the max faces land in
// the last cell.
std::uint64_t morton_code(Vec3 p, const Box3& cube, int level);

// Counts distinct level-i keys for i = 1..max_level without building a tree.
PplVector ppl_occupancy(std::span<const Point> points, const Box3& cube, int max_level);

struct MidOcOrdering {
  // Permutation of point indices: level-1 picks, level-2 picks, ..., rest.
  std::vector<std::uint32_t> order;
  // level_end[i] is the end of the prefix covering levels 1..i+1.
  std::vector<std::size_t> level_end;
};

struct MidOcResult {
  MidOcOrdering ordering;
  PplVector ppl;
};

// For each level, one representative per occupied cell that does not already
// contain a picked point: the point nearest the cell center, lowest index on
// ties. Picks within a level are listed in Morton order.
MidOcResult midoc_order(std::span<const Point> points, const Box3& cube, int max_level);

}  // namespace pcdim
