#include "pcdim/octree.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

namespace pcdim {
namespace {

// Spread the low 21 bits of v so that bit b moves to bit 3b.
std::uint64_t spread3(std::uint64_t v) {
  v &= 0x1fffffULL;
  v = (v | (v << 32)) & 0x1f00000000ffffULL;
  v = (v | (v << 16)) & 0x1f0000ff0000ffULL;
  v = (v | (v << 8)) & 0x100f00f00f00f00fULL;
  v = (v | (v << 4)) & 0x10c30c30c30c30c3ULL;
  v = (v | (v << 2)) & 0x1249249249249249ULL;
  return v;
}

void check_level(int level) {
  if (level < 1 || level > kMaxMortonLevel) {
    throw UsageError(fmt::format("octree level {} out of range [1, {}]", level, kMaxMortonLevel));
  }
}

void check_cube(const Box3& cube) {
  for (std::size_t a = 0; a < 3; ++a) {
    const double edge = cube.hi[a] - cube.lo[a];
    if (!(edge > 0.0) || !std::isfinite(edge)) throw UsageError("degenerate quantization cube (zero edge)");
  }
}

struct Quantized {
  std::vector<std::uint64_t> keys;
  std::vector<std::array<std::uint32_t, 3>> cells;
};

Quantized quantize_all(std::span<const Point> points, const Box3& cube, int level, bool keep_cells) {
  Quantized q;
  q.keys.resize(points.size());
  if (keep_cells) q.cells.resize(points.size());
  const Vec3 edge = cube.extent();
  for (std::size_t n = 0; n < points.size(); ++n) {
    const auto& p = points[n];
    const std::uint32_t ix = quantize_axis(p.x, cube.lo.x, edge.x, level);
    const std::uint32_t iy = quantize_axis(p.y, cube.lo.y, edge.y, level);
    const std::uint32_t iz = quantize_axis(p.z, cube.lo.z, edge.z, level);
    q.keys[n] = interleave_bits(ix, iy, iz, level);
    if (keep_cells) q.cells[n] = {ix, iy, iz};
  }
  return q;
}

}  // namespace

std::uint32_t quantize_axis(double c, double lo, double edge, int level) {
  const double scaled = std::ldexp((c - lo) / edge, level);
  const double top = std::ldexp(1.0, level) - 1.0;
  if (!(scaled >= 0.0)) return 0;
  if (scaled >= top) return static_cast<std::uint32_t>(top);
  return static_cast<std::uint32_t>(scaled);
}

std::uint64_t interleave_bits(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz, int level) {
  const std::uint64_t mask = (level >= 32) ? ~0ULL : ((1ULL << level) - 1ULL);
  return spread3(ix & mask) | (spread3(iy & mask) << 1) | (spread3(iz & mask) << 2);
}

std::uint64_t morton_code(Vec3 p, const Box3& cube, int level) {
  check_level(level);
  check_cube(cube);
  const Vec3 edge = cube.extent();
  return interleave_bits(quantize_axis(p.x, cube.lo.x, edge.x, level), quantize_axis(p.y, cube.lo.y, edge.y, level),
                         quantize_axis(p.z, cube.lo.z, edge.z, level), level);
}

PplVector ppl_occupancy(std::span<const Point> points, const Box3& cube, int max_level) {
  check_level(max_level);
  check_cube(cube);
  if (points.empty()) throw DataError("occupancy descriptor needs at least one point");

  auto keys = quantize_all(points, cube, max_level, false).keys;
  std::sort(keys.begin(), keys.end());

  PplVector ppl;
  ppl.mode = PplMode::kOccupancy;
  ppl.counts.resize(static_cast<std::size_t>(max_level));
  // Prefixes of sorted keys stay sorted, so each level is a distinct-run count.
  for (int level = 1; level <= max_level; ++level) {
    const int shift = 3 * (max_level - level);
    std::uint64_t distinct = 1;
    std::uint64_t prev = keys[0] >> shift;
    for (std::size_t n = 1; n < keys.size(); ++n) {
      const std::uint64_t cur = keys[n] >> shift;
      if (cur != prev) {
        ++distinct;
        prev = cur;
      }
    }
    ppl.counts[static_cast<std::size_t>(level - 1)] = distinct;
  }
  return ppl;
}

MidOcResult midoc_order(std::span<const Point> points, const Box3& cube, int max_level) {
  check_level(max_level);
  check_cube(cube);
  if (points.empty()) throw DataError("MidOc ordering needs at least one point");
  if (points.size() > std::numeric_limits<std::uint32_t>::max()) throw DataError("patch too large for MidOc");

  const auto q = quantize_all(points, cube, max_level, true);
  std::vector<std::uint32_t> sorted(points.size());
  std::iota(sorted.begin(), sorted.end(), 0U);
  std::sort(sorted.begin(), sorted.end(), [&](std::uint32_t a, std::uint32_t b) {
    return q.keys[a] != q.keys[b] ? q.keys[a] < q.keys[b] : a < b;
  });

  const Vec3 edge = cube.extent();
  std::vector<char> picked(points.size(), 0);
  MidOcResult result;
  result.ppl.mode = PplMode::kMidOc;
  result.ppl.counts.assign(static_cast<std::size_t>(max_level), 0);
  result.ordering.order.reserve(points.size());

  for (int level = 1; level <= max_level; ++level) {
    const int shift = 3 * (max_level - level);
    const int down = max_level - level;
    const double cells = std::ldexp(1.0, level);
    std::size_t begin = 0;
    while (begin < sorted.size()) {
      const std::uint64_t cell = q.keys[sorted[begin]] >> shift;
      std::size_t end = begin + 1;
      while (end < sorted.size() && (q.keys[sorted[end]] >> shift) == cell) ++end;

      bool consumed = false;
      for (std::size_t n = begin; n < end && !consumed; ++n) consumed = picked[sorted[n]] != 0;
      if (!consumed) {
        const auto& c = q.cells[sorted[begin]];
        const Vec3 center{cube.lo.x + (static_cast<double>(c[0] >> down) + 0.5) * edge.x / cells,
                          cube.lo.y + (static_cast<double>(c[1] >> down) + 0.5) * edge.y / cells,
                          cube.lo.z + (static_cast<double>(c[2] >> down) + 0.5) * edge.z / cells};
        std::uint32_t best = sorted[begin];
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t n = begin; n < end; ++n) {
          const std::uint32_t idx = sorted[n];
          const Vec3 d = points[idx].position() - center;
          const double dist = dot(d, d);
          if (dist < best_d || (dist == best_d && idx < best)) {
            best_d = dist;
            best = idx;
          }
        }
        picked[best] = 1;
        result.ordering.order.push_back(best);
        ++result.ppl.counts[static_cast<std::size_t>(level - 1)];
      }
      begin = end;
    }
    result.ordering.level_end.push_back(result.ordering.order.size());
  }
  for (std::uint32_t idx = 0; idx < points.size(); ++idx) {
    if (!picked[idx]) result.ordering.order.push_back(idx);
  }
  return result;
}

}  // namespace pcdim
