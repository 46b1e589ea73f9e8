#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "helpers.hpp"
#include "pcdim/octree.hpp"
#include "pcdim/synth.hpp"

using namespace pcdim;
using pcdim::test::pt;
using pcdim::test::unit_cube;

namespace {

// Independent per-axis cell index: floor of the scaled offset, clamped.
std::uint64_t axis_cell(double c, double lo, double hi, int level) {
  const double side = std::pow(2.0, level);
  const double f = std::floor((c - lo) / (hi - lo) * side);
  return static_cast<std::uint64_t>(std::clamp(f, 0.0, side - 1));
}

// Bit-by-bit interleave, x on the lowest bit.
std::uint64_t slow_interleave(std::uint64_t ix, std::uint64_t iy, std::uint64_t iz, int level) {
  std::uint64_t key = 0;
  for (int b = 0; b < level; ++b) {
    key |= ((ix >> b) & 1U) << (3 * b);
    key |= ((iy >> b) & 1U) << (3 * b + 1);
    key |= ((iz >> b) & 1U) << (3 * b + 2);
  }
  return key;
}

std::vector<Point> dense_plane(Rng& rng, std::size_t n) {
  std::vector<Point> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(pt(rng.uniform(), rng.uniform(), 0.5));
  return out;
}

}  // namespace

TEST_CASE("morton key of the minimum corner is zero") {
  for (int level = 1; level <= kMaxMortonLevel; ++level) CHECK(morton_code({0, 0, 0}, unit_cube(), level) == 0);
}

TEST_CASE("morton key of the cube centre at level 1 is 7") {
  CHECK(morton_code({0.5, 0.5, 0.5}, unit_cube(), 1) == 7);
  const Box3 shifted{{10, 20, 30}, {14, 24, 34}};
  CHECK(morton_code({12, 22, 32}, shifted, 1) == 7);
  CHECK(morton_code({12, 21, 31}, shifted, 1) == 1);
}

TEST_CASE("morton keys match independent per-axis quantization") {
  Rng rng(99);
  const Box3 cube{{-3, 2, 5}, {1, 6, 9}};
  for (int trial = 0; trial < 2000; ++trial) {
    const Vec3 p{rng.uniform(-3, 1), rng.uniform(2, 6), rng.uniform(5, 9)};
    const int level = 1 + static_cast<int>(rng.index(kMaxMortonLevel));
    const auto ix = axis_cell(p.x, cube.lo.x, cube.hi.x, level);
    const auto iy = axis_cell(p.y, cube.lo.y, cube.hi.y, level);
    const auto iz = axis_cell(p.z, cube.lo.z, cube.hi.z, level);
    CHECK(morton_code(p, cube, level) == slow_interleave(ix, iy, iz, level));
  }
}

TEST_CASE("points on the max face are clamped into the last cell") {
  CHECK(morton_code({1, 1, 1}, unit_cube(), 3) == slow_interleave(7, 7, 7, 3));
  CHECK(morton_code({1, 0, 0}, unit_cube(), 2) == slow_interleave(3, 0, 0, 2));
}

TEST_CASE("morton errors") {
  CHECK_THROWS_AS(morton_code({0, 0, 0}, unit_cube(), 0), UsageError);
  CHECK_THROWS_AS(morton_code({0, 0, 0}, unit_cube(), 22), UsageError);
  const Box3 flat{{0, 0, 0}, {1, 1, 0}};
  CHECK_THROWS_AS(morton_code({0, 0, 0}, flat, 2), UsageError);
}

TEST_CASE("level 21 keys fit in 63 bits") {
  const auto key = morton_code({1, 1, 1}, unit_cube(), 21);
  CHECK(key == (std::uint64_t{1} << 63) - 1);
}

TEST_CASE("evenly spaced collinear points double per level") {
  const int levels = 5;
  std::vector<Point> line;
  const int n = 1 << levels;
  for (int i = 0; i < n; ++i) line.push_back(pt((i + 0.5) / n, 0.1, 0.1));
  const auto ppl = ppl_occupancy(line, unit_cube(), levels);
  CHECK(ppl.counts == std::vector<std::uint64_t>{2, 4, 8, 16, 32});
  CHECK(ppl.mode == PplMode::kOccupancy);
}

TEST_CASE("dense plane fills 4^L cells") {
  Rng rng(5);
  const auto ppl = ppl_occupancy(dense_plane(rng, 20000), unit_cube(), 3);
  CHECK(ppl.counts == std::vector<std::uint64_t>{4, 16, 64});
}

TEST_CASE("dense volume fills 8^L cells") {
  Rng rng(6);
  const auto pts = test::random_points(rng, 50000, {0, 0, 0}, {1, 1, 1});
  const auto ppl = ppl_occupancy(pts, unit_cube(), 3);
  CHECK(ppl.counts == std::vector<std::uint64_t>{8, 64, 512});
}

TEST_CASE("occupancy equals the dense voxel oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const double s = rng.uniform(0.1, 10);
    const Vec3 lo{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)};
    const Box3 cube{lo, lo + Vec3{s, s, s}};
    const auto n = 1 + rng.index(300);
    std::vector<Point> pts;
    for (std::size_t i = 0; i < n; ++i) {
      // Clustered and boundary points exercise clamping and duplicates.
      const double mode = rng.uniform();
      Vec3 p{rng.uniform(lo.x, lo.x + s), rng.uniform(lo.y, lo.y + s), rng.uniform(lo.z, lo.z + s)};
      if (mode < 0.1) p.x = lo.x + s;
      if (mode > 0.9) p = lo;
      pts.push_back(pt(p.x, p.y, p.z));
    }
    const int levels = 1 + static_cast<int>(rng.index(6));
    CHECK(ppl_occupancy(pts, cube, levels).counts == synth::oracle_ppl(pts, cube, levels));
  }
}

TEST_CASE("occupancy bounds and branching invariants") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const auto pts = test::random_points(rng, 1 + rng.index(500), {0, 0, 0}, {1, 1, 1});
    const auto ppl = ppl_occupancy(pts, unit_cube(), 6);
    for (std::size_t i = 0; i < ppl.levels(); ++i) {
      const auto level = i + 1;
      CHECK(ppl.counts[i] >= 1);
      CHECK(ppl.counts[i] <= std::min<std::uint64_t>(std::uint64_t{1} << (3 * level), pts.size()));
      if (i + 1 < ppl.levels()) {
        CHECK(ppl.counts[i] <= ppl.counts[i + 1]);
        CHECK(ppl.counts[i + 1] <= 8 * ppl.counts[i]);
      }
    }
  }
}

TEST_CASE("ppl is invariant under uniform scale and translation") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pts = test::random_points(rng, 200, {0, 0, 0}, {1, 1, 1});
    // Power-of-two scales keep quantization exact.
    const double scale = std::ldexp(1.0, static_cast<int>(rng.index(8)) - 3);
    const Vec3 shift{std::round(rng.uniform(-100, 100)), std::round(rng.uniform(-100, 100)), 64.0};
    std::vector<Point> moved;
    for (const auto& p : pts) {
      const Vec3 q = p.position() * scale + shift;
      moved.push_back(pt(q.x, q.y, q.z));
    }
    const Box3 cube{shift, shift + Vec3{scale, scale, scale}};
    CHECK(ppl_occupancy(pts, unit_cube(), 5) == ppl_occupancy(moved, cube, 5));
  }
}

TEST_CASE("duplicating points leaves occupancy unchanged") {
  Rng rng(18);
  auto pts = test::random_points(rng, 300, {0, 0, 0}, {1, 1, 1});
  const auto before = ppl_occupancy(pts, unit_cube(), 5);
  const auto copy = pts;
  pts.insert(pts.end(), copy.begin(), copy.end());
  CHECK(ppl_occupancy(pts, unit_cube(), 5) == before);
}

TEST_CASE("ppl errors") {
  CHECK_THROWS_AS(ppl_occupancy(std::vector<Point>{}, unit_cube(), 3), DataError);
  const std::vector<Point> one{pt(0.5, 0.5, 0.5)};
  CHECK_THROWS_AS(ppl_occupancy(one, unit_cube(), 0), UsageError);
  CHECK_THROWS_AS(ppl_occupancy(one, unit_cube(), 22), UsageError);
  CHECK_THROWS_AS(midoc_order(std::vector<Point>{}, unit_cube(), 3), DataError);
  CHECK_THROWS_AS(midoc_order(one, unit_cube(), 22), UsageError);
}

TEST_CASE("midoc of a single point") {
  const std::vector<Point> one{pt(0.3, 0.3, 0.3)};
  const auto r = midoc_order(one, unit_cube(), 4);
  CHECK(r.ordering.order == std::vector<std::uint32_t>{0});
  CHECK(r.ppl.counts == std::vector<std::uint64_t>{1, 0, 0, 0});
  CHECK(r.ppl.mode == PplMode::kMidOc);
}

TEST_CASE("midoc with one point per level-1 subcell") {
  std::vector<Point> pts;
  for (int c = 0; c < 8; ++c) pts.push_back(pt(c & 1 ? 0.75 : 0.25, c & 2 ? 0.75 : 0.25, c & 4 ? 0.75 : 0.25));
  const auto r = midoc_order(pts, unit_cube(), 3);
  CHECK(r.ppl.counts == std::vector<std::uint64_t>{8, 0, 0});
  // Level-1 picks are listed in Morton order, which here is input order.
  CHECK(r.ordering.order == std::vector<std::uint32_t>{0, 1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("midoc picks the point nearest the cell centre, ties to the lowest index") {
  // Level-1 cell 0 has centre (0.25, 0.25, 0.25).
  const std::vector<Point> pts{pt(0.05, 0.05, 0.05), pt(0.375, 0.25, 0.25), pt(0.125, 0.25, 0.25)};
  const auto r = midoc_order(pts, unit_cube(), 1);
  CHECK(r.ordering.order.front() == 1);
  CHECK(r.ppl.counts == std::vector<std::uint64_t>{1});
  CHECK(r.ordering.order == std::vector<std::uint32_t>{1, 0, 2});
}

TEST_CASE("midoc counts equal occupancy minus cells already holding a pick") {
  Rng rng(77);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<Point> pts = trial % 2 == 0 ? dense_plane(rng, 50 + rng.index(3000))
                                            : test::random_points(rng, 1 + rng.index(800), {0, 0, 0}, {1, 1, 1});
    const int levels = 5;
    const auto r = midoc_order(pts, unit_cube(), levels);
    const auto occ = ppl_occupancy(pts, unit_cube(), levels);

    // Brute-force set arithmetic: picks so far are the ordering prefix.
    std::size_t begin = 0;
    for (int level = 1; level <= levels; ++level) {
      std::set<std::uint64_t> consumed;
      for (std::size_t i = 0; i < begin; ++i) consumed.insert(morton_code(pts[r.ordering.order[i]].position(), unit_cube(), level));
      const auto expected = occ.counts[level - 1] - consumed.size();
      CHECK(r.ppl.counts[level - 1] == expected);
      CHECK(r.ppl.counts[level - 1] <= occ.counts[level - 1]);
      begin = r.ordering.level_end[level - 1];
    }
    CHECK(r.ppl.counts[0] == occ.counts[0]);
  }
}

TEST_CASE("midoc ordering is a permutation with consistent level boundaries") {
  Rng rng(5150);
  for (int trial = 0; trial < 40; ++trial) {
    const auto pts = test::random_points(rng, 1 + rng.index(1000), {0, 0, 0}, {1, 1, 1});
    const auto r = midoc_order(pts, unit_cube(), 4);
    std::vector<std::uint32_t> sorted = r.ordering.order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::uint32_t> iota(pts.size());
    std::iota(iota.begin(), iota.end(), 0U);
    CHECK(sorted == iota);
    REQUIRE(r.ordering.level_end.size() == 4);
    std::uint64_t cumulative = 0;
    for (std::size_t l = 0; l < 4; ++l) {
      cumulative += r.ppl.counts[l];
      CHECK(r.ordering.level_end[l] == cumulative);
    }
    // Remaining points follow in input order.
    CHECK(std::is_sorted(r.ordering.order.begin() + static_cast<std::ptrdiff_t>(cumulative), r.ordering.order.end()));
    // No two picks share a cell at their own level.
    std::size_t begin = 0;
    for (int level = 1; level <= 4; ++level) {
      std::set<std::uint64_t> cells;
      for (std::size_t i = begin; i < r.ordering.level_end[level - 1]; ++i) {
        CHECK(cells.insert(morton_code(pts[r.ordering.order[i]].position(), unit_cube(), level)).second);
      }
      begin = r.ordering.level_end[level - 1];
    }
  }
}

TEST_CASE("oracle basics") {
  const std::vector<Point> one{pt(0.1, 0.2, 0.3)};
  CHECK(synth::oracle_ppl(one, unit_cube(), 5) == std::vector<std::uint64_t>{1, 1, 1, 1, 1});
  std::vector<Point> lattice;
  const int side = 8;
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      for (int k = 0; k < side; ++k) lattice.push_back(pt((i + 0.5) / side, (j + 0.5) / side, (k + 0.5) / side));
    }
  }
  CHECK(synth::oracle_ppl(lattice, unit_cube(), 3).back() == 512);
  CHECK_THROWS_AS(synth::oracle_ppl(one, unit_cube(), 9), UsageError);
}
