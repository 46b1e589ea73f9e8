#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pcdim/common.hpp"
#include "pcdim/point.hpp"

namespace pcdim {

enum class GridMode { kCubic, kColumnar };

struct GridSpec {
  Vec3 cell_size{1.0, 1.0, 1.0};
  Vec3 origin{};
  GridMode mode = GridMode::kCubic;

  static GridSpec cubic(double edge, Vec3 origin = {}) { return {{edge, edge, edge}, origin, GridMode::kCubic}; }
  static GridSpec columnar(double edge, Vec3 origin = {}) {
    return {{edge, edge, edge}, origin, GridMode::kColumnar};
  }

  // Throws UsageError on non-positive edges or unequal cubic edges.
  void validate() const;
};

struct GridIndex {
  std::int64_t i = 0;
  std::int64_t j = 0;
  std::int64_t k = 0;

  friend auto operator<=>(const GridIndex&, const GridIndex&) = default;
};

struct GridIndexHash {
  std::size_t operator()(const GridIndex& g) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(g.i) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(g.j) + 0x7f4a7c159e3779b9ULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(g.k) + 0x94d049bb133111ebULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

// Half-open cell assignment: floor((c - origin) / edge). k is 0 in columnar mode.
GridIndex cell_of(const GridSpec& grid, Vec3 p);

struct AttributeStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;

  friend bool operator==(const AttributeStats&, const AttributeStats&) = default;
};

struct PatchStats {
  std::uint64_t count = 0;
  AttributeStats z;
  AttributeStats intensity;
  AttributeStats num_echo;
  Box3 bbox;
  // Mean of (z - reference_height).
  double mean_altitude = 0.0;

  friend bool operator==(const PatchStats&, const PatchStats&) = default;
};

PatchStats compute_stats(std::span<const Point> points, double reference_height);

using PatchId = std::uint64_t;

struct Patch {
  PatchId id = 0;
  GridIndex index;
  std::vector<Point> points;
  PatchStats stats;
  std::optional<std::int32_t> dominant_class;
  // Fraction of points carrying dominant_class; 1 for unlabeled data.
  double mix = 1.0;
};

// Most frequent label (ties to the smallest id) and its share of the points.
std::pair<std::optional<std::int32_t>, double> dominant_class_of(std::span<const Point> points);

// Attribute predicate over cached patch statistics. Supported names:
// z (mean z), altitude (mean z minus reference height), intensity, num_echo
// (means) and count.
struct AttributeRange {
  std::string name;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

// Parses "name:lo:hi"; empty bounds are open.
AttributeRange parse_attribute_range(const std::string& text);

struct Polygon2 {
  std::vector<std::array<double, 2>> vertices;
  double signed_area() const;
};

struct PatchFilter {
  std::optional<Box3> box;
  std::optional<Polygon2> polygon;
  std::vector<AttributeRange> attributes;
};

struct StoreInfo {
  GridSpec grid;
  AttributeSchema schema;
  double reference_height = 0.0;
};

class PatchStore {
 public:
  PatchStore() = default;

  // Partition `cloud` over `grid`. Throws DataError on an empty cloud.
  static PatchStore ingest(const PointCloud& cloud, const GridSpec& grid, double reference_height = 0.0);

  static PatchStore load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  const StoreInfo& info() const { return info_; }
  const GridSpec& grid() const { return info_.grid; }
  const AttributeSchema& schema() const { return info_.schema; }
  double reference_height() const { return info_.reference_height; }

  // Ordered by grid index; patch ids equal positions in this sequence.
  const std::vector<Patch>& patches() const { return patches_; }
  std::size_t size() const { return patches_.size(); }
  const Patch& patch(PatchId id) const;
  const Patch* find(const GridIndex& index) const;
  std::uint64_t point_count() const;

  // Cell bounds. In columnar mode z is unbounded.
  Box3 cell_box(const GridIndex& index) const;
  // Cube used to quantize a patch for octree descriptors. Cubic mode: the
  // grid cell. Columnar mode: the column cropped to the patch's z extent,
  // rounded outward to multiples of the z edge from the grid origin.
  Box3 descriptor_box(const Patch& patch) const;
  Vec3 cell_center(const GridIndex& index) const;

  std::vector<PatchId> query(const PatchFilter& filter) const;

  // Seed set dilated by per-axis distances between cell centers. In columnar
  // mode the z radius is ignored (all columns share one layer).
  std::vector<PatchId> neighbors(std::span<const PatchId> seeds, double radius_xy, double radius_z) const;

 private:
  void rebuild_index();

  StoreInfo info_;
  std::vector<Patch> patches_;
  std::unordered_map<GridIndex, PatchId, GridIndexHash> by_index_;
};

}  // namespace pcdim
