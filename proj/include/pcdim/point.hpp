#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "pcdim/common.hpp"

namespace pcdim {

inline constexpr std::int32_t kNoClass = -1;

// One LiDAR return. Attributes that the source file does not carry keep their
// defaults; AttributeSchema records which ones are real.
struct Point {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  float intensity = 0.0F;
  std::uint32_t num_echo = 1;
  std::int32_t class_label = kNoClass;

  Vec3 position() const { return {x, y, z}; }
  bool labeled() const { return class_label != kNoClass; }
};

struct AttributeSchema {
  bool has_intensity = false;
  bool has_num_echo = false;
  bool has_class = false;

  friend bool operator==(const AttributeSchema&, const AttributeSchema&) = default;
};

struct PointCloud {
  AttributeSchema schema;
  std::vector<Point> points;
};

// Throws DataError if a coordinate is not finite or num_echo is zero.
void validate_point(const Point& p);

// CSV with a header naming x,y,z and optionally intensity, num_echo, class
// (any column order). Errors carry the 1-based line number.
PointCloud read_points_csv(std::istream& in);
// ASCII PLY with a vertex element carrying the same property names.
PointCloud read_points_ply(std::istream& in);
// Dispatch on extension (.csv / .ply).
PointCloud read_points(const std::filesystem::path& path);

void write_points_csv(std::ostream& out, const PointCloud& cloud);

}  // namespace pcdim
