#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "pcdim/common.hpp"
#include "pcdim/point.hpp"

namespace pcdim::test {

inline Point pt(double x, double y, double z, std::int32_t label = kNoClass) {
  Point p;
  p.x = x;
  p.y = y;
  p.z = z;
  p.class_label = label;
  return p;
}

inline PointCloud cloud_of(std::vector<Point> points, bool labeled = false) {
  PointCloud c;
  c.points = std::move(points);
  c.schema.has_class = labeled;
  return c;
}

inline std::vector<Point> random_points(Rng& rng, std::size_t n, Vec3 lo, Vec3 hi) {
  std::vector<Point> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(pt(rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), rng.uniform(lo.z, hi.z)));
  }
  return out;
}

inline Box3 unit_cube() { return Box3{{0, 0, 0}, {1, 1, 1}}; }

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("pcdim_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace pcdim::test
