#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "pcdim/point.hpp"

using namespace pcdim;
using pcdim::test::TempDir;

TEST_CASE("rng is deterministic and streams differ") {
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(9, 3) == derive_seed(9, 3));
}

TEST_CASE("rng uniform and index stay in range") {
  Rng rng(7);
  double sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    CHECK(rng.index(5) < 5);
  }
  CHECK(sum / 10000.0 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("rng normal has unit variance") {
  Rng rng(11);
  double s = 0.0;
  double s2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    s2 += v * v;
  }
  CHECK(std::abs(s / n) < 0.03);
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("shuffle is a permutation") {
  Rng rng(3);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  rng.shuffle(v.begin(), v.end());
  std::set<int> seen(v.begin(), v.end());
  CHECK(seen.size() == 50);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 49);
}

TEST_CASE("parallel_for visits every index once for any worker count") {
  for (std::size_t workers : {1U, 2U, 3U, 8U}) {
    std::vector<std::atomic<int>> hits(37);
    parallel_for(hits.size(), workers, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  parallel_for(0, 4, [](std::size_t) { FAIL("called on empty range"); });
}

TEST_CASE("parallel_for rethrows worker exceptions") {
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                    if (i == 7) throw DataError("boom");
                  }),
                  DataError);
}

TEST_CASE("default_workers reads the environment") {
  ::setenv("PCDIM_WORKERS", "3", 1);
  CHECK(default_workers() == 3);
  ::setenv("PCDIM_WORKERS", "junk", 1);
  CHECK(default_workers() == 1);
  ::unsetenv("PCDIM_WORKERS");
  CHECK(default_workers() == 1);
}

TEST_CASE("csv with all attributes in any column order") {
  std::istringstream in("class,z,y,x,intensity,num_echo\n3,1.5,2,1,10.5,2\n4,0,0,0,1,1\n");
  const auto cloud = read_points_csv(in);
  REQUIRE(cloud.points.size() == 2);
  CHECK(cloud.schema.has_class);
  CHECK(cloud.schema.has_intensity);
  CHECK(cloud.schema.has_num_echo);
  CHECK(cloud.points[0].x == 1.0);
  CHECK(cloud.points[0].y == 2.0);
  CHECK(cloud.points[0].z == 1.5);
  CHECK(cloud.points[0].class_label == 3);
  CHECK(cloud.points[0].num_echo == 2);
  CHECK(cloud.points[0].intensity == doctest::Approx(10.5));
}

TEST_CASE("csv xyz only keeps defaults") {
  std::istringstream in("x,y,z\n1,2,3\n");
  const auto cloud = read_points_csv(in);
  CHECK_FALSE(cloud.schema.has_class);
  CHECK_FALSE(cloud.schema.has_intensity);
  CHECK(cloud.points[0].num_echo == 1);
  CHECK(cloud.points[0].class_label == kNoClass);
}

TEST_CASE("csv accepts column aliases and ignores unknown columns") {
  std::istringstream in("X,Y,Z,number_of_echo,classification,gps_time\n1,2,3,2,5,99.5\n");
  const auto cloud = read_points_csv(in);
  CHECK(cloud.schema.has_num_echo);
  CHECK(cloud.schema.has_class);
  CHECK(cloud.points[0].num_echo == 2);
  CHECK(cloud.points[0].class_label == 5);
}

TEST_CASE("csv errors carry the line number") {
  auto message = [](const std::string& text) {
    std::istringstream in(text);
    try {
      read_points_csv(in);
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("x,y,z\n1,2,3\n1,abc,3\n").find("line 3") != std::string::npos);
  CHECK(message("x,y,z\n1,2\n").find("line 2") != std::string::npos);
  CHECK(message("x,y,z,num_echo\n1,2,3,0\n").find("line 2") != std::string::npos);
  CHECK(message("x,y,z\n1,nan,3\n").find("line 2") != std::string::npos);
  CHECK(message("x,y\n1,2\n").find("line 1") != std::string::npos);
  CHECK(message("x,y,z\n").find("no points") != std::string::npos);
  CHECK(message("").find("no header") != std::string::npos);
}

TEST_CASE("ascii ply is read") {
  std::istringstream in(
      "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\nproperty float x\nproperty float y\n"
      "property float z\nproperty uchar intensity\nproperty int class\nend_header\n0 1 2 7 1\n3 4 5 8 2\n");
  const auto cloud = read_points_ply(in);
  REQUIRE(cloud.points.size() == 2);
  CHECK(cloud.points[1].x == 3.0);
  CHECK(cloud.points[1].class_label == 2);
  CHECK(cloud.schema.has_intensity);
}

TEST_CASE("binary ply and truncated ply are rejected") {
  std::istringstream bin("ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n");
  CHECK_THROWS_AS(read_points_ply(bin), DataError);
  std::istringstream truncated(
      "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
      "end_header\n0 0 0\n");
  CHECK_THROWS_AS(read_points_ply(truncated), DataError);
}

TEST_CASE("missing input file is an io error naming the path") {
  try {
    read_points("/nonexistent/dir/points.csv");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/dir/points.csv") != std::string::npos);
  }
}

TEST_CASE("csv write and read round trip exactly") {
  TempDir dir("io");
  PointCloud cloud;
  cloud.schema = {true, true, true};
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    Point p = test::pt(rng.uniform(-100, 100), rng.uniform(), rng.normal(), static_cast<std::int32_t>(i % 3));
    p.intensity = static_cast<float>(rng.uniform(0, 255));
    p.num_echo = 1 + static_cast<std::uint32_t>(rng.index(4));
    cloud.points.push_back(p);
  }
  {
    std::ofstream out(dir / "c.csv");
    write_points_csv(out, cloud);
  }
  const auto back = read_points(dir / "c.csv");
  CHECK(back.schema == cloud.schema);
  REQUIRE(back.points.size() == cloud.points.size());
  for (std::size_t i = 0; i < back.points.size(); ++i) {
    CHECK(back.points[i].x == cloud.points[i].x);
    CHECK(back.points[i].y == cloud.points[i].y);
    CHECK(back.points[i].z == cloud.points[i].z);
    CHECK(back.points[i].intensity == cloud.points[i].intensity);
    CHECK(back.points[i].num_echo == cloud.points[i].num_echo);
    CHECK(back.points[i].class_label == cloud.points[i].class_label);
  }
}
