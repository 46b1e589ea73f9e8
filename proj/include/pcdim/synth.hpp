#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcdim/octree.hpp"
#include "pcdim/point.hpp"

namespace pcdim::synth {

enum class PrimitiveKind { kLine, kPlane, kBox, kTree };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kLine;
  // line: a -> b. plane: corner a, edge vectors u and v. box: a = min, b = max.
  // tree: a = crown center, b = per-axis crown sigma.
  Vec3 a;
  Vec3 b;
  Vec3 u;
  Vec3 v;
  // Points per m, m^2 or m^3; for trees, points per metre of branch.
  double density = 1000.0;
  // Tree crowns: branch count and branch length.
  int segments = 20;
  double segment_length = 0.3;
  // Negative means "use the scene default".
  double noise = -1.0;
  std::int32_t label = kNoClass;
  double intensity_mean = 50.0;
  double intensity_sigma = 5.0;
  std::uint32_t echo_min = 1;
  std::uint32_t echo_max = 1;
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  double noise = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

SceneSpec scene_from_json(const nlohmann::json& j);
nlohmann::json scene_to_json(const SceneSpec& spec);

Primitive line(Vec3 from, Vec3 to, double density, std::int32_t label = kNoClass);
Primitive plane(Vec3 corner, Vec3 u, Vec3 v, double density, std::int32_t label = kNoClass);
Primitive box(Vec3 lo, Vec3 hi, double density, std::int32_t label = kNoClass);
Primitive tree(Vec3 center, Vec3 sigma, int segments, double segment_length, double density,
               std::int32_t label = kNoClass);

// Deterministic in spec.seed; each primitive draws from its own stream.
PointCloud generate(const SceneSpec& spec);
std::vector<Point> sample(const Primitive& primitive, double default_noise, std::uint64_t seed);

// Dense voxel-grid occupancy: allocates a 2^L-cubed boolean grid per level.
// Levels above 8 are refused.
std::vector<std::uint64_t> oracle_ppl(std::span<const Point> points, const Box3& cube, int max_level);

}  // namespace pcdim::synth
