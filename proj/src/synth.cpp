#include "pcdim/synth.hpp"

#include <cmath>

#include <fmt/format.h>

namespace pcdim::synth {
namespace {

using nlohmann::json;

Vec3 vec_from(const json& j, const char* key) {
  if (!j.contains(key)) throw UsageError(fmt::format("scene primitive is missing '{}'", key));
  const auto& a = j.at(key);
  if (a.is_number()) {
    const double s = a.get<double>();
    return {s, s, s};
  }
  if (!a.is_array() || a.size() != 3) throw UsageError(fmt::format("'{}' must be a 3-vector", key));
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

json vec_to(Vec3 v) { return json::array({v.x, v.y, v.z}); }

std::size_t count_for(double measure, double density) {
  return static_cast<std::size_t>(std::llround(measure * density));
}

Vec3 cross(Vec3 a, Vec3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }

Point make_point(Vec3 p, const Primitive& prim, double noise, Rng& rng) {
  Point out;
  out.x = p.x + (noise > 0.0 ? noise * rng.normal() : 0.0);
  out.y = p.y + (noise > 0.0 ? noise * rng.normal() : 0.0);
  out.z = p.z + (noise > 0.0 ? noise * rng.normal() : 0.0);
  out.intensity = static_cast<float>(prim.intensity_mean + prim.intensity_sigma * rng.normal());
  const std::uint32_t span = prim.echo_max - prim.echo_min + 1;
  out.num_echo = prim.echo_min + static_cast<std::uint32_t>(rng.index(span));
  out.class_label = prim.label;
  return out;
}

const char* kind_name(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::kLine: return "line";
    case PrimitiveKind::kPlane: return "plane";
    case PrimitiveKind::kBox: return "box";
    case PrimitiveKind::kTree: return "tree";
  }
  return "line";
}

}  // namespace

void SceneSpec::validate() const {
  if (!(noise >= 0.0)) throw UsageError("scene noise sigma must be >= 0");
  for (const auto& p : primitives) {
    if (!(p.density > 0.0)) throw UsageError("primitive density must be > 0");
    if (p.kind == PrimitiveKind::kTree && (p.segments < 1 || !(p.segment_length > 0.0))) {
      throw UsageError("tree primitives need segments >= 1 and segment_length > 0");
    }
    if (p.echo_min < 1 || p.echo_max < p.echo_min) throw UsageError("echo range must satisfy 1 <= min <= max");
    if (!(p.intensity_sigma >= 0.0)) throw UsageError("intensity sigma must be >= 0");
  }
}

Primitive line(Vec3 from, Vec3 to, double density, std::int32_t label) {
  Primitive p;
  p.kind = PrimitiveKind::kLine;
  p.a = from;
  p.b = to;
  p.density = density;
  p.label = label;
  return p;
}

Primitive plane(Vec3 corner, Vec3 u, Vec3 v, double density, std::int32_t label) {
  Primitive p;
  p.kind = PrimitiveKind::kPlane;
  p.a = corner;
  p.u = u;
  p.v = v;
  p.density = density;
  p.label = label;
  return p;
}

Primitive box(Vec3 lo, Vec3 hi, double density, std::int32_t label) {
  Primitive p;
  p.kind = PrimitiveKind::kBox;
  p.a = lo;
  p.b = hi;
  p.density = density;
  p.label = label;
  return p;
}

Primitive tree(Vec3 center, Vec3 sigma, int segments, double segment_length, double density, std::int32_t label) {
  Primitive p;
  p.kind = PrimitiveKind::kTree;
  p.a = center;
  p.b = sigma;
  p.segments = segments;
  p.segment_length = segment_length;
  p.density = density;
  p.label = label;
  return p;
}

std::vector<Point> sample(const Primitive& prim, double default_noise, std::uint64_t seed) {
  Rng rng(seed);
  const double noise = prim.noise >= 0.0 ? prim.noise : default_noise;
  std::vector<Point> out;
  switch (prim.kind) {
    case PrimitiveKind::kLine: {
      const Vec3 d = prim.b - prim.a;
      const std::size_t n = count_for(norm(d), prim.density);
      out.reserve(n);
      for (std::size_t i = 0; i < n; ++i) out.push_back(make_point(prim.a + d * rng.uniform(), prim, noise, rng));
      break;
    }
    case PrimitiveKind::kPlane: {
      const std::size_t n = count_for(norm(cross(prim.u, prim.v)), prim.density);
      out.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double s = rng.uniform();
        const double t = rng.uniform();
        out.push_back(make_point(prim.a + prim.u * s + prim.v * t, prim, noise, rng));
      }
      break;
    }
    case PrimitiveKind::kBox: {
      const Vec3 e = prim.b - prim.a;
      const std::size_t n = count_for(std::abs(e.x * e.y * e.z), prim.density);
      out.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Vec3 p{prim.a.x + e.x * rng.uniform(), prim.a.y + e.y * rng.uniform(), prim.a.z + e.z * rng.uniform()};
        out.push_back(make_point(p, prim, noise, rng));
      }
      break;
    }
    case PrimitiveKind::kTree: {
      // Gaussian crown of short straight branches.
      const std::size_t per_branch = std::max<std::size_t>(1, count_for(prim.segment_length, prim.density));
      out.reserve(per_branch * static_cast<std::size_t>(prim.segments));
      for (int s = 0; s < prim.segments; ++s) {
        const Vec3 mid{prim.a.x + prim.b.x * rng.normal(), prim.a.y + prim.b.y * rng.normal(),
                       prim.a.z + prim.b.z * rng.normal()};
        Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
        const double len = norm(dir);
        dir = len > 0.0 ? dir * (1.0 / len) : Vec3{0.0, 0.0, 1.0};
        const Vec3 start = mid - dir * (0.5 * prim.segment_length);
        for (std::size_t i = 0; i < per_branch; ++i) {
          out.push_back(make_point(start + dir * (prim.segment_length * rng.uniform()), prim, noise, rng));
        }
      }
      break;
    }
  }
  return out;
}

PointCloud generate(const SceneSpec& spec) {
  spec.validate();
  PointCloud cloud;
  cloud.schema.has_intensity = true;
  cloud.schema.has_num_echo = true;
  for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
    const auto& prim = spec.primitives[i];
    if (prim.label != kNoClass) cloud.schema.has_class = true;
    auto pts = sample(prim, spec.noise, derive_seed(spec.seed, i));
    cloud.points.insert(cloud.points.end(), pts.begin(), pts.end());
  }
  if (cloud.schema.has_class) {
    for (const auto& p : cloud.points) {
      if (p.class_label == kNoClass) throw UsageError("either every primitive carries a label or none does");
    }
  }
  return cloud;
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec spec;
  try {
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.noise = j.value("noise", 0.0);
    for (const auto& pj : j.at("primitives")) {
      Primitive p;
      const auto type = pj.at("type").get<std::string>();
      if (type == "line") {
        p.kind = PrimitiveKind::kLine;
        p.a = vec_from(pj, "from");
        p.b = vec_from(pj, "to");
      } else if (type == "plane") {
        p.kind = PrimitiveKind::kPlane;
        p.a = vec_from(pj, "corner");
        p.u = vec_from(pj, "u");
        p.v = vec_from(pj, "v");
      } else if (type == "box") {
        p.kind = PrimitiveKind::kBox;
        p.a = vec_from(pj, "min");
        p.b = vec_from(pj, "max");
      } else if (type == "tree") {
        p.kind = PrimitiveKind::kTree;
        p.a = vec_from(pj, "center");
        p.b = vec_from(pj, "sigma");
        p.segments = pj.value("segments", 20);
        p.segment_length = pj.value("segment_length", 0.3);
      } else {
        throw UsageError(fmt::format("unknown primitive type '{}'", type));
      }
      p.density = pj.at("density").get<double>();
      p.noise = pj.value("noise", -1.0);
      p.label = pj.value("label", kNoClass);
      p.intensity_mean = pj.value("intensity_mean", 50.0);
      p.intensity_sigma = pj.value("intensity_sigma", 5.0);
      p.echo_min = pj.value("echo_min", 1U);
      p.echo_max = pj.value("echo_max", p.echo_min);
      spec.primitives.push_back(p);
    }
  } catch (const json::exception& e) {
    throw UsageError(fmt::format("invalid scene spec: {}", e.what()));
  }
  spec.validate();
  return spec;
}

json scene_to_json(const SceneSpec& spec) {
  json j;
  j["seed"] = spec.seed;
  j["noise"] = spec.noise;
  j["primitives"] = json::array();
  for (const auto& p : spec.primitives) {
    json pj;
    pj["type"] = kind_name(p.kind);
    switch (p.kind) {
      case PrimitiveKind::kLine:
        pj["from"] = vec_to(p.a);
        pj["to"] = vec_to(p.b);
        break;
      case PrimitiveKind::kPlane:
        pj["corner"] = vec_to(p.a);
        pj["u"] = vec_to(p.u);
        pj["v"] = vec_to(p.v);
        break;
      case PrimitiveKind::kBox:
        pj["min"] = vec_to(p.a);
        pj["max"] = vec_to(p.b);
        break;
      case PrimitiveKind::kTree:
        pj["center"] = vec_to(p.a);
        pj["sigma"] = vec_to(p.b);
        pj["segments"] = p.segments;
        pj["segment_length"] = p.segment_length;
        break;
    }
    pj["density"] = p.density;
    pj["noise"] = p.noise;
    pj["label"] = p.label;
    pj["intensity_mean"] = p.intensity_mean;
    pj["intensity_sigma"] = p.intensity_sigma;
    pj["echo_min"] = p.echo_min;
    pj["echo_max"] = p.echo_max;
    j["primitives"].push_back(pj);
  }
  return j;
}

std::vector<std::uint64_t> oracle_ppl(std::span<const Point> points, const Box3& cube, int max_level) {
  if (max_level < 1 || max_level > 8) throw UsageError("oracle supports levels 1..8");
  std::vector<std::uint64_t> counts;
  for (int level = 1; level <= max_level; ++level) {
    const std::size_t side = std::size_t{1} << level;
    std::vector<char> grid(side * side * side, 0);
    std::uint64_t occupied = 0;
    for (const auto& p : points) {
      std::size_t idx[3];
      for (std::size_t a = 0; a < 3; ++a) {
        const double cell = (cube.hi[a] - cube.lo[a]) / static_cast<double>(side);
        const double f = std::floor((p.position()[a] - cube.lo[a]) / cell);
        idx[a] = f < 0.0 ? 0 : (f >= static_cast<double>(side) ? side - 1 : static_cast<std::size_t>(f));
      }
      char& slot = grid[(idx[2] * side + idx[1]) * side + idx[0]];
      if (!slot) {
        slot = 1;
        ++occupied;
      }
    }
    counts.push_back(occupied);
  }
  return counts;
}

}  // namespace pcdim::synth
