#include "pcdim/features.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <fmt/format.h>

namespace pcdim {
namespace {

const std::vector<std::string> kParisFeatures = {
    "mean_altitude", "bbox_area_2d", "patch_height",   "ppl_norm_1",   "ppl_norm_2",
    "ppl_norm_3",    "ppl_norm_4",   "mean_intensity", "mean_num_echo"};

const std::vector<std::string> kVosgesFeatures = {"ppl_norm_1",     "ppl_norm_2",    "ppl_norm_3", "ppl_norm_4",
                                                  "mean_intensity", "mean_num_echo", "mean_z"};

int ppl_level_of(const std::string& name) {
  if (name.rfind("ppl_norm_", 0) != 0) return 0;
  return std::stoi(name.substr(9));
}

}  // namespace

FeatureProfile parse_feature_profile(const std::string& name) {
  if (name == "paris" || name == "paris-like") return FeatureProfile::kParis;
  if (name == "vosges" || name == "vosges-like") return FeatureProfile::kVosges;
  if (name == "custom") return FeatureProfile::kCustom;
  throw UsageError(fmt::format("unknown feature profile '{}' (expected paris, vosges or custom)", name));
}

std::string to_string(FeatureProfile profile) {
  switch (profile) {
    case FeatureProfile::kParis: return "paris";
    case FeatureProfile::kVosges: return "vosges";
    case FeatureProfile::kCustom: return "custom";
  }
  return "custom";
}

const std::vector<std::string>& known_features() {
  static const std::vector<std::string> names = {
      "ppl_norm_1", "ppl_norm_2",  "ppl_norm_3",    "ppl_norm_4",   "mean_intensity", "mean_num_echo",
      "mean_z",     "mean_altitude", "bbox_area_2d", "patch_height", "footprint_area"};
  return names;
}

std::vector<std::string> feature_names(const FeatureOptions& options, const AttributeSchema& schema) {
  std::vector<std::string> names;
  switch (options.profile) {
    case FeatureProfile::kParis: names = kParisFeatures; break;
    case FeatureProfile::kVosges: names = kVosgesFeatures; break;
    case FeatureProfile::kCustom:
      if (options.custom.empty()) {
        for (const auto& n : known_features()) {
          if (n == "footprint_area") continue;
          if (n == "mean_intensity" && !schema.has_intensity) continue;
          if (n == "mean_num_echo" && !schema.has_num_echo) continue;
          names.push_back(n);
        }
      } else {
        names = options.custom;
      }
      break;
  }
  const auto& known = known_features();
  for (const auto& n : names) {
    if (std::find(known.begin(), known.end(), n) == known.end()) {
      throw UsageError(fmt::format("unknown feature '{}'", n));
    }
    if (n == "mean_intensity" && !schema.has_intensity) {
      throw DataError(fmt::format("profile '{}' needs the intensity attribute, which the store does not carry",
                                  to_string(options.profile)));
    }
    if (n == "mean_num_echo" && !schema.has_num_echo) {
      throw DataError(fmt::format("profile '{}' needs the num_echo attribute, which the store does not carry",
                                  to_string(options.profile)));
    }
  }
  if (options.profile == FeatureProfile::kCustom) {
    auto sorted = names;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw UsageError("custom feature list has duplicates");
    }
  }
  return names;
}

std::optional<double> FeatureVector::get(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return values[i];
  }
  return std::nullopt;
}

FeatureVector extract_features(const Patch& patch, const PplVector& ppl, const FeatureOptions& options,
                               const AttributeSchema& schema) {
  FeatureVector fv;
  fv.profile = options.profile;
  fv.names = feature_names(options, schema);
  fv.values.reserve(fv.names.size());
  const auto& st = patch.stats;
  for (const auto& name : fv.names) {
    if (const int level = ppl_level_of(name); level > 0) {
      if (static_cast<std::size_t>(level) > ppl.levels()) {
        throw DataError(fmt::format("feature {} needs a ppl vector with at least {} levels, got {}", name, level,
                                    ppl.levels()));
      }
      fv.values.push_back(static_cast<double>(ppl.at_level(static_cast<std::size_t>(level))) /
                          std::ldexp(1.0, 3 * level));
    } else if (name == "mean_intensity") {
      fv.values.push_back(st.intensity.mean);
    } else if (name == "mean_num_echo") {
      fv.values.push_back(st.num_echo.mean);
    } else if (name == "mean_z") {
      fv.values.push_back(st.z.mean);
    } else if (name == "mean_altitude") {
      fv.values.push_back(st.mean_altitude);
    } else if (name == "bbox_area_2d") {
      const Vec3 e = st.bbox.extent();
      fv.values.push_back(e.x * e.y);
    } else if (name == "patch_height") {
      fv.values.push_back(st.bbox.extent().z);
    } else if (name == "footprint_area") {
      fv.values.push_back(footprint_area(patch.points, options.footprint_diameter));
    }
  }
  return fv;
}

double footprint_area(std::span<const Point> points, double diameter) {
  if (!(diameter > 0.0)) throw UsageError("footprint diameter must be positive");
  const double res = diameter / 2.0;
  const double radius = diameter / 2.0;
  const double r2 = radius * radius;
  struct KeyHash {
    std::size_t operator()(const std::pair<std::int64_t, std::int64_t>& k) const noexcept {
      return std::hash<std::int64_t>()(k.first * 0x9e3779b97f4a7c15LL ^ k.second);
    }
  };
  std::unordered_set<std::pair<std::int64_t, std::int64_t>, KeyHash> covered;
  for (const auto& p : points) {
    const auto i0 = static_cast<std::int64_t>(std::floor((p.x - radius) / res));
    const auto i1 = static_cast<std::int64_t>(std::floor((p.x + radius) / res));
    const auto j0 = static_cast<std::int64_t>(std::floor((p.y - radius) / res));
    const auto j1 = static_cast<std::int64_t>(std::floor((p.y + radius) / res));
    for (auto i = i0; i <= i1; ++i) {
      const double cx = (static_cast<double>(i) + 0.5) * res - p.x;
      for (auto j = j0; j <= j1; ++j) {
        const double cy = (static_cast<double>(j) + 0.5) * res - p.y;
        if (cx * cx + cy * cy <= r2) covered.emplace(i, j);
      }
    }
  }
  return static_cast<double>(covered.size()) * res * res;
}

}  // namespace pcdim
