#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcdim/octree.hpp"
#include "pcdim/patch_store.hpp"

namespace pcdim {

enum class FeatureProfile { kParis, kVosges, kCustom };

FeatureProfile parse_feature_profile(const std::string& name);
std::string to_string(FeatureProfile profile);

// Every feature the extractor knows, in canonical column order.
//   ppl_norm_1..4       O_L / 8^L
//   mean_intensity      needs the intensity attribute
//   mean_num_echo       needs the num_echo attribute
//   mean_z
//   mean_altitude       mean z relative to the store reference height
//   bbox_area_2d        tight xy bounding rectangle, m^2
//   patch_height        bbox z extent, m
//   footprint_area      union of point disks of a given diameter, m^2
const std::vector<std::string>& known_features();

struct FeatureOptions {
  FeatureProfile profile = FeatureProfile::kParis;
  // Used by the custom profile; empty means every known feature except
  // footprint_area.
  std::vector<std::string> custom;
  double footprint_diameter = 0.05;
};

// Column names for a profile, validated against the store schema. Throws
// DataError when the profile needs an attribute the schema does not carry.
std::vector<std::string> feature_names(const FeatureOptions& options, const AttributeSchema& schema);

struct FeatureVector {
  FeatureProfile profile = FeatureProfile::kParis;
  std::vector<std::string> names;
  std::vector<double> values;

  std::optional<double> get(const std::string& name) const;
};

// Altitude comes from the patch's cached stats, which already hold the store
// reference height.
FeatureVector extract_features(const Patch& patch, const PplVector& ppl, const FeatureOptions& options,
                               const AttributeSchema& schema);

// Area covered by disks of `diameter` centered on the xy positions, estimated
// on a raster of diameter/2 cells (a cell counts when its center is covered).
double footprint_area(std::span<const Point> points, double diameter);

}  // namespace pcdim
