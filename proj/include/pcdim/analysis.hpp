#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "pcdim/forest.hpp"
#include "pcdim/patch_store.hpp"

namespace pcdim {

struct AffinityGraph {
  std::vector<std::int32_t> classes;
  // (C + C^T) / 2 with a zero diagonal.
  std::vector<std::vector<double>> affinity;
  std::vector<std::array<double, 2>> layout;
  // Laplacian eigenvalues, ascending.
  std::vector<double> eigenvalues;
  // Graph has several connected components; each was laid out on its own.
  bool disconnected = false;
  // The eigenvalues picked for the layout are repeated, so the axes are not
  // unique.
  bool degenerate = false;
};

// Laplacian eigenmap of the symmetrized confusion matrix: x is the eigenvector
// of the 2nd smallest eigenvalue of D - A, y the eigenvector of the 3rd scaled
// by sqrt(lambda2 / lambda3). Each is signed so its largest-magnitude entry is
// positive. Throws UsageError for a
// non-square matrix or fewer than 3 classes.
AffinityGraph spectral_layout(const std::vector<std::vector<double>>& confusion,
                              std::vector<std::int32_t> classes = {});

// Truth keyed by row id (patch id).
using TruthMap = std::map<std::uint64_t, std::int32_t>;

struct CurvePoint {
  double threshold = 0.0;
  // Precision among retained predictions; absent when nothing is retained or
  // the retained predictions have no truth.
  std::optional<double> precision;
  double retained_fraction = 0.0;
  std::size_t retained = 0;
};

// Thresholds sweep the distinct confidences of predictions of `label`,
// ascending. Empty when the class is never predicted.
std::vector<CurvePoint> precision_confidence_curve(std::span<const Prediction> predictions,
                                                   const TruthMap& truth, std::int32_t label);

struct BoostResult {
  std::int32_t label = 0;
  double min_confidence = 0.0;
  double radius_xy = 0.0;
  double radius_z = 0.0;
  std::size_t before_count = 0;
  std::size_t after_count = 0;
  // after_count / before_count for precision boosting, after_count /
  // total patches for recall boosting.
  double retained_fraction = 0.0;
  std::optional<double> precision_before;
  std::optional<double> precision_after;
  std::optional<double> recall_before;
  std::optional<double> recall_after;
  std::vector<std::uint64_t> selected;
};

// Keep predictions of `label` with confidence >= min_confidence. Metrics are
// filled only when `truth` is given.
BoostResult precision_boost(std::span<const Prediction> predictions, std::int32_t label, double min_confidence,
                            const TruthMap* truth = nullptr);

// Dilate the patches predicted as `label` by the given radii.
BoostResult recall_boost(const PatchStore& store, std::span<const Prediction> predictions, std::int32_t label,
                         double radius_xy, double radius_z, const TruthMap* truth = nullptr);

}  // namespace pcdim
