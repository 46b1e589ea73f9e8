#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcdim/octree.hpp"
#include "pcdim/patch_store.hpp"
#include "pcdim/point.hpp"

namespace pcdim {

// Per-level dimensionality read off a ppl vector.
//   static:     log2(O_i) / i
//   difference: log2(O_i / O_{i-1}), with O_0 = 1
struct DimProfile {
  std::vector<double> lods;
  std::vector<double> lodd;
  // Set when built from MidOc counts, which undercount deeper levels.
  bool midoc_bias = false;

  struct Sample {
    double level;
    double value;
  };
  // Static then difference samples, abscissa = level; duplicates kept.
  std::vector<Sample> samples() const;
};

// Throws DataError if any count is zero.
DimProfile dim_profile(const PplVector& ppl);

enum class FusionMethod { kRansac, kMedian };

struct DimEstimate {
  double value = 0.0;
  // RANSAC: |slope| (0 is ideal). Median: inlier fraction.
  double confidence = 0.0;
  FusionMethod method = FusionMethod::kRansac;
  // The raw fitted value fell outside [0, 3] and was clamped.
  bool clamped = false;
};

struct RansacParams {
  int iterations = 100;
  double inlier_tol = 0.15;
  std::uint64_t seed = 0;
};

// Robust line fit over (level, value) samples; value read at the middle of
// the abscissa range. When every sample pair fits in the iteration budget the
// pairs are enumerated exhaustively instead of drawn at random.
DimEstimate fit_ransac(std::span<const DimProfile::Sample> samples, const RansacParams& params);
DimEstimate dim_lod_ransac(const DimProfile& profile, const RansacParams& params = {});

// Median/MAD filter then inlier mean.
DimEstimate fuse_median(std::span<const double> values, double k = 2.5);
DimEstimate dim_lod_median(const DimProfile& profile, double k = 2.5);

// Structure-tensor dimensionality: probabilities for 1D/2D/3D from the
// square roots of the covariance eigenvalues.
struct CovDim {
  std::array<double, 3> p_dim{};
  double value = 0.0;
  // Eigenvalues, descending.
  std::array<double, 3> eigenvalues{};
};

CovDim cov_dim_from_eigenvalues(std::array<double, 3> eigenvalues);
// Throws DataError for fewer than 3 points or coincident points.
CovDim dim_cov(std::span<const Point> points);

struct AgreementRow {
  PatchId patch_id = 0;
  double dim_lod = 0.0;
  double dim_cov = 0.0;
  std::optional<std::uint64_t> point_count;
};

struct AgreementReport {
  double threshold = 0.5;
  std::size_t patch_total = 0;
  std::size_t patch_agreeing = 0;
  double patch_fraction = 0.0;
  // Present only when every row carries a point count.
  std::optional<double> point_fraction;
  // Over the agreeing subset; absent when undefined.
  std::optional<double> pearson;
  std::optional<double> spearman;
  // |difference| descending.
  std::vector<std::pair<PatchId, double>> disagreeing;
};

AgreementReport agreement_report(std::span<const AgreementRow> rows, double threshold = 0.5);

double pearson_correlation(std::span<const double> a, std::span<const double> b);

}  // namespace pcdim
