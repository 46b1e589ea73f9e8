#include "pcdim/dimensionality.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <fmt/format.h>

namespace pcdim {
namespace {

constexpr double kMaxDim = 3.0;

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (n % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

struct Line {
  double slope = 0.0;
  double intercept = 0.0;
};

Line least_squares(std::span<const DimProfile::Sample> s, std::span<const std::size_t> idx) {
  double mx = 0.0;
  double my = 0.0;
  for (const auto i : idx) {
    mx += s[i].level;
    my += s[i].value;
  }
  mx /= static_cast<double>(idx.size());
  my /= static_cast<double>(idx.size());
  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto i : idx) {
    sxx += (s[i].level - mx) * (s[i].level - mx);
    sxy += (s[i].level - mx) * (s[i].value - my);
  }
  const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
  return {slope, my - slope * mx};
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = r;
    i = j;
  }
  return ranks;
}

DimEstimate finish(double raw, double confidence, FusionMethod method) {
  DimEstimate e;
  e.method = method;
  e.confidence = confidence;
  e.clamped = raw < 0.0 || raw > kMaxDim;
  e.value = std::clamp(raw, 0.0, kMaxDim);
  return e;
}

}  // namespace

std::vector<DimProfile::Sample> DimProfile::samples() const {
  std::vector<Sample> out;
  out.reserve(lods.size() + lodd.size());
  for (std::size_t i = 0; i < lods.size(); ++i) out.push_back({static_cast<double>(i + 1), lods[i]});
  for (std::size_t i = 0; i < lodd.size(); ++i) out.push_back({static_cast<double>(i + 1), lodd[i]});
  return out;
}

DimProfile dim_profile(const PplVector& ppl) {
  if (ppl.counts.empty()) throw DataError("dimensionality profile needs at least one level");
  DimProfile profile;
  profile.midoc_bias = ppl.mode == PplMode::kMidOc;
  double previous = 1.0;
  for (std::size_t i = 0; i < ppl.counts.size(); ++i) {
    if (ppl.counts[i] == 0) {
      throw DataError(fmt::format("level {} has no occupied cell; dimensionality undefined", i + 1));
    }
    const double count = static_cast<double>(ppl.counts[i]);
    profile.lods.push_back(std::log2(count) / static_cast<double>(i + 1));
    profile.lodd.push_back(std::log2(count / previous));
    previous = count;
  }
  return profile;
}

DimEstimate fit_ransac(std::span<const DimProfile::Sample> samples, const RansacParams& params) {
  if (samples.size() < 2) throw DataError("RANSAC fusion needs at least two samples");
  if (params.iterations < 1) throw UsageError("RANSAC iterations must be >= 1");
  if (!(params.inlier_tol >= 0.0)) throw UsageError("RANSAC inlier tolerance must be >= 0");

  double x_min = samples[0].level;
  double x_max = samples[0].level;
  for (const auto& s : samples) {
    x_min = std::min(x_min, s.level);
    x_max = std::max(x_max, s.level);
  }
  if (x_min == x_max) throw DataError("RANSAC fusion needs samples at two distinct levels");

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      if (samples[i].level != samples[j].level) pairs.emplace_back(i, j);
    }
  }
  if (pairs.size() > static_cast<std::size_t>(params.iterations)) {
    Rng rng(params.seed);
    std::vector<std::pair<std::size_t, std::size_t>> drawn;
    drawn.reserve(static_cast<std::size_t>(params.iterations));
    for (int it = 0; it < params.iterations; ++it) drawn.push_back(pairs[rng.index(pairs.size())]);
    pairs = std::move(drawn);
  }

  std::vector<std::size_t> best_inliers;
  double best_residual = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> inliers;
  for (const auto& [i, j] : pairs) {
    const double slope = (samples[j].value - samples[i].value) / (samples[j].level - samples[i].level);
    const double intercept = samples[i].value - slope * samples[i].level;
    inliers.clear();
    double residual = 0.0;
    for (std::size_t n = 0; n < samples.size(); ++n) {
      const double r = std::abs(samples[n].value - (slope * samples[n].level + intercept));
      if (r <= params.inlier_tol) {
        inliers.push_back(n);
        residual += r;
      }
    }
    if (inliers.size() > best_inliers.size() ||
        (inliers.size() == best_inliers.size() && residual < best_residual)) {
      best_inliers = inliers;
      best_residual = residual;
    }
  }

  const Line fit = least_squares(samples, best_inliers);
  const double x_mid = 0.5 * (x_min + x_max);
  return finish(fit.slope * x_mid + fit.intercept, std::abs(fit.slope), FusionMethod::kRansac);
}

DimEstimate dim_lod_ransac(const DimProfile& profile, const RansacParams& params) {
  const auto samples = profile.samples();
  return fit_ransac(samples, params);
}

DimEstimate fuse_median(std::span<const double> values, double k) {
  if (values.empty()) throw DataError("median fusion needs at least one value");
  if (!(k >= 0.0)) throw UsageError("median fusion k must be >= 0");
  const double m = median_of({values.begin(), values.end()});
  std::vector<double> dev(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) dev[i] = std::abs(values[i] - m);
  const double mad = median_of(dev);
  // With mad == 0 this keeps exactly the values equal to the median.
  const double cut = k * mad;
  double sum = 0.0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (dev[i] <= cut) {
      sum += values[i];
      ++kept;
    }
  }
  return finish(sum / static_cast<double>(kept), static_cast<double>(kept) / static_cast<double>(values.size()),
                FusionMethod::kMedian);
}

DimEstimate dim_lod_median(const DimProfile& profile, double k) {
  std::vector<double> values;
  values.reserve(profile.lods.size() + profile.lodd.size());
  for (const auto& s : profile.samples()) values.push_back(s.value);
  return fuse_median(values, k);
}

CovDim cov_dim_from_eigenvalues(std::array<double, 3> ev) {
  std::sort(ev.begin(), ev.end(), std::greater<>());
  for (auto& l : ev) l = std::max(l, 0.0);
  const double s1 = std::sqrt(ev[0]);
  const double s2 = std::sqrt(ev[1]);
  const double s3 = std::sqrt(ev[2]);
  if (!(s1 > 0.0)) throw DataError("structure tensor is zero (coincident points); dimensionality undefined");
  CovDim out;
  out.eigenvalues = ev;
  out.p_dim = {(s1 - s2) / s1, (s2 - s3) / s1, s3 / s1};
  const double total = out.p_dim[0] + out.p_dim[1] + out.p_dim[2];
  for (auto& p : out.p_dim) p /= total;
  out.value = out.p_dim[0] + 2.0 * out.p_dim[1] + 3.0 * out.p_dim[2];
  return out;
}

CovDim dim_cov(std::span<const Point> points) {
  if (points.size() < 3) throw DataError("structure tensor needs at least 3 points");
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : points) mean += Eigen::Vector3d(p.x, p.y, p.z);
  mean /= static_cast<double>(points.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : points) {
    const Eigen::Vector3d d = Eigen::Vector3d(p.x, p.y, p.z) - mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(points.size());
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw DataError("structure tensor eigen decomposition failed");
  const auto& ev = solver.eigenvalues();
  return cov_dim_from_eigenvalues({ev[0], ev[1], ev[2]});
}

double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

AgreementReport agreement_report(std::span<const AgreementRow> rows, double threshold) {
  AgreementReport report;
  report.threshold = threshold;
  report.patch_total = rows.size();
  std::vector<double> lod;
  std::vector<double> cov;
  std::uint64_t points_total = 0;
  std::uint64_t points_agreeing = 0;
  bool have_counts = !rows.empty();
  for (const auto& r : rows) {
    const double diff = std::abs(r.dim_lod - r.dim_cov);
    const bool agrees = diff <= threshold;
    if (r.point_count) {
      points_total += *r.point_count;
      if (agrees) points_agreeing += *r.point_count;
    } else {
      have_counts = false;
    }
    if (agrees) {
      ++report.patch_agreeing;
      lod.push_back(r.dim_lod);
      cov.push_back(r.dim_cov);
    } else {
      report.disagreeing.emplace_back(r.patch_id, diff);
    }
  }
  report.patch_fraction =
      rows.empty() ? 0.0 : static_cast<double>(report.patch_agreeing) / static_cast<double>(rows.size());
  if (have_counts && points_total > 0) {
    report.point_fraction = static_cast<double>(points_agreeing) / static_cast<double>(points_total);
  }
  std::stable_sort(report.disagreeing.begin(), report.disagreeing.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  if (!lod.empty()) {
    const double r = pearson_correlation(lod, cov);
    if (std::isfinite(r)) {
      report.pearson = r;
      const auto ra = average_ranks(lod);
      const auto rb = average_ranks(cov);
      const double s = pearson_correlation(ra, rb);
      if (std::isfinite(s)) report.spearman = s;
    } else if (lod == cov) {
      // Identical arrays: perfect agreement by convention even when constant.
      report.pearson = 1.0;
      report.spearman = 1.0;
    }
  }
  return report;
}

}  // namespace pcdim
