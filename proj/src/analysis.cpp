#include "pcdim/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <fmt/format.h>

namespace pcdim {
namespace {

constexpr double kEigenTolerance = 1e-9;

void fix_sign(Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  }
  if (v[best] < 0.0) v = -v;
}

struct Layout {
  std::vector<std::array<double, 2>> coords;
  std::vector<double> eigenvalues;
  bool degenerate = false;
};

// Layout of a connected affinity matrix.
Layout laplacian_layout(const Eigen::MatrixXd& a) {
  const Eigen::Index n = a.rows();
  Layout out;
  out.coords.assign(static_cast<std::size_t>(n), {0.0, 0.0});
  if (n == 1) {
    out.eigenvalues = {0.0};
    return out;
  }
  Eigen::MatrixXd lap = -a;
  for (Eigen::Index i = 0; i < n; ++i) lap(i, i) = a.row(i).sum();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  if (solver.info() != Eigen::Success) throw DataError("Laplacian eigen decomposition failed");
  const auto& ev = solver.eigenvalues();
  out.eigenvalues.assign(ev.data(), ev.data() + ev.size());
  const double scale = std::max(1.0, std::abs(ev[n - 1]));
  Eigen::VectorXd x = solver.eigenvectors().col(1);
  fix_sign(x);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  if (n >= 3) {
    y = solver.eigenvectors().col(2);
    fix_sign(y);
    // Unit eigenvectors put every class of a 3-node graph at the same
    // distance; weighting by 1/sqrt(lambda) keeps strongly linked classes close.
    if (ev[2] > kEigenTolerance * scale) y *= std::sqrt(std::max(ev[1], 0.0) / ev[2]);
  }
  const auto close = [&](Eigen::Index i, Eigen::Index j) { return std::abs(ev[i] - ev[j]) <= kEigenTolerance * scale; };
  out.degenerate = (n >= 3 && close(1, 2)) || (n >= 4 && close(2, 3));
  for (Eigen::Index i = 0; i < n; ++i) out.coords[static_cast<std::size_t>(i)] = {x[i], y[i]};
  return out;
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

AffinityGraph spectral_layout(const std::vector<std::vector<double>>& confusion, std::vector<std::int32_t> classes) {
  const std::size_t k = confusion.size();
  if (k < 3) throw UsageError("spectral layout needs at least 3 classes");
  for (const auto& row : confusion) {
    if (row.size() != k) throw UsageError("confusion matrix must be square");
    for (const double v : row) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw UsageError("confusion matrix entries must be finite and >= 0");
    }
  }
  if (classes.empty()) {
    classes.resize(k);
    std::iota(classes.begin(), classes.end(), 0);
  }
  if (classes.size() != k) throw UsageError("class list does not match the confusion matrix size");

  AffinityGraph g;
  g.classes = std::move(classes);
  g.affinity.assign(k, std::vector<double>(k, 0.0));
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      const double v = 0.5 * (confusion[i][j] + confusion[j][i]);
      g.affinity[i][j] = v;
      a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }

  // Connected components over positive affinity.
  std::vector<int> component(k, -1);
  int n_components = 0;
  for (std::size_t s = 0; s < k; ++s) {
    if (component[s] >= 0) continue;
    std::vector<std::size_t> stack{s};
    component[s] = n_components;
    while (!stack.empty()) {
      const auto u = stack.back();
      stack.pop_back();
      for (std::size_t v = 0; v < k; ++v) {
        if (component[v] < 0 && g.affinity[u][v] > 0.0) {
          component[v] = n_components;
          stack.push_back(v);
        }
      }
    }
    ++n_components;
  }

  if (n_components == 1) {
    auto layout = laplacian_layout(a);
    g.layout = std::move(layout.coords);
    g.eigenvalues = std::move(layout.eigenvalues);
    g.degenerate = layout.degenerate;
    return g;
  }

  // Disconnected: lay out each component alone, shrink it into a disc of
  // radius 0.4 and space the components two units apart along x.
  g.disconnected = true;
  g.degenerate = true;
  g.layout.assign(k, {0.0, 0.0});
  for (int c = 0; c < n_components; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < k; ++i) {
      if (component[i] == c) members.push_back(i);
    }
    const auto m = static_cast<Eigen::Index>(members.size());
    Eigen::MatrixXd sub(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) sub(i, j) = a(static_cast<Eigen::Index>(members[static_cast<std::size_t>(i)]),
                                                        static_cast<Eigen::Index>(members[static_cast<std::size_t>(j)]));
    }
    auto layout = laplacian_layout(sub);
    std::array<double, 2> centroid{0.0, 0.0};
    for (const auto& p : layout.coords) {
      centroid[0] += p[0] / static_cast<double>(m);
      centroid[1] += p[1] / static_cast<double>(m);
    }
    double radius = 0.0;
    for (const auto& p : layout.coords) radius = std::max(radius, std::hypot(p[0] - centroid[0], p[1] - centroid[1]));
    const double shrink = radius > 0.0 ? 0.4 / radius : 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& p = layout.coords[static_cast<std::size_t>(i)];
      g.layout[members[static_cast<std::size_t>(i)]] = {2.0 * c + (p[0] - centroid[0]) * shrink,
                                                        (p[1] - centroid[1]) * shrink};
    }
  }
  Eigen::MatrixXd lap = -a;
  for (Eigen::Index i = 0; i < a.rows(); ++i) lap(i, i) = a.row(i).sum();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap, Eigen::EigenvaluesOnly);
  const auto& ev = solver.eigenvalues();
  g.eigenvalues.assign(ev.data(), ev.data() + ev.size());
  return g;
}

std::vector<CurvePoint> precision_confidence_curve(std::span<const Prediction> predictions, const TruthMap& truth,
                                                   std::int32_t label) {
  std::vector<const Prediction*> mine;
  for (const auto& p : predictions) {
    if (p.predicted == label) mine.push_back(&p);
  }
  std::vector<CurvePoint> curve;
  if (mine.empty()) return curve;
  std::sort(mine.begin(), mine.end(), [](const Prediction* a, const Prediction* b) {
    return a->confidence > b->confidence;
  });
  // Walk from the highest confidence down; each distinct value closes a prefix.
  std::size_t retained = 0;
  std::size_t judged = 0;
  std::size_t correct = 0;
  std::size_t i = 0;
  while (i < mine.size()) {
    const double t = mine[i]->confidence;
    while (i < mine.size() && mine[i]->confidence == t) {
      ++retained;
      if (const auto it = truth.find(mine[i]->row_id); it != truth.end()) {
        ++judged;
        if (it->second == label) ++correct;
      }
      ++i;
    }
    CurvePoint cp;
    cp.threshold = t;
    cp.retained = retained;
    cp.retained_fraction = static_cast<double>(retained) / static_cast<double>(mine.size());
    cp.precision = ratio(correct, judged);
    curve.push_back(cp);
  }
  std::reverse(curve.begin(), curve.end());
  return curve;
}

BoostResult precision_boost(std::span<const Prediction> predictions, std::int32_t label, double min_confidence,
                            const TruthMap* truth) {
  if (!(min_confidence >= 0.0 && min_confidence <= 1.0)) throw UsageError("min confidence must lie in [0, 1]");
  BoostResult r;
  r.label = label;
  r.min_confidence = min_confidence;
  std::size_t tp_before = 0;
  std::size_t tp_after = 0;
  std::size_t judged_before = 0;
  std::size_t judged_after = 0;
  for (const auto& p : predictions) {
    if (p.predicted != label) continue;
    ++r.before_count;
    const bool keep = p.confidence >= min_confidence;
    if (keep) {
      ++r.after_count;
      r.selected.push_back(p.row_id);
    }
    if (truth != nullptr) {
      if (const auto it = truth->find(p.row_id); it != truth->end()) {
        const bool ok = it->second == label;
        ++judged_before;
        tp_before += ok ? 1 : 0;
        if (keep) {
          ++judged_after;
          tp_after += ok ? 1 : 0;
        }
      }
    }
  }
  r.retained_fraction = r.before_count == 0 ? 0.0 : static_cast<double>(r.after_count) / static_cast<double>(r.before_count);
  if (truth != nullptr) {
    std::size_t positives = 0;
    for (const auto& [id, c] : *truth) positives += c == label ? 1 : 0;
    r.precision_before = ratio(tp_before, judged_before);
    r.precision_after = ratio(tp_after, judged_after);
    r.recall_before = ratio(tp_before, positives);
    r.recall_after = ratio(tp_after, positives);
  }
  std::sort(r.selected.begin(), r.selected.end());
  return r;
}

BoostResult recall_boost(const PatchStore& store, std::span<const Prediction> predictions, std::int32_t label,
                         double radius_xy, double radius_z, const TruthMap* truth) {
  BoostResult r;
  r.label = label;
  r.radius_xy = radius_xy;
  r.radius_z = radius_z;
  std::vector<PatchId> seeds;
  for (const auto& p : predictions) {
    if (p.predicted != label) continue;
    if (p.row_id >= store.size()) throw DataError(fmt::format("prediction refers to unknown patch {}", p.row_id));
    seeds.push_back(p.row_id);
  }
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
  r.selected = store.neighbors(seeds, radius_xy, radius_z);
  r.before_count = seeds.size();
  r.after_count = r.selected.size();
  r.retained_fraction = store.size() == 0 ? 0.0 : static_cast<double>(r.after_count) / static_cast<double>(store.size());
  if (truth != nullptr) {
    std::size_t positives = 0;
    for (const auto& [id, c] : *truth) positives += c == label ? 1 : 0;
    const auto hits = [&](const std::vector<PatchId>& set) {
      std::size_t h = 0;
      for (const auto id : set) {
        const auto it = truth->find(id);
        h += (it != truth->end() && it->second == label) ? 1 : 0;
      }
      return h;
    };
    const std::size_t hb = hits(seeds);
    const std::size_t ha = hits(r.selected);
    r.recall_before = ratio(hb, positives);
    r.recall_after = ratio(ha, positives);
    r.precision_before = ratio(hb, seeds.size());
    r.precision_after = ratio(ha, r.selected.size());
  }
  return r;
}

}  // namespace pcdim
