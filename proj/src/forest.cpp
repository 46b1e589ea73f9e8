#include "pcdim/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pcdim/binary_io.hpp"

namespace pcdim {
namespace {

constexpr char kModelMagic[8] = {'P', 'C', 'D', 'I', 'M', 'R', 'F', '\0'};
constexpr std::uint32_t kModelVersion = 1;

struct Sample {
  std::uint32_t row;
  std::uint32_t cls;  // index into the class list
  double weight;
};

struct SplitCandidate {
  int feature = -1;
  double threshold = 0.0;
  double proxy = -std::numeric_limits<double>::infinity();
  std::size_t left_count = 0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Dataset& data, std::size_t n_classes, const TrainConfig& config, std::size_t mtry)
      : data_(data), n_classes_(n_classes), config_(config), mtry_(mtry) {}

  DecisionTree build(std::vector<Sample> samples, Rng& rng, std::vector<double>& importance) {
    DecisionTree tree;
    struct Task {
      std::size_t begin;
      std::size_t end;
      int depth;
      std::uint32_t node;
    };
    tree.nodes.emplace_back();
    std::vector<Task> stack{{0, samples.size(), 0, 0}};
    std::vector<double> class_weight(n_classes_);
    while (!stack.empty()) {
      const Task task = stack.back();
      stack.pop_back();
      std::fill(class_weight.begin(), class_weight.end(), 0.0);
      double total = 0.0;
      for (std::size_t s = task.begin; s < task.end; ++s) {
        class_weight[samples[s].cls] += samples[s].weight;
        total += samples[s].weight;
      }
      const std::size_t n = task.end - task.begin;
      std::size_t nonzero = 0;
      for (const double w : class_weight) nonzero += w > 0.0 ? 1 : 0;
      const bool depth_left = config_.max_depth <= 0 || task.depth < config_.max_depth;
      const bool can_split = nonzero > 1 && depth_left &&
                             n >= 2 * static_cast<std::size_t>(config_.min_samples_leaf) && total > 0.0;

      SplitCandidate best;
      if (can_split) best = find_split(samples, task.begin, task.end, rng);

      if (best.feature < 0) {
        auto& node = tree.nodes[task.node];
        node.feature = -1;
        node.leaf_offset = static_cast<std::uint32_t>(tree.leaf_values.size());
        for (std::size_t c = 0; c < n_classes_; ++c) {
          tree.leaf_values.push_back(total > 0.0 ? class_weight[c] / total : 1.0 / static_cast<double>(n_classes_));
        }
        continue;
      }

      // Weighted Gini decrease: W*gini(node) - W_l*gini(l) - W_r*gini(r).
      double sq = 0.0;
      for (const double w : class_weight) sq += w * w;
      const double node_proxy = sq / total;
      importance[static_cast<std::size_t>(best.feature)] += std::max(0.0, best.proxy - node_proxy);

      const auto mid_it = std::partition(
          samples.begin() + static_cast<std::ptrdiff_t>(task.begin),
          samples.begin() + static_cast<std::ptrdiff_t>(task.end), [&](const Sample& s) {
            return data_.row(s.row)[static_cast<std::size_t>(best.feature)] <= best.threshold;
          });
      const auto mid = static_cast<std::size_t>(mid_it - samples.begin());
      const auto left = static_cast<std::uint32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      auto& node = tree.nodes[task.node];
      node.feature = best.feature;
      node.threshold = best.threshold;
      node.left = left;
      node.right = left + 1;
      stack.push_back({mid, task.end, task.depth + 1, left + 1});
      stack.push_back({task.begin, mid, task.depth + 1, left});
    }
    return tree;
  }

 private:
  // Features are visited in a random order until mtry non-constant ones have
  // been scored. The best split is taken even with zero decrease, so an impure
  // node always splits while any feature varies.
  SplitCandidate find_split(const std::vector<Sample>& samples, std::size_t begin, std::size_t end, Rng& rng) {
    std::vector<std::size_t> order(data_.features());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());

    SplitCandidate best;
    std::size_t scored = 0;
    const std::size_t n = end - begin;
    const auto msl = static_cast<std::size_t>(config_.min_samples_leaf);
    std::vector<double> left_w(n_classes_);
    std::vector<double> right_w(n_classes_);
    std::vector<double> total_w(n_classes_);
    for (std::size_t s = begin; s < end; ++s) total_w[samples[s].cls] += samples[s].weight;

    for (const std::size_t f : order) {
      if (scored >= mtry_) break;
      column_.clear();
      for (std::size_t s = begin; s < end; ++s) {
        column_.push_back({data_.row(samples[s].row)[f], samples[s].cls, samples[s].weight});
      }
      std::sort(column_.begin(), column_.end(), [](const Entry& a, const Entry& b) { return a.value < b.value; });
      if (column_.front().value == column_.back().value) continue;
      ++scored;

      std::fill(left_w.begin(), left_w.end(), 0.0);
      right_w = total_w;
      double wl = 0.0;
      double wr = std::accumulate(total_w.begin(), total_w.end(), 0.0);
      double sq_l = 0.0;
      double sq_r = 0.0;
      for (const double w : right_w) sq_r += w * w;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto& e = column_[i];
        // Running sums of squared class weights on each side.
        sq_l += 2.0 * left_w[e.cls] * e.weight + e.weight * e.weight;
        sq_r += -2.0 * right_w[e.cls] * e.weight + e.weight * e.weight;
        left_w[e.cls] += e.weight;
        right_w[e.cls] -= e.weight;
        wl += e.weight;
        wr -= e.weight;
        if (column_[i + 1].value == e.value) continue;
        const std::size_t left_count = i + 1;
        if (left_count < msl || n - left_count < msl) continue;
        if (wl <= 0.0 || wr <= 0.0) continue;
        const double proxy = sq_l / wl + sq_r / wr;
        if (proxy > best.proxy) {
          best.proxy = proxy;
          best.feature = static_cast<int>(f);
          double t = 0.5 * (e.value + column_[i + 1].value);
          if (!(t < column_[i + 1].value)) t = e.value;
          best.threshold = t;
          best.left_count = left_count;
        }
      }
    }
    if (best.feature >= 0) {
      // Recompute the proxy exactly for the importance bookkeeping.
      std::fill(left_w.begin(), left_w.end(), 0.0);
      std::fill(right_w.begin(), right_w.end(), 0.0);
      double wl = 0.0;
      double wr = 0.0;
      for (std::size_t s = begin; s < end; ++s) {
        const double v = data_.row(samples[s].row)[static_cast<std::size_t>(best.feature)];
        if (v <= best.threshold) {
          left_w[samples[s].cls] += samples[s].weight;
          wl += samples[s].weight;
        } else {
          right_w[samples[s].cls] += samples[s].weight;
          wr += samples[s].weight;
        }
      }
      double sl = 0.0;
      double sr = 0.0;
      for (std::size_t c = 0; c < n_classes_; ++c) {
        sl += left_w[c] * left_w[c];
        sr += right_w[c] * right_w[c];
      }
      best.proxy = (wl > 0.0 ? sl / wl : 0.0) + (wr > 0.0 ? sr / wr : 0.0);
    }
    return best;
  }

  struct Entry {
    double value;
    std::uint32_t cls;
    double weight;
  };

  const Dataset& data_;
  std::size_t n_classes_;
  const TrainConfig& config_;
  std::size_t mtry_;
  std::vector<Entry> column_;
};

std::size_t class_index(const std::vector<std::int32_t>& classes, std::int32_t label) {
  const auto it = std::lower_bound(classes.begin(), classes.end(), label);
  if (it == classes.end() || *it != label) throw DataError(fmt::format("unknown class {}", label));
  return static_cast<std::size_t>(it - classes.begin());
}

}  // namespace

void Dataset::add_row(std::span<const double> x, std::int32_t label, std::uint64_t id) {
  if (x.size() != features()) throw DataError("row width does not match the feature schema");
  values.insert(values.end(), x.begin(), x.end());
  labels.push_back(label);
  row_ids.push_back(id);
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.feature_names = feature_names;
  out.values.reserve(rows.size() * features());
  for (const auto r : rows) out.add_row(row(r), labels[r], row_ids[r]);
  return out;
}

std::vector<std::int32_t> Dataset::classes() const {
  std::vector<std::int32_t> c(labels.begin(), labels.end());
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

void TrainConfig::validate() const {
  if (n_trees < 1) throw UsageError("n_trees must be >= 1");
  if (max_depth < 0) throw UsageError("max_depth must be >= 0 (0 = unlimited)");
  if (min_samples_leaf < 1) throw UsageError("min_samples_leaf must be >= 1");
  if (features_per_split < 0) throw UsageError("features_per_split must be >= 0 (0 = sqrt)");
  if (folds < 2) throw UsageError("folds must be >= 2");
  if (balancing.undersample_cap && !(*balancing.undersample_cap >= 1.0)) {
    throw UsageError("undersample cap ratio must be >= 1");
  }
}

Balanced balance(std::span<const std::int32_t> labels, const BalanceConfig& config, std::uint64_t seed) {
  std::map<std::int32_t, std::vector<std::size_t>> by_class;
  for (std::size_t r = 0; r < labels.size(); ++r) by_class[labels[r]].push_back(r);
  if (by_class.size() < 2) throw DataError("balancing needs at least two classes");
  if (config.undersample_cap && !(*config.undersample_cap >= 1.0)) {
    throw UsageError("undersample cap ratio must be >= 1");
  }

  Balanced out;
  std::size_t smallest = labels.size();
  for (const auto& [c, rows] : by_class) smallest = std::min(smallest, rows.size());

  Rng rng(seed);
  for (auto& [c, rows] : by_class) {
    out.classes.push_back(c);
    if (config.undersample_cap) {
      const auto cap = static_cast<std::size_t>(std::floor(*config.undersample_cap * static_cast<double>(smallest)));
      if (rows.size() > cap) {
        rng.shuffle(rows.begin(), rows.end());
        rows.resize(cap);
        std::sort(rows.begin(), rows.end());
      }
    }
    if (rows.empty()) throw DataError(fmt::format("class {} has no rows after balancing", c));
  }
  for (const auto& [c, rows] : by_class) out.rows.insert(out.rows.end(), rows.begin(), rows.end());
  std::sort(out.rows.begin(), out.rows.end());

  const double total = static_cast<double>(out.rows.size());
  const double n_classes = static_cast<double>(by_class.size());
  for (const auto& [c, rows] : by_class) {
    out.class_weights.push_back(config.class_weights ? total / (n_classes * static_cast<double>(rows.size())) : 1.0);
  }
  out.weights.reserve(out.rows.size());
  for (const auto r : out.rows) out.weights.push_back(out.class_weights[class_index(out.classes, labels[r])]);
  return out;
}

ForestModel ForestModel::train(const Dataset& data, std::span<const double> weights, const TrainConfig& config) {
  config.validate();
  const std::size_t n = data.rows();
  if (n < 2) throw DataError("training needs at least two rows");
  if (data.features() == 0) throw DataError("training needs at least one feature");
  if (weights.size() != n) throw DataError("weights must have one entry per row");
  if (n > std::numeric_limits<std::uint32_t>::max()) throw DataError("too many training rows");

  ForestModel model;
  model.feature_names_ = data.feature_names;
  model.classes_ = data.classes();
  if (model.classes_.size() < 2) throw DataError("training needs at least two classes");
  const std::size_t n_classes = model.classes_.size();

  model.class_weights_.assign(n_classes, 0.0);
  std::vector<std::size_t> support(n_classes, 0);
  std::vector<Sample> base(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (!(weights[r] > 0.0) || !std::isfinite(weights[r])) throw DataError("row weights must be positive");
    const auto c = class_index(model.classes_, data.labels[r]);
    base[r] = {static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c), weights[r]};
    model.class_weights_[c] += weights[r];
    ++support[c];
  }
  for (std::size_t c = 0; c < n_classes; ++c) model.class_weights_[c] /= static_cast<double>(support[c]);

  const std::size_t d = data.features();
  const std::size_t mtry =
      config.features_per_split > 0
          ? std::min<std::size_t>(d, static_cast<std::size_t>(config.features_per_split))
          : std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))));

  const auto n_trees = static_cast<std::size_t>(config.n_trees);
  model.trees_.resize(n_trees);
  std::vector<std::vector<double>> tree_importance(n_trees, std::vector<double>(d, 0.0));
  parallel_for(n_trees, config.workers, [&](std::size_t t) {
    Rng rng(derive_seed(config.seed, t));
    std::vector<Sample> samples;
    if (config.bootstrap) {
      samples.reserve(n);
      for (std::size_t i = 0; i < n; ++i) samples.push_back(base[rng.index(n)]);
    } else {
      samples = base;
    }
    TreeBuilder builder(data, n_classes, config, mtry);
    model.trees_[t] = builder.build(std::move(samples), rng, tree_importance[t]);
  });

  model.importances_.assign(d, 0.0);
  for (const auto& imp : tree_importance) {
    const double sum = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (sum <= 0.0) continue;
    for (std::size_t f = 0; f < d; ++f) model.importances_[f] += imp[f] / sum;
  }
  const double total = std::accumulate(model.importances_.begin(), model.importances_.end(), 0.0);
  if (total > 0.0) {
    for (auto& v : model.importances_) v /= total;
  } else {
    model.degenerate_ = true;
    std::fill(model.importances_.begin(), model.importances_.end(), 1.0 / static_cast<double>(d));
    spdlog::warn("forest: no informative split found; trees fall back to class priors");
  }
  return model;
}

std::vector<double> ForestModel::distribution(std::span<const double> x) const {
  if (x.size() != feature_names_.size()) throw DataError("row width does not match the model's feature schema");
  const std::size_t n_classes = classes_.size();
  std::vector<double> acc(n_classes, 0.0);
  for (const auto& tree : trees_) {
    std::uint32_t node = 0;
    while (tree.nodes[node].feature >= 0) {
      const auto& nd = tree.nodes[node];
      node = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    const auto off = tree.nodes[node].leaf_offset;
    for (std::size_t c = 0; c < n_classes; ++c) acc[c] += tree.leaf_values[off + c];
  }
  for (auto& v : acc) v /= static_cast<double>(trees_.size());
  return acc;
}

std::vector<Prediction> ForestModel::predict(const Dataset& data, std::size_t workers) const {
  if (data.rows() > 0 && data.feature_names != feature_names_) {
    throw DataError("feature schema does not match the model (names or order differ)");
  }
  std::vector<Prediction> out(data.rows());
  parallel_for(out.size(), workers, [&](std::size_t r) {
    const auto dist = distribution(data.row(r));
    const auto best = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
    out[r] = {data.row_ids.empty() ? r : data.row_ids[r], classes_[best], dist[best]};
  });
  return out;
}

void ForestModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write model '{}'", path.string()));
  out.write(kModelMagic, sizeof(kModelMagic));
  binio::write(out, kModelVersion);
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(feature_names_.size()));
  for (const auto& n : feature_names_) binio::write_string(out, n);
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(classes_.size()));
  for (std::size_t c = 0; c < classes_.size(); ++c) {
    binio::write(out, classes_[c]);
    binio::write(out, class_weights_[c]);
  }
  for (const double v : importances_) binio::write(out, v);
  binio::write<std::uint8_t>(out, degenerate_ ? 1 : 0);
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(trees_.size()));
  for (const auto& tree : trees_) {
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(tree.nodes.size()));
    for (const auto& nd : tree.nodes) {
      binio::write(out, nd.feature);
      binio::write(out, nd.threshold);
      binio::write(out, nd.left);
      binio::write(out, nd.right);
      binio::write(out, nd.leaf_offset);
    }
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(tree.leaf_values.size()));
    for (const double v : tree.leaf_values) binio::write(out, v);
  }
  if (!out) throw IoError(fmt::format("failed writing model '{}'", path.string()));
}

ForestModel ForestModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open model '{}'", path.string()));
  char magic[sizeof(kModelMagic)];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + sizeof(magic), kModelMagic)) {
    throw DataError(fmt::format("'{}' is not a pcdim forest model", path.string()));
  }
  const auto version = binio::read<std::uint32_t>(in);
  if (version != kModelVersion) throw DataError(fmt::format("unsupported model version {}", version));
  ForestModel m;
  const auto d = binio::read<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < d; ++i) m.feature_names_.push_back(binio::read_string(in));
  const auto k = binio::read<std::uint32_t>(in);
  for (std::uint32_t c = 0; c < k; ++c) {
    m.classes_.push_back(binio::read<std::int32_t>(in));
    m.class_weights_.push_back(binio::read<double>(in));
  }
  for (std::uint32_t i = 0; i < d; ++i) m.importances_.push_back(binio::read<double>(in));
  m.degenerate_ = binio::read<std::uint8_t>(in) != 0;
  const auto n_trees = binio::read<std::uint32_t>(in);
  if (n_trees == 0) throw DataError("model has no trees");
  m.trees_.resize(n_trees);
  for (auto& tree : m.trees_) {
    const auto n_nodes = binio::read<std::uint32_t>(in);
    tree.nodes.resize(n_nodes);
    for (auto& nd : tree.nodes) {
      nd.feature = binio::read<std::int32_t>(in);
      nd.threshold = binio::read<double>(in);
      nd.left = binio::read<std::uint32_t>(in);
      nd.right = binio::read<std::uint32_t>(in);
      nd.leaf_offset = binio::read<std::uint32_t>(in);
    }
    const auto n_values = binio::read<std::uint32_t>(in);
    tree.leaf_values.resize(n_values);
    for (auto& v : tree.leaf_values) v = binio::read<double>(in);
    for (const auto& nd : tree.nodes) {
      const bool bad = nd.feature >= 0 ? (nd.feature >= static_cast<std::int32_t>(d) || nd.left >= n_nodes ||
                                          nd.right >= n_nodes)
                                       : (static_cast<std::size_t>(nd.leaf_offset) + k > n_values);
      if (bad) throw DataError("model file has an inconsistent tree");
    }
  }
  return m;
}

ForestModel train_balanced(const Dataset& data, const TrainConfig& config) {
  config.validate();
  const Balanced b = balance(data.labels, config.balancing, derive_seed(config.seed, 0xba1a));
  const Dataset sub = data.subset(b.rows);
  return ForestModel::train(sub, b.weights, config);
}

const ClassMetrics& EvalReport::metrics_for(std::int32_t label) const {
  for (const auto& m : metrics) {
    if (m.label == label) return m;
  }
  throw DataError(fmt::format("class {} is not in the evaluation report", label));
}

std::vector<ClassMetrics> metrics_from_confusion(const std::vector<std::int32_t>& classes,
                                                 const std::vector<std::vector<std::uint64_t>>& confusion) {
  std::vector<ClassMetrics> out;
  const std::size_t k = classes.size();
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics m;
    m.label = classes[c];
    std::uint64_t predicted = 0;
    for (std::size_t t = 0; t < k; ++t) {
      m.support += confusion[c][t];
      predicted += confusion[t][c];
    }
    const double tp = static_cast<double>(confusion[c][c]);
    if (predicted > 0) m.precision = tp / static_cast<double>(predicted);
    if (m.support > 0) m.recall = tp / static_cast<double>(m.support);
    out.push_back(m);
  }
  return out;
}

EvalReport kfold_eval(const Dataset& data, const TrainConfig& config) {
  config.validate();
  EvalReport report;
  report.folds = config.folds;
  report.classes = data.classes();
  report.feature_names = data.feature_names;
  if (report.classes.size() < 2) throw DataError("evaluation needs at least two classes");

  const auto folds = static_cast<std::size_t>(config.folds);
  std::vector<std::size_t> fold_of(data.rows());
  {
    std::map<std::int32_t, std::vector<std::size_t>> by_class;
    for (std::size_t r = 0; r < data.rows(); ++r) by_class[data.labels[r]].push_back(r);
    Rng rng(derive_seed(config.seed, 0xf01d));
    for (auto& [c, rows] : by_class) {
      if (rows.size() < folds) {
        throw DataError(fmt::format("class {} has {} rows, fewer than the {} folds", c, rows.size(), folds));
      }
      rng.shuffle(rows.begin(), rows.end());
      for (std::size_t i = 0; i < rows.size(); ++i) fold_of[rows[i]] = i % folds;
    }
  }

  const std::size_t k = report.classes.size();
  report.confusion.assign(k, std::vector<std::uint64_t>(k, 0));
  report.importances.assign(data.features(), 0.0);
  report.predictions.resize(data.rows());
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> test_rows;
    for (std::size_t r = 0; r < data.rows(); ++r) (fold_of[r] == f ? test_rows : train_rows).push_back(r);
    TrainConfig fold_config = config;
    fold_config.seed = derive_seed(config.seed, 0x1000 + f);
    const ForestModel model = train_balanced(data.subset(train_rows), fold_config);
    const auto preds = model.predict(data.subset(test_rows), config.workers);
    for (std::size_t i = 0; i < test_rows.size(); ++i) {
      const std::size_t r = test_rows[i];
      report.predictions[r] = preds[i];
      ++report.confusion[class_index(report.classes, data.labels[r])][class_index(report.classes, preds[i].predicted)];
    }
    for (std::size_t j = 0; j < data.features(); ++j) {
      report.importances[j] += model.importances()[j] / static_cast<double>(folds);
    }
  }
  report.metrics = metrics_from_confusion(report.classes, report.confusion);
  return report;
}

std::vector<PointMetrics> per_point_metrics(std::span<const ClassMetrics> metrics,
                                            const std::map<std::int32_t, double>& mix) {
  std::vector<PointMetrics> out;
  for (const auto& m : metrics) {
    PointMetrics p;
    p.label = m.label;
    const auto it = mix.find(m.label);
    if (it != mix.end()) {
      if (!(it->second > 0.0 && it->second <= 1.0)) {
        throw DataError(fmt::format("mix for class {} must lie in (0, 1], got {}", m.label, it->second));
      }
      if (m.precision) p.precision = *m.precision * it->second;
      if (m.recall) p.recall = *m.recall * it->second;
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace pcdim
