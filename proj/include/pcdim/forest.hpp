#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcdim/common.hpp"

namespace pcdim {

// Labeled (or unlabeled) feature rows, row-major.
struct Dataset {
  std::vector<std::string> feature_names;
  std::vector<double> values;
  std::vector<std::int32_t> labels;
  // External row identifiers (patch ids), carried through to predictions.
  std::vector<std::uint64_t> row_ids;

  std::size_t features() const { return feature_names.size(); }
  std::size_t rows() const { return feature_names.empty() ? 0 : values.size() / feature_names.size(); }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * features(), features()};
  }
  void add_row(std::span<const double> x, std::int32_t label, std::uint64_t id);
  Dataset subset(std::span<const std::size_t> rows) const;
  // Sorted distinct labels.
  std::vector<std::int32_t> classes() const;
};

struct BalanceConfig {
  // Cap every class at cap x (smallest class support).
  std::optional<double> undersample_cap;
  // weight_c = rows / (classes x support_c), after undersampling.
  bool class_weights = false;
};

struct TrainConfig {
  int n_trees = 100;
  int max_depth = 0;  // 0 = unlimited
  int min_samples_leaf = 1;
  int features_per_split = 0;  // 0 = floor(sqrt(d))
  bool bootstrap = true;
  BalanceConfig balancing;
  int folds = 3;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const;
};

struct Balanced {
  std::vector<std::size_t> rows;
  std::vector<double> weights;
  std::vector<std::int32_t> classes;
  std::vector<double> class_weights;
};

// Undersampling draws without replacement from a seeded stream. Throws
// DataError with fewer than two classes.
Balanced balance(std::span<const std::int32_t> labels, const BalanceConfig& config, std::uint64_t seed);

struct Prediction {
  std::uint64_t row_id = 0;
  std::int32_t predicted = 0;
  // Averaged weighted leaf vote for the predicted class.
  double confidence = 0.0;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // go left when x <= threshold
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::uint32_t leaf_offset = 0;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;
  // Per-leaf class distributions, classes() wide, each summing to 1.
  std::vector<double> leaf_values;
};

class ForestModel {
 public:
  // `weights` has one entry per dataset row.
  static ForestModel train(const Dataset& data, std::span<const double> weights, const TrainConfig& config);

  std::vector<Prediction> predict(const Dataset& data, std::size_t workers = 1) const;
  // Averaged class distribution for one row.
  std::vector<double> distribution(std::span<const double> x) const;

  void save(const std::filesystem::path& path) const;
  static ForestModel load(const std::filesystem::path& path);

  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<std::int32_t>& classes() const { return classes_; }
  const std::vector<double>& class_weights() const { return class_weights_; }
  // Mean impurity decrease per feature, summing to 1.
  const std::vector<double>& importances() const { return importances_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }
  // No tree found a split (all features constant); importances are uniform.
  bool degenerate() const { return degenerate_; }

 private:
  std::vector<std::string> feature_names_;
  std::vector<std::int32_t> classes_;
  std::vector<double> class_weights_;
  std::vector<double> importances_;
  std::vector<DecisionTree> trees_;
  bool degenerate_ = false;
};

// Balances `data` per config, trains and returns the model.
ForestModel train_balanced(const Dataset& data, const TrainConfig& config);

struct ClassMetrics {
  std::int32_t label = 0;
  std::uint64_t support = 0;
  // Absent when the denominator is zero.
  std::optional<double> precision;
  std::optional<double> recall;
};

struct EvalReport {
  std::vector<std::int32_t> classes;
  std::vector<std::string> feature_names;
  // confusion[true][predicted]
  std::vector<std::vector<std::uint64_t>> confusion;
  std::vector<ClassMetrics> metrics;
  std::vector<double> importances;
  // Out-of-fold predictions, one per row, in row order.
  std::vector<Prediction> predictions;
  int folds = 0;

  const ClassMetrics& metrics_for(std::int32_t label) const;
};

// Stratified K-fold evaluation. Throws DataError naming any class whose
// support is below the fold count.
EvalReport kfold_eval(const Dataset& data, const TrainConfig& config);

std::vector<ClassMetrics> metrics_from_confusion(const std::vector<std::int32_t>& classes,
                                                 const std::vector<std::vector<std::uint64_t>>& confusion);

struct PointMetrics {
  std::int32_t label = 0;
  std::optional<double> precision;
  std::optional<double> recall;
};

// Patch metrics times the class mix factor. Throws DataError when a mix lies
// outside (0, 1].
std::vector<PointMetrics> per_point_metrics(std::span<const ClassMetrics> metrics,
                                            const std::map<std::int32_t, double>& mix);

}  // namespace pcdim
