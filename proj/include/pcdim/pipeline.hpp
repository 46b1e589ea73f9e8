#pragma once

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcdim/analysis.hpp"
#include "pcdim/dimensionality.hpp"
#include "pcdim/features.hpp"
#include "pcdim/forest.hpp"
#include "pcdim/octree.hpp"
#include "pcdim/patch_store.hpp"

namespace pcdim {

struct DimSettings {
  FusionMethod method = FusionMethod::kMedian;
  int ransac_iterations = 100;
  double inlier_tol = 0.15;
  double median_k = 2.5;
};

struct BoostSettings {
  // Class to boost; empty means every class in the data.
  std::optional<std::int32_t> label;
  double min_confidence = 0.3;
  double radius_xy = 2.0;
  double radius_z = 0.5;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  GridSpec grid = GridSpec::cubic(1.0);
  double reference_height = 0.0;
  int levels = 4;
  PplMode ppl_mode = PplMode::kOccupancy;
  DimSettings dim;
  FeatureOptions features;
  TrainConfig train;
  BoostSettings boost;

  // train.seed and train.workers follow the master seed and worker count.
  TrainConfig effective_train() const;
  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

std::string to_string(PplMode mode);
PplMode parse_ppl_mode(const std::string& name);
FusionMethod parse_fusion_method(const std::string& name);

// --- per-patch stages -----------------------------------------------------

std::vector<PplVector> describe_store(const PatchStore& store, int levels, PplMode mode, std::size_t workers);
void write_ppl_csv(std::ostream& out, const PatchStore& store, const std::vector<PplVector>& ppl);

struct DimRecord {
  PatchId patch_id = 0;
  std::optional<DimEstimate> lod;
  std::optional<CovDim> cov;
  std::uint64_t point_count = 0;
};

// Dim_LOD is absent when a level is empty (possible in MidOc mode); Dim_cov is
// absent for patches with fewer than 3 points or coincident points. RANSAC
// streams are seeded from (seed, patch id).
std::vector<DimRecord> dimensionality_for_store(const PatchStore& store, const std::vector<PplVector>& ppl,
                                                const DimSettings& settings, std::uint64_t seed,
                                                std::size_t workers);
void write_dims_csv(std::ostream& out, const std::vector<DimRecord>& dims);
std::vector<AgreementRow> read_dims_csv(std::istream& in);
nlohmann::json to_json(const AgreementReport& report);

// Features for every patch. Patches without a dominant class get kNoClass.
struct FeatureTable {
  Dataset data;
  std::vector<double> mix;
  std::vector<bool> labeled;
};

FeatureTable features_for_store(const PatchStore& store, const std::vector<PplVector>& ppl,
                                const FeatureOptions& options, std::size_t workers);
void write_features_csv(std::ostream& out, const FeatureTable& table);
FeatureTable read_features_csv(std::istream& in);
FeatureTable read_features_csv(const std::filesystem::path& path);
// Labeled rows only; throws DataError when none are labeled.
Dataset labeled_rows(const FeatureTable& table);
TruthMap truth_from(const FeatureTable& table);
// Mean patch mix per dominant class.
std::map<std::int32_t, double> mix_by_class(const FeatureTable& table);

void write_predictions_csv(std::ostream& out, const std::vector<Prediction>& predictions);
std::vector<Prediction> read_predictions_csv(std::istream& in);
std::vector<Prediction> read_predictions_csv(const std::filesystem::path& path);

nlohmann::json to_json(const EvalReport& report, const std::map<std::int32_t, double>* mix = nullptr);
// Classes and confusion matrix from a report document.
std::pair<std::vector<std::int32_t>, std::vector<std::vector<double>>> confusion_from_json(const nlohmann::json& j);

void write_layout_csv(std::ostream& out, const AffinityGraph& graph);
void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve);
nlohmann::json to_json(const BoostResult& result);

// --- end to end -----------------------------------------------------------

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct PipelineResult {
  std::vector<StageTiming> timings;
  std::uint64_t points = 0;
  std::size_t patches = 0;
  std::optional<EvalReport> report;

  double seconds(const std::string& stage) const;
};

// ingest -> describe -> dim -> features -> eval -> train -> classify ->
// layout/curve/boost. Writes every artifact under `outdir`. Evaluation and
// boosting run only on labeled input. Stage failures are rethrown with the
// stage name prefixed.
PipelineResult run_pipeline(const PipelineConfig& config, const std::filesystem::path& input,
                            const std::filesystem::path& outdir);

}  // namespace pcdim
