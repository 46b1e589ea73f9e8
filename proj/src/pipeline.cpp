#include "pcdim/pipeline.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace pcdim {
namespace {

using nlohmann::json;

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_field(const std::string& s, std::size_t line, const char* what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(fmt::format("line {}: cannot parse {} '{}'", line, what, s));
  }
  return v;
}

std::optional<double> parse_optional(const std::string& s, std::size_t line, const char* what) {
  if (s.empty()) return std::nullopt;
  return parse_field(s, line, what);
}

std::uint64_t parse_id(const std::string& s, std::size_t line) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(fmt::format("line {}: cannot parse patch id '{}'", line, s));
  }
  return v;
}

std::int32_t parse_label(const std::string& s, std::size_t line) {
  std::int32_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(fmt::format("line {}: cannot parse class '{}'", line, s));
  }
  return v;
}

std::string opt(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

template <typename Fn>
auto stage(const char* name, std::vector<StageTiming>& timings, Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  auto record = [&] {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    timings.push_back({name, s});
    spdlog::info("stage {:<16} {:8.3f} s", name, s);
  };
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      record();
    } else {
      auto result = fn();
      record();
      return result;
    }
  } catch (const IoError& e) {
    throw IoError(fmt::format("{}: {}", name, e.what()));
  } catch (const UsageError& e) {
    throw UsageError(fmt::format("{}: {}", name, e.what()));
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", name, e.what()));
  } catch (const std::exception& e) {
    throw std::runtime_error(fmt::format("{}: {}", name, e.what()));
  }
}

}  // namespace

// --- config ---------------------------------------------------------------

std::string to_string(PplMode mode) { return mode == PplMode::kOccupancy ? "occupancy" : "midoc"; }

PplMode parse_ppl_mode(const std::string& name) {
  if (name == "occupancy") return PplMode::kOccupancy;
  if (name == "midoc") return PplMode::kMidOc;
  throw UsageError(fmt::format("unknown descriptor mode '{}' (expected occupancy or midoc)", name));
}

FusionMethod parse_fusion_method(const std::string& name) {
  if (name == "ransac") return FusionMethod::kRansac;
  if (name == "median") return FusionMethod::kMedian;
  throw UsageError(fmt::format("unknown fusion method '{}' (expected ransac or median)", name));
}

TrainConfig PipelineConfig::effective_train() const {
  TrainConfig t = train;
  t.seed = derive_seed(seed, 0x7a1);
  t.workers = workers;
  return t;
}

void PipelineConfig::validate() const {
  grid.validate();
  if (levels < 1 || levels > kMaxMortonLevel) throw UsageError("descriptor levels must lie in [1, 21]");
  if (workers < 1) throw UsageError("workers must be >= 1");
  train.validate();
  if (!(boost.min_confidence >= 0.0 && boost.min_confidence <= 1.0)) {
    throw UsageError("boost min_confidence must lie in [0, 1]");
  }
  if (boost.radius_xy < 0.0 || boost.radius_z < 0.0) throw UsageError("boost radii must be >= 0");
}

json to_json(const TrainConfig& c) {
  json j;
  j["n_trees"] = c.n_trees;
  j["max_depth"] = c.max_depth;
  j["min_samples_leaf"] = c.min_samples_leaf;
  j["features_per_split"] = c.features_per_split;
  j["bootstrap"] = c.bootstrap;
  j["folds"] = c.folds;
  j["undersample_cap"] = c.balancing.undersample_cap ? json(*c.balancing.undersample_cap) : json(nullptr);
  j["class_weights"] = c.balancing.class_weights;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    c.n_trees = j.value("n_trees", c.n_trees);
    c.max_depth = j.value("max_depth", c.max_depth);
    c.min_samples_leaf = j.value("min_samples_leaf", c.min_samples_leaf);
    c.features_per_split = j.value("features_per_split", c.features_per_split);
    c.bootstrap = j.value("bootstrap", c.bootstrap);
    c.folds = j.value("folds", c.folds);
    if (j.contains("undersample_cap") && !j.at("undersample_cap").is_null()) {
      c.balancing.undersample_cap = j.at("undersample_cap").get<double>();
    }
    c.balancing.class_weights = j.value("class_weights", c.balancing.class_weights);
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
  } catch (const json::exception& e) {
    throw UsageError(fmt::format("invalid train config: {}", e.what()));
  }
  c.validate();
  return c;
}

json to_json(const PipelineConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["grid"] = {{"cell_size", json::array({c.grid.cell_size.x, c.grid.cell_size.y, c.grid.cell_size.z})},
               {"origin", json::array({c.grid.origin.x, c.grid.origin.y, c.grid.origin.z})},
               {"columnar", c.grid.mode == GridMode::kColumnar},
               {"reference_height", c.reference_height}};
  j["descriptor"] = {{"levels", c.levels}, {"mode", to_string(c.ppl_mode)}};
  j["dimensionality"] = {{"method", c.dim.method == FusionMethod::kRansac ? "ransac" : "median"},
                         {"ransac_iterations", c.dim.ransac_iterations},
                         {"inlier_tol", c.dim.inlier_tol},
                         {"median_k", c.dim.median_k}};
  j["features"] = {{"profile", to_string(c.features.profile)},
                   {"custom", c.features.custom},
                   {"footprint_diameter", c.features.footprint_diameter}};
  j["train"] = to_json(c.train);
  j["boost"] = {{"class", c.boost.label ? json(*c.boost.label) : json(nullptr)},
                {"min_confidence", c.boost.min_confidence},
                {"rxy", c.boost.radius_xy},
                {"rz", c.boost.radius_z}};
  return j;
}

PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      if (g.contains("cell_size")) {
        const auto& cs = g.at("cell_size");
        if (cs.is_number()) {
          const double e = cs.get<double>();
          c.grid.cell_size = {e, e, e};
        } else {
          c.grid.cell_size = {cs.at(0).get<double>(), cs.at(1).get<double>(), cs.at(2).get<double>()};
        }
      }
      if (g.contains("origin")) {
        const auto& o = g.at("origin");
        c.grid.origin = {o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>()};
      }
      c.grid.mode = g.value("columnar", false) ? GridMode::kColumnar : GridMode::kCubic;
      c.reference_height = g.value("reference_height", 0.0);
    }
    if (j.contains("descriptor")) {
      const auto& d = j.at("descriptor");
      c.levels = d.value("levels", c.levels);
      c.ppl_mode = parse_ppl_mode(d.value("mode", std::string("occupancy")));
    }
    if (j.contains("dimensionality")) {
      const auto& d = j.at("dimensionality");
      c.dim.method = parse_fusion_method(d.value("method", std::string("median")));
      c.dim.ransac_iterations = d.value("ransac_iterations", c.dim.ransac_iterations);
      c.dim.inlier_tol = d.value("inlier_tol", c.dim.inlier_tol);
      c.dim.median_k = d.value("median_k", c.dim.median_k);
    }
    if (j.contains("features")) {
      const auto& f = j.at("features");
      c.features.profile = parse_feature_profile(f.value("profile", std::string("paris")));
      c.features.custom = f.value("custom", std::vector<std::string>{});
      c.features.footprint_diameter = f.value("footprint_diameter", c.features.footprint_diameter);
    }
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("boost")) {
      const auto& b = j.at("boost");
      if (b.contains("class") && !b.at("class").is_null()) c.boost.label = b.at("class").get<std::int32_t>();
      c.boost.min_confidence = b.value("min_confidence", c.boost.min_confidence);
      c.boost.radius_xy = b.value("rxy", c.boost.radius_xy);
      c.boost.radius_z = b.value("rz", c.boost.radius_z);
    }
  } catch (const json::exception& e) {
    throw UsageError(fmt::format("invalid pipeline config: {}", e.what()));
  }
  c.validate();
  return c;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(fmt::format("'{}' is not valid JSON: {}", path.string(), e.what()));
  }
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  return pipeline_config_from_json(read_json_file(path));
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

// --- descriptor and dimensionality ----------------------------------------

std::vector<PplVector> describe_store(const PatchStore& store, int levels, PplMode mode, std::size_t workers) {
  std::vector<PplVector> out(store.size());
  parallel_for(store.size(), workers, [&](std::size_t i) {
    const auto& patch = store.patches()[i];
    const Box3 cube = store.descriptor_box(patch);
    out[i] = mode == PplMode::kOccupancy ? ppl_occupancy(patch.points, cube, levels)
                                         : midoc_order(patch.points, cube, levels).ppl;
  });
  return out;
}

void write_ppl_csv(std::ostream& out, const PatchStore& store, const std::vector<PplVector>& ppl) {
  const std::size_t levels = ppl.empty() ? 0 : ppl.front().levels();
  out << "patch_id";
  for (std::size_t l = 1; l <= levels; ++l) out << ",O_" << l;
  out << '\n';
  for (std::size_t i = 0; i < ppl.size(); ++i) {
    out << store.patches()[i].id;
    for (const auto c : ppl[i].counts) out << ',' << c;
    out << '\n';
  }
}

std::vector<DimRecord> dimensionality_for_store(const PatchStore& store, const std::vector<PplVector>& ppl,
                                                const DimSettings& settings, std::uint64_t seed,
                                                std::size_t workers) {
  std::vector<DimRecord> out(store.size());
  parallel_for(store.size(), workers, [&](std::size_t i) {
    const auto& patch = store.patches()[i];
    DimRecord rec;
    rec.patch_id = patch.id;
    rec.point_count = patch.points.size();
    try {
      const auto profile = dim_profile(ppl[i]);
      if (settings.method == FusionMethod::kRansac) {
        rec.lod = dim_lod_ransac(profile, {settings.ransac_iterations, settings.inlier_tol, derive_seed(seed, patch.id)});
      } else {
        rec.lod = dim_lod_median(profile, settings.median_k);
      }
    } catch (const DataError&) {
      rec.lod.reset();
    }
    try {
      rec.cov = dim_cov(patch.points);
    } catch (const DataError&) {
      rec.cov.reset();
    }
    out[i] = rec;
  });
  return out;
}

void write_dims_csv(std::ostream& out, const std::vector<DimRecord>& dims) {
  out << "patch_id,dim_lod,confidence,dim_cov,p1,p2,p3,abs_diff\n";
  for (const auto& d : dims) {
    out << d.patch_id << ',';
    if (d.lod) out << fmt::format("{},{}", d.lod->value, d.lod->confidence);
    else out << ',';
    out << ',';
    if (d.cov) out << fmt::format("{},{},{},{}", d.cov->value, d.cov->p_dim[0], d.cov->p_dim[1], d.cov->p_dim[2]);
    else out << ",,,";
    out << ',';
    if (d.lod && d.cov) out << fmt::format("{}", std::abs(d.lod->value - d.cov->value));
    out << '\n';
  }
}

std::vector<AgreementRow> read_dims_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw DataError("dims CSV is empty");
  const auto header = split_csv(line);
  if (header.size() < 4 || header[0] != "patch_id" || header[1] != "dim_lod" || header[3] != "dim_cov") {
    throw DataError("dims CSV header must start with patch_id,dim_lod,confidence,dim_cov");
  }
  std::vector<AgreementRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) throw DataError(fmt::format("line {}: wrong field count", line_no));
    const auto lod = parse_optional(f[1], line_no, "dim_lod");
    const auto cov = parse_optional(f[3], line_no, "dim_cov");
    if (!lod || !cov) continue;
    rows.push_back({parse_id(f[0], line_no), *lod, *cov, std::nullopt});
  }
  return rows;
}

json to_json(const AgreementReport& r) {
  json j;
  j["threshold"] = r.threshold;
  j["patch_total"] = r.patch_total;
  j["patch_agreeing"] = r.patch_agreeing;
  j["patch_fraction"] = r.patch_fraction;
  j["point_fraction"] = opt_json(r.point_fraction);
  j["pearson"] = opt_json(r.pearson);
  j["spearman"] = opt_json(r.spearman);
  j["disagreeing"] = json::array();
  for (const auto& [id, diff] : r.disagreeing) j["disagreeing"].push_back({{"patch_id", id}, {"abs_diff", diff}});
  return j;
}

// --- features -------------------------------------------------------------

FeatureTable features_for_store(const PatchStore& store, const std::vector<PplVector>& ppl,
                                const FeatureOptions& options, std::size_t workers) {
  FeatureTable table;
  table.data.feature_names = feature_names(options, store.schema());
  std::vector<FeatureVector> rows(store.size());
  parallel_for(store.size(), workers, [&](std::size_t i) {
    rows[i] = extract_features(store.patches()[i], ppl[i], options, store.schema());
  });
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& patch = store.patches()[i];
    table.data.add_row(rows[i].values, patch.dominant_class.value_or(kNoClass), patch.id);
    table.mix.push_back(patch.mix);
    table.labeled.push_back(patch.dominant_class.has_value());
  }
  return table;
}

void write_features_csv(std::ostream& out, const FeatureTable& table) {
  out << "patch_id,label,mix";
  for (const auto& n : table.data.feature_names) out << ',' << n;
  out << '\n';
  fmt::memory_buffer buf;
  for (std::size_t r = 0; r < table.data.rows(); ++r) {
    buf.clear();
    fmt::format_to(std::back_inserter(buf), "{},", table.data.row_ids[r]);
    if (table.labeled[r]) fmt::format_to(std::back_inserter(buf), "{}", table.data.labels[r]);
    fmt::format_to(std::back_inserter(buf), ",{}", table.mix[r]);
    for (const double v : table.data.row(r)) fmt::format_to(std::back_inserter(buf), ",{}", v);
    buf.push_back('\n');
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

FeatureTable read_features_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw DataError("features CSV is empty");
  const auto header = split_csv(line);
  if (header.size() < 4 || header[0] != "patch_id" || header[1] != "label" || header[2] != "mix") {
    throw DataError("features CSV header must start with patch_id,label,mix and name at least one feature");
  }
  FeatureTable table;
  table.data.feature_names.assign(header.begin() + 3, header.end());
  std::vector<double> x(table.data.features());
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) throw DataError(fmt::format("line {}: wrong field count", line_no));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = parse_field(f[i + 3], line_no, "feature");
    const bool labeled = !f[1].empty();
    table.data.add_row(x, labeled ? parse_label(f[1], line_no) : kNoClass, parse_id(f[0], line_no));
    table.labeled.push_back(labeled);
    table.mix.push_back(parse_field(f[2], line_no, "mix"));
  }
  return table;
}

FeatureTable read_features_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open features file '{}'", path.string()));
  try {
    return read_features_csv(in);
  } catch (const IoError&) {
    throw;
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

Dataset labeled_rows(const FeatureTable& table) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < table.data.rows(); ++r) {
    if (table.labeled[r]) rows.push_back(r);
  }
  if (rows.empty()) throw DataError("no labeled rows in the feature table");
  return table.data.subset(rows);
}

TruthMap truth_from(const FeatureTable& table) {
  TruthMap truth;
  for (std::size_t r = 0; r < table.data.rows(); ++r) {
    if (table.labeled[r]) truth[table.data.row_ids[r]] = table.data.labels[r];
  }
  return truth;
}

std::map<std::int32_t, double> mix_by_class(const FeatureTable& table) {
  std::map<std::int32_t, std::pair<double, std::size_t>> acc;
  for (std::size_t r = 0; r < table.data.rows(); ++r) {
    if (!table.labeled[r]) continue;
    auto& a = acc[table.data.labels[r]];
    a.first += table.mix[r];
    ++a.second;
  }
  std::map<std::int32_t, double> out;
  for (const auto& [c, a] : acc) out[c] = a.first / static_cast<double>(a.second);
  return out;
}

// --- predictions and reports ----------------------------------------------

void write_predictions_csv(std::ostream& out, const std::vector<Prediction>& predictions) {
  out << "patch_id,class,confidence\n";
  for (const auto& p : predictions) out << fmt::format("{},{},{}\n", p.row_id, p.predicted, p.confidence);
}

std::vector<Prediction> read_predictions_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw DataError("predictions CSV is empty");
  const auto header = split_csv(line);
  if (header.size() != 3 || header[0] != "patch_id" || header[1] != "class" || header[2] != "confidence") {
    throw DataError("predictions CSV header must be patch_id,class,confidence");
  }
  std::vector<Prediction> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 3) throw DataError(fmt::format("line {}: wrong field count", line_no));
    const double conf = parse_field(f[2], line_no, "confidence");
    if (!(conf >= 0.0 && conf <= 1.0)) throw DataError(fmt::format("line {}: confidence outside [0, 1]", line_no));
    out.push_back({parse_id(f[0], line_no), parse_label(f[1], line_no), conf});
  }
  return out;
}

std::vector<Prediction> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open predictions file '{}'", path.string()));
  try {
    return read_predictions_csv(in);
  } catch (const IoError&) {
    throw;
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

json to_json(const EvalReport& r, const std::map<std::int32_t, double>* mix) {
  json j;
  j["folds"] = r.folds;
  j["classes"] = r.classes;
  j["feature_names"] = r.feature_names;
  j["confusion"] = r.confusion;
  j["metrics"] = json::array();
  for (const auto& m : r.metrics) {
    j["metrics"].push_back({{"class", m.label},
                            {"support", m.support},
                            {"precision", opt_json(m.precision)},
                            {"recall", opt_json(m.recall)}});
  }
  j["importances"] = json::array();
  for (std::size_t f = 0; f < r.feature_names.size(); ++f) {
    j["importances"].push_back({{"feature", r.feature_names[f]}, {"importance", r.importances[f]}});
  }
  if (mix != nullptr) {
    j["per_point"] = json::array();
    for (const auto& p : per_point_metrics(r.metrics, *mix)) {
      const auto it = mix->find(p.label);
      j["per_point"].push_back({{"class", p.label},
                                {"mix", it == mix->end() ? json(nullptr) : json(it->second)},
                                {"precision", opt_json(p.precision)},
                                {"recall", opt_json(p.recall)}});
    }
  }
  return j;
}

std::pair<std::vector<std::int32_t>, std::vector<std::vector<double>>> confusion_from_json(const json& j) {
  try {
    auto classes = j.at("classes").get<std::vector<std::int32_t>>();
    auto confusion = j.at("confusion").get<std::vector<std::vector<double>>>();
    if (confusion.size() != classes.size()) throw DataError("report confusion matrix does not match its class list");
    return {std::move(classes), std::move(confusion)};
  } catch (const json::exception& e) {
    throw DataError(fmt::format("report is missing classes/confusion: {}", e.what()));
  }
}

void write_layout_csv(std::ostream& out, const AffinityGraph& g) {
  out << "class,x,y\n";
  for (std::size_t i = 0; i < g.classes.size(); ++i) {
    out << fmt::format("{},{},{}\n", g.classes[i], g.layout[i][0], g.layout[i][1]);
  }
}

void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve) {
  out << "threshold,precision,retained_fraction,retained\n";
  for (const auto& c : curve) {
    out << fmt::format("{},{},{},{}\n", c.threshold, opt(c.precision), c.retained_fraction, c.retained);
  }
}

json to_json(const BoostResult& r) {
  json j;
  j["class"] = r.label;
  j["min_confidence"] = r.min_confidence;
  j["rxy"] = r.radius_xy;
  j["rz"] = r.radius_z;
  j["before_count"] = r.before_count;
  j["after_count"] = r.after_count;
  j["retained_fraction"] = r.retained_fraction;
  j["precision_before"] = opt_json(r.precision_before);
  j["precision_after"] = opt_json(r.precision_after);
  j["recall_before"] = opt_json(r.recall_before);
  j["recall_after"] = opt_json(r.recall_after);
  j["selected"] = r.selected;
  return j;
}

// --- pipeline -------------------------------------------------------------

double PipelineResult::seconds(const std::string& name) const {
  for (const auto& t : timings) {
    if (t.stage == name) return t.seconds;
  }
  return 0.0;
}

PipelineResult run_pipeline(const PipelineConfig& config, const std::filesystem::path& input,
                            const std::filesystem::path& outdir) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory '{}': {}", outdir.string(), ec.message()));

  PipelineResult result;
  auto& timings = result.timings;
  const std::size_t workers = config.workers;

  const PatchStore store = stage("ingest", timings, [&] {
    auto s = PatchStore::ingest(read_points(input), config.grid, config.reference_height);
    s.save(outdir / "store");
    return s;
  });
  result.points = store.point_count();
  result.patches = store.size();
  spdlog::info("ingested {} points into {} patches", result.points, result.patches);

  const auto ppl = stage("describe", timings, [&] {
    auto v = describe_store(store, config.levels, config.ppl_mode, workers);
    auto out = open_out(outdir / "ppl.csv");
    write_ppl_csv(out, store, v);
    return v;
  });

  stage("dim", timings, [&] {
    const auto dims = dimensionality_for_store(store, ppl, config.dim, derive_seed(config.seed, 0xd1a), workers);
    {
      auto out = open_out(outdir / "dims.csv");
      write_dims_csv(out, dims);
    }
    std::vector<AgreementRow> rows;
    for (const auto& d : dims) {
      if (d.lod && d.cov) rows.push_back({d.patch_id, d.lod->value, d.cov->value, d.point_count});
    }
    write_text_file(outdir / "dim_report.json", to_json(agreement_report(rows)).dump(2) + "\n");
  });

  const FeatureTable table = stage("features", timings, [&] {
    auto t = features_for_store(store, ppl, config.features, workers);
    auto out = open_out(outdir / "features.csv");
    write_features_csv(out, t);
    return t;
  });

  const bool labeled = std::find(table.labeled.begin(), table.labeled.end(), true) != table.labeled.end();
  if (!labeled) {
    spdlog::warn("input carries no class labels; skipping evaluation, training and boosting");
  } else {
    const Dataset data = labeled_rows(table);
    const TrainConfig train = config.effective_train();
    const auto mix = mix_by_class(table);

    result.report = stage("eval", timings, [&] {
      auto report = kfold_eval(data, train);
      write_text_file(outdir / "report.json", to_json(report, &mix).dump(2) + "\n");
      auto out = open_out(outdir / "oof_predictions.csv");
      write_predictions_csv(out, report.predictions);
      return report;
    });

    const ForestModel model = stage("train", timings, [&] {
      auto m = train_balanced(data, train);
      m.save(outdir / "model.bin");
      return m;
    });

    stage("classify", timings, [&] {
      const auto preds = model.predict(table.data, workers);
      auto out = open_out(outdir / "predictions.csv");
      write_predictions_csv(out, preds);
    });

    stage("analysis", timings, [&] {
      const auto& report = *result.report;
      if (report.classes.size() >= 3) {
        std::vector<std::vector<double>> conf(report.classes.size());
        for (std::size_t i = 0; i < conf.size(); ++i) conf[i].assign(report.confusion[i].begin(), report.confusion[i].end());
        const auto g = spectral_layout(conf, report.classes);
        if (g.disconnected || g.degenerate) spdlog::warn("spectral layout is degenerate; axes are not unique");
        auto out = open_out(outdir / "layout.csv");
        write_layout_csv(out, g);
      }
      // Boosting works on out-of-fold predictions so the metrics are honest.
      const auto truth = truth_from(table);
      std::vector<std::int32_t> targets = config.boost.label ? std::vector<std::int32_t>{*config.boost.label}
                                                             : report.classes;
      for (const auto c : targets) {
        {
          auto out = open_out(outdir / fmt::format("curve_{}.csv", c));
          write_curve_csv(out, precision_confidence_curve(report.predictions, truth, c));
        }
        const auto pb = precision_boost(report.predictions, c, config.boost.min_confidence, &truth);
        write_text_file(outdir / fmt::format("boost_precision_{}.json", c), to_json(pb).dump(2) + "\n");
        const auto rb = recall_boost(store, report.predictions, c, config.boost.radius_xy, config.boost.radius_z, &truth);
        write_text_file(outdir / fmt::format("boost_recall_{}.json", c), to_json(rb).dump(2) + "\n");
      }
    });
  }

  json tj = json::object();
  for (const auto& t : timings) tj[t.stage] = t.seconds;
  tj["points"] = result.points;
  tj["patches"] = result.patches;
  write_text_file(outdir / "timings.json", tj.dump(2) + "\n");
  return result;
}

}  // namespace pcdim
