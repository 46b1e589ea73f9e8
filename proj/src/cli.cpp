#include "pcdim/cli.hpp"

#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "pcdim/pipeline.hpp"
#include "pcdim/synth.hpp"

namespace pcdim {
namespace {

using nlohmann::json;

std::vector<double> parse_numbers(const std::string& text, std::size_t expected, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(fmt::format("{}: cannot parse number '{}'", what, item));
    }
  }
  if (expected != 0 && out.size() != expected) {
    throw UsageError(fmt::format("{} needs {} comma-separated numbers, got {}", what, expected, out.size()));
  }
  return out;
}

Polygon2 parse_polygon(const std::string& text) {
  // "x,y;x,y;x,y"
  Polygon2 poly;
  std::stringstream ss(text);
  std::string vertex;
  while (std::getline(ss, vertex, ';')) {
    const auto v = parse_numbers(vertex, 2, "--polygon vertex");
    poly.vertices.push_back({v[0], v[1]});
  }
  return poly;
}

// Writes to `path`, or stdout when the path is empty or "-".
void emit(const std::string& path, const std::function<void(std::ostream&)>& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path));
  fn(out);
  if (!out) throw IoError(fmt::format("failed writing '{}'", path));
}

void emit_json(const std::string& path, const json& j) {
  emit(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path));
  return in;
}

TruthMap truth_from_file(const std::string& path) { return truth_from(read_features_csv(path)); }

TrainConfig load_train_config(const std::string& path, std::size_t workers) {
  TrainConfig cfg = path.empty() ? TrainConfig{} : train_config_from_json(read_json_file(path));
  cfg.workers = workers;
  return cfg;
}

struct Globals {
  std::size_t workers = 1;
  std::string log_level = "info";
};

void add_ingest(CLI::App& app, std::function<void()>& action) {
  struct Opts {
    std::string input, out, origin;
    double cell = 1.0;
    bool columnar = false;
    double reference_height = 0.0;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("ingest", "Partition a point file into a patch store");
  sub->add_option("--input", o->input, "Point file (.csv or ASCII .ply)")->required();
  sub->add_option("--cell-size", o->cell, "Grid edge in metres")->required();
  sub->add_flag("--columnar", o->columnar, "Unbounded-z columns instead of cubes");
  sub->add_option("--origin", o->origin, "Grid origin x,y,z");
  sub->add_option("--reference-height", o->reference_height, "Height subtracted for mean_altitude");
  sub->add_option("--out", o->out, "Store directory")->required();
  sub->callback([o, &action] {
    action = [o] {
      Vec3 origin;
      if (!o->origin.empty()) {
        const auto v = parse_numbers(o->origin, 3, "--origin");
        origin = {v[0], v[1], v[2]};
      }
      const auto grid = o->columnar ? GridSpec::columnar(o->cell, origin) : GridSpec::cubic(o->cell, origin);
      grid.validate();
      const auto store = PatchStore::ingest(read_points(o->input), grid, o->reference_height);
      store.save(o->out);
      spdlog::info("{} points -> {} patches in '{}'", store.point_count(), store.size(), o->out);
    };
  });
}

void add_query(CLI::App& app, std::function<void()>& action) {
  struct Opts {
    std::string store, bbox, polygon, out;
    std::vector<std::string> attrs;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("query", "List patches matching spatial and attribute filters");
  sub->add_option("--store", o->store, "Store directory")->required();
  sub->add_option("--bbox", o->bbox, "x0,y0,z0,x1,y1,z1");
  sub->add_option("--polygon", o->polygon, "XY polygon as x,y;x,y;...");
  sub->add_option("--attr", o->attrs, "Attribute range name:lo:hi (repeatable)");
  sub->add_option("--out", o->out, "Output CSV (default stdout)");
  sub->callback([o, &action] {
    action = [o] {
      const auto store = PatchStore::load(o->store);
      PatchFilter filter;
      if (!o->bbox.empty()) {
        const auto v = parse_numbers(o->bbox, 6, "--bbox");
        filter.box = Box3{{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
      }
      if (!o->polygon.empty()) filter.polygon = parse_polygon(o->polygon);
      for (const auto& a : o->attrs) filter.attributes.push_back(parse_attribute_range(a));
      const auto ids = store.query(filter);
      emit(o->out, [&](std::ostream& out) {
        out << "patch_id,i,j,k,count\n";
        for (const auto id : ids) {
          const auto& p = store.patch(id);
          out << fmt::format("{},{},{},{},{}\n", id, p.index.i, p.index.j, p.index.k, p.stats.count);
        }
      });
    };
  });
}

void add_describe(CLI::App& app, std::function<void()>& action, const Globals& g) {
  struct Opts {
    std::string store, out, mode = "occupancy";
    int levels = 4;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("describe", "Points-per-level descriptor for every patch");
  sub->add_option("--store", o->store, "Store directory")->required();
  sub->add_option("--levels", o->levels, "Octree levels");
  sub->add_option("--mode", o->mode, "occupancy or midoc");
  sub->add_option("--out", o->out, "Output CSV (default stdout)");
  sub->callback([o, &action, &g] {
    action = [o, &g] {
      const auto store = PatchStore::load(o->store);
      const auto ppl = describe_store(store, o->levels, parse_ppl_mode(o->mode), g.workers);
      emit(o->out, [&](std::ostream& out) { write_ppl_csv(out, store, ppl); });
    };
  });
}

void add_dim(CLI::App& app, std::function<void()>& action, const Globals& g) {
  struct Opts {
    std::string store, out, method = "median", mode = "occupancy";
    int levels = 4;
    std::uint64_t seed = 0;
    DimSettings settings;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("dim", "Dim_LOD and Dim_cov for every patch");
  sub->add_option("--store", o->store, "Store directory")->required();
  sub->add_option("--levels", o->levels, "Octree levels");
  sub->add_option("--mode", o->mode, "occupancy or midoc");
  sub->add_option("--method", o->method, "ransac or median");
  sub->add_option("--seed", o->seed, "RANSAC master seed");
  sub->add_option("--iterations", o->settings.ransac_iterations, "RANSAC iterations");
  sub->add_option("--inlier-tol", o->settings.inlier_tol, "RANSAC inlier tolerance");
  sub->add_option("--median-k", o->settings.median_k, "Median fusion MAD multiplier");
  sub->add_option("--out", o->out, "Output CSV (default stdout)");
  sub->callback([o, &action, &g] {
    action = [o, &g] {
      auto settings = o->settings;
      settings.method = parse_fusion_method(o->method);
      const auto store = PatchStore::load(o->store);
      const auto ppl = describe_store(store, o->levels, parse_ppl_mode(o->mode), g.workers);
      const auto dims = dimensionality_for_store(store, ppl, settings, o->seed, g.workers);
      emit(o->out, [&](std::ostream& out) { write_dims_csv(out, dims); });
    };
  });
}

void add_dim_report(CLI::App& app, std::function<void()>& action) {
  struct Opts {
    std::string in, store, out;
    double threshold = 0.5;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("dim-report", "Agreement between Dim_LOD and Dim_cov");
  sub->add_option("--in", o->in, "dims CSV")->required();
  sub->add_option("--threshold", o->threshold, "Agreement threshold on |Dim_LOD - Dim_cov|");
  sub->add_option("--store", o->store, "Store directory, enables the point-weighted fraction");
  sub->add_option("--out", o->out, "Output JSON (default stdout)");
  sub->callback([o, &action] {
    action = [o] {
      auto in = open_in(o->in);
      auto rows = read_dims_csv(in);
      if (!o->store.empty()) {
        const auto store = PatchStore::load(o->store);
        for (auto& r : rows) r.point_count = store.patch(r.patch_id).stats.count;
      }
      emit_json(o->out, to_json(agreement_report(rows, o->threshold)));
    };
  });
}

void add_features(CLI::App& app, std::function<void()>& action, const Globals& g) {
  struct Opts {
    std::string store, out, profile = "paris", mode = "occupancy";
    std::vector<std::string> custom;
    int levels = 4;
    double footprint = 0.05;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("features", "Per-patch feature table");
  sub->add_option("--store", o->store, "Store directory")->required();
  sub->add_option("--profile", o->profile, "paris, vosges or custom");
  sub->add_option("--custom", o->custom, "Feature names for the custom profile")->delimiter(',');
  sub->add_option("--levels", o->levels, "Octree levels for ppl_norm");
  sub->add_option("--mode", o->mode, "occupancy or midoc");
  sub->add_option("--footprint-diameter", o->footprint, "Point diameter for footprint_area");
  sub->add_option("--out", o->out, "Output CSV (default stdout)");
  sub->callback([o, &action, &g] {
    action = [o, &g] {
      FeatureOptions opts;
      opts.profile = parse_feature_profile(o->profile);
      opts.custom = o->custom;
      opts.footprint_diameter = o->footprint;
      const auto store = PatchStore::load(o->store);
      const auto ppl = describe_store(store, o->levels, parse_ppl_mode(o->mode), g.workers);
      const auto table = features_for_store(store, ppl, opts, g.workers);
      emit(o->out, [&](std::ostream& out) { write_features_csv(out, table); });
    };
  });
}

void add_train(CLI::App& app, std::function<void()>& action, const Globals& g) {
  struct Opts {
    std::string features, config, model;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("train", "Train a random forest on labeled feature rows");
  sub->add_option("--features", o->features, "Feature CSV")->required();
  sub->add_option("--config", o->config, "Train config JSON");
  sub->add_option("--model", o->model, "Output model file")->required();
  sub->callback([o, &action, &g] {
    action = [o, &g] {
      const auto cfg = load_train_config(o->config, g.workers);
      const auto model = train_balanced(labeled_rows(read_features_csv(o->features)), cfg);
      model.save(o->model);
      if (model.degenerate()) spdlog::warn("no split was found; importances are uniform");
      spdlog::info("trained {} trees over {} classes", model.trees().size(), model.classes().size());
    };
  });
}

void add_eval(CLI::App& app, std::function<void()>& action, const Globals& g) {
  struct Opts {
    std::string features, config, report, oof;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("eval", "Stratified k-fold evaluation");
  sub->add_option("--features", o->features, "Feature CSV")->required();
  sub->add_option("--config", o->config, "Train config JSON");
  sub->add_option("--report", o->report, "Output report JSON (default stdout)");
  sub->add_option("--oof", o->oof, "Also write out-of-fold predictions CSV");
  sub->callback([o, &action, &g] {
    action = [o, &g] {
      const auto cfg = load_train_config(o->config, g.workers);
      const auto table = read_features_csv(o->features);
      const auto mix = mix_by_class(table);
      const auto report = kfold_eval(labeled_rows(table), cfg);
      emit_json(o->report, to_json(report, &mix));
      if (!o->oof.empty()) emit(o->oof, [&](std::ostream& out) { write_predictions_csv(out, report.predictions); });
    };
  });
}

void add_classify(CLI::App& app, std::function<void()>& action, const Globals& g) {
  struct Opts {
    std::string features, model, out;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("classify", "Predict a class for every feature row");
  sub->add_option("--features", o->features, "Feature CSV")->required();
  sub->add_option("--model", o->model, "Model file")->required();
  sub->add_option("--out", o->out, "Output CSV (default stdout)");
  sub->callback([o, &action, &g] {
    action = [o, &g] {
      const auto model = ForestModel::load(o->model);
      const auto preds = model.predict(read_features_csv(o->features).data, g.workers);
      emit(o->out, [&](std::ostream& out) { write_predictions_csv(out, preds); });
    };
  });
}

void add_layout(CLI::App& app, std::function<void()>& action) {
  struct Opts {
    std::string report, out;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("layout", "2-D spectral layout of the class confusion graph");
  sub->add_option("--report", o->report, "Report JSON from eval")->required();
  sub->add_option("--out", o->out, "Output CSV (default stdout)");
  sub->callback([o, &action] {
    action = [o] {
      const auto [classes, confusion] = confusion_from_json(read_json_file(o->report));
      const auto g = spectral_layout(confusion, classes);
      if (g.disconnected) spdlog::warn("confusion graph is disconnected; components are laid out side by side");
      else if (g.degenerate) spdlog::warn("repeated Laplacian eigenvalues; layout axes are not unique");
      emit(o->out, [&](std::ostream& out) { write_layout_csv(out, g); });
    };
  });
}

void add_curve(CLI::App& app, std::function<void()>& action) {
  struct Opts {
    std::string pred, truth, out;
    std::int32_t label = 0;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("curve", "Precision versus confidence threshold for one class");
  sub->add_option("--pred", o->pred, "Predictions CSV")->required();
  sub->add_option("--truth", o->truth, "Feature CSV carrying labels")->required();
  sub->add_option("--class", o->label, "Class label")->required();
  sub->add_option("--out", o->out, "Output CSV (default stdout)");
  sub->callback([o, &action] {
    action = [o] {
      const auto preds = read_predictions_csv(o->pred);
      const auto curve = precision_confidence_curve(preds, truth_from_file(o->truth), o->label);
      emit(o->out, [&](std::ostream& out) { write_curve_csv(out, curve); });
    };
  });
}

void add_boost_precision(CLI::App& app, std::function<void()>& action) {
  struct Opts {
    std::string pred, truth, out;
    std::int32_t label = 0;
    double min_conf = 0.0;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("boost-precision", "Drop predictions below a confidence threshold");
  sub->add_option("--pred", o->pred, "Predictions CSV")->required();
  sub->add_option("--class", o->label, "Class label")->required();
  sub->add_option("--min-conf", o->min_conf, "Confidence threshold")->required();
  sub->add_option("--truth", o->truth, "Feature CSV carrying labels, for metrics");
  sub->add_option("--out", o->out, "Output JSON (default stdout)");
  sub->callback([o, &action] {
    action = [o] {
      const auto preds = read_predictions_csv(o->pred);
      std::optional<TruthMap> truth;
      if (!o->truth.empty()) truth = truth_from_file(o->truth);
      const auto r = precision_boost(preds, o->label, o->min_conf, truth ? &*truth : nullptr);
      emit_json(o->out, to_json(r));
    };
  });
}

void add_boost_recall(CLI::App& app, std::function<void()>& action) {
  struct Opts {
    std::string store, pred, truth, out;
    std::int32_t label = 0;
    double rxy = 2.0;
    double rz = 0.5;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("boost-recall", "Dilate predicted patches by fixed radii");
  sub->add_option("--store", o->store, "Store directory")->required();
  sub->add_option("--pred", o->pred, "Predictions CSV")->required();
  sub->add_option("--class", o->label, "Class label")->required();
  sub->add_option("--rxy", o->rxy, "Horizontal dilation radius (m)");
  sub->add_option("--rz", o->rz, "Vertical dilation radius (m)");
  sub->add_option("--truth", o->truth, "Feature CSV carrying labels, for metrics");
  sub->add_option("--out", o->out, "Output JSON (default stdout)");
  sub->callback([o, &action] {
    action = [o] {
      if (o->rxy < 0.0 || o->rz < 0.0) throw UsageError("dilation radii must be >= 0");
      const auto store = PatchStore::load(o->store);
      const auto preds = read_predictions_csv(o->pred);
      std::optional<TruthMap> truth;
      if (!o->truth.empty()) truth = truth_from_file(o->truth);
      const auto r = recall_boost(store, preds, o->label, o->rxy, o->rz, truth ? &*truth : nullptr);
      spdlog::info("filtering ratio {}/{} = {:.3f}", r.after_count, store.size(), r.retained_fraction);
      emit_json(o->out, to_json(r));
    };
  });
}

void add_synth(CLI::App& app, std::function<void()>& action) {
  struct Opts {
    std::string spec, out;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("synth", "Generate a synthetic labeled scene");
  sub->add_option("--spec", o->spec, "Scene JSON")->required();
  sub->add_option("--out", o->out, "Output point CSV (default stdout)");
  sub->callback([o, &action] {
    action = [o] {
      const auto cloud = synth::generate(synth::scene_from_json(read_json_file(o->spec)));
      emit(o->out, [&](std::ostream& out) { write_points_csv(out, cloud); });
      spdlog::info("generated {} points", cloud.points.size());
    };
  });
}

void add_pipeline(CLI::App& app, std::function<void()>& action, const Globals& g, const CLI::Option* workers_opt) {
  struct Opts {
    std::string config, input, outdir;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("pipeline", "Run every stage end to end");
  sub->add_option("--config", o->config, "Pipeline config JSON")->required();
  sub->add_option("--input", o->input, "Point file")->required();
  sub->add_option("--outdir", o->outdir, "Output directory")->required();
  sub->callback([o, &action, &g, workers_opt] {
    action = [o, &g, workers_opt] {
      auto cfg = load_pipeline_config(o->config);
      if (workers_opt->count() > 0 || std::getenv("PCDIM_WORKERS") != nullptr) cfg.workers = g.workers;
      if (!std::filesystem::exists(o->input)) throw IoError(fmt::format("input '{}' does not exist", o->input));
      const auto result = run_pipeline(cfg, o->input, o->outdir);
      spdlog::info("pipeline done: {} points, {} patches", result.points, result.patches);
    };
  });
}

}  // namespace

int run_cli(std::vector<std::string> args) {
  CLI::App app{"Patch-based point-cloud dimensionality and classification toolkit", "pcdim"};
  app.require_subcommand(1);
  Globals g;
  g.workers = default_workers();
  auto* workers_opt = app.add_option("--workers", g.workers, "Worker threads (default: PCDIM_WORKERS or 1)")
                          ->check(CLI::PositiveNumber);
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off");

  std::function<void()> action;
  add_ingest(app, action);
  add_query(app, action);
  add_describe(app, action, g);
  add_dim(app, action, g);
  add_dim_report(app, action);
  add_features(app, action, g);
  add_train(app, action, g);
  add_eval(app, action, g);
  add_classify(app, action, g);
  add_layout(app, action);
  add_curve(app, action);
  add_boost_precision(app, action);
  add_boost_recall(app, action);
  add_synth(app, action);
  add_pipeline(app, action, g, workers_opt);

  // Options after the subcommand name also reach the global --workers.
  app.fallthrough();

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto logger = spdlog::get("pcdim");
  if (!logger) logger = spdlog::stderr_color_mt("pcdim");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    if (!action) throw UsageError("no subcommand given");
    action();
    return kExitOk;
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const DataError& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return kExitInternal;
  }
}

int run_cli(int argc, char** argv) { return run_cli(std::vector<std::string>(argv, argv + argc)); }

}  // namespace pcdim
