#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include "helpers.hpp"
#include "pcdim/forest.hpp"

using namespace pcdim;
using pcdim::test::TempDir;

namespace {

Dataset make_dataset(std::vector<std::string> names) {
  Dataset d;
  d.feature_names = std::move(names);
  return d;
}

// Two Gaussian blobs on feature 0; feature 1 is noise.
Dataset blobs(Rng& rng, std::size_t per_class, double gap, bool with_noise = true) {
  Dataset d = make_dataset(with_noise ? std::vector<std::string>{"signal", "noise"} : std::vector<std::string>{"signal"});
  std::uint64_t id = 0;
  for (std::int32_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      std::vector<double> x{c * gap + rng.normal()};
      if (with_noise) x.push_back(rng.normal());
      d.add_row(x, c, id++);
    }
  }
  return d;
}

TrainConfig quick(std::uint64_t seed = 1, int trees = 25) {
  TrainConfig c;
  c.n_trees = trees;
  c.seed = seed;
  return c;
}

std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

double accuracy(const std::vector<Prediction>& p, const Dataset& d) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < p.size(); ++i) ok += p[i].predicted == d.labels[i] ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(p.size());
}

}  // namespace

TEST_CASE("train config validation") {
  CHECK_NOTHROW(TrainConfig{}.validate());
  TrainConfig c;
  c.n_trees = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = {};
  c.folds = 1;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = {};
  c.balancing.undersample_cap = 0.5;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = {};
  c.min_samples_leaf = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("undersampling cap not binding") {
  std::vector<std::int32_t> labels(1000, 0);
  labels.insert(labels.end(), 10, 1);
  const auto b = balance(labels, {100.0, false}, 3);
  CHECK(b.rows.size() == 1010);
}

TEST_CASE("undersampling cap binding") {
  std::vector<std::int32_t> labels(200000, 0);
  labels.insert(labels.end(), 10, 1);
  const auto b = balance(labels, {100.0, false}, 3);
  std::size_t a = 0;
  std::size_t bb = 0;
  for (const auto r : b.rows) (labels[r] == 0 ? a : bb)++;
  CHECK(a == 1000);
  CHECK(bb == 10);
  CHECK(std::is_sorted(b.rows.begin(), b.rows.end()));
}

TEST_CASE("class weights formula") {
  std::vector<std::int32_t> labels(30, 0);
  labels.insert(labels.end(), 10, 1);
  const auto b = balance(labels, {std::nullopt, true}, 0);
  CHECK(b.rows.size() == 40);
  CHECK(b.class_weights[0] == doctest::Approx(2.0 / 3.0));
  CHECK(b.class_weights[1] == doctest::Approx(2.0));
  CHECK(b.weights.front() == doctest::Approx(2.0 / 3.0));
  CHECK(b.weights.back() == doctest::Approx(2.0));
}

TEST_CASE("balancing needs two classes") {
  const std::vector<std::int32_t> labels(5, 1);
  CHECK_THROWS_AS(balance(labels, {}, 0), DataError);
}

TEST_CASE("separable single-feature data trains to full accuracy") {
  Dataset d = make_dataset({"x"});
  for (int i = 0; i < 40; ++i) d.add_row(std::vector<double>{static_cast<double>(i)}, i < 20 ? 0 : 1, i);
  const auto model = ForestModel::train(d, ones(d.rows()), quick());
  CHECK(accuracy(model.predict(d), d) == 1.0);
}

TEST_CASE("single tree without bootstrap fits consistent data exactly") {
  Rng rng(5);
  Dataset d = make_dataset({"a", "b", "c"});
  for (int i = 0; i < 300; ++i) {
    std::vector<double> x{rng.uniform(), rng.uniform(), rng.uniform()};
    d.add_row(x, static_cast<std::int32_t>(rng.index(4)), i);
  }
  TrainConfig c = quick(3, 1);
  c.bootstrap = false;
  const auto model = ForestModel::train(d, ones(d.rows()), c);
  const auto preds = model.predict(d);
  CHECK(accuracy(preds, d) == 1.0);
  for (const auto& p : preds) CHECK(p.confidence == 1.0);
}

TEST_CASE("leaf distributions sum to one and importances are normalized") {
  Rng rng(6);
  const auto d = blobs(rng, 100, 2.0);
  const auto model = ForestModel::train(d, ones(d.rows()), quick());
  for (const auto& tree : model.trees()) {
    for (const auto& node : tree.nodes) {
      if (node.feature >= 0) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < model.classes().size(); ++c) s += tree.leaf_values[node.leaf_offset + c];
      CHECK(s == doctest::Approx(1.0));
    }
  }
  double sum = 0.0;
  for (const double v : model.importances()) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0));
  CHECK_FALSE(model.degenerate());
}

TEST_CASE("noise feature is less important than the signal") {
  Rng rng(7);
  const auto d = blobs(rng, 200, 3.0);
  const auto model = ForestModel::train(d, ones(d.rows()), quick());
  CHECK(model.importances()[0] > model.importances()[1]);
}

TEST_CASE("shuffling an informative column lowers its importance across seeds") {
  Rng rng(8);
  Dataset d = make_dataset({"f0", "f1", "f2"});
  for (int i = 0; i < 300; ++i) {
    const std::int32_t c = static_cast<std::int32_t>(i % 2);
    d.add_row(std::vector<double>{c * 1.5 + rng.normal(), c * 0.8 + rng.normal(), rng.normal()}, c, i);
  }
  double before = 0.0;
  double after = 0.0;
  int strictly = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto base = ForestModel::train(d, ones(d.rows()), quick(seed, 20));
    Dataset shuffled = d;
    std::vector<double> col;
    for (std::size_t r = 0; r < d.rows(); ++r) col.push_back(d.row(r)[1]);
    Rng shuffle_rng(derive_seed(99, seed));
    shuffle_rng.shuffle(col.begin(), col.end());
    for (std::size_t r = 0; r < d.rows(); ++r) shuffled.values[r * 3 + 1] = col[r];
    const auto perm = ForestModel::train(shuffled, ones(d.rows()), quick(seed, 20));
    before += base.importances()[1];
    after += perm.importances()[1];
    strictly += perm.importances()[1] < base.importances()[1] ? 1 : 0;
  }
  CHECK(after < before);
  CHECK(strictly >= 8);
}

TEST_CASE("training is reproducible and independent of worker count") {
  Rng rng(9);
  const auto d = blobs(rng, 150, 1.0);
  TrainConfig c = quick(42, 30);
  const auto a = ForestModel::train(d, ones(d.rows()), c);
  c.workers = 4;
  const auto b = ForestModel::train(d, ones(d.rows()), c);
  CHECK(a.importances() == b.importances());
  const auto pa = a.predict(d);
  const auto pb = b.predict(d, 3);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].predicted == pb[i].predicted);
    CHECK(pa[i].confidence == pb[i].confidence);
  }
  c.seed = 43;
  const auto other = ForestModel::train(d, ones(d.rows()), c);
  CHECK(other.importances() != a.importances());
}

TEST_CASE("scaling all row weights changes nothing") {
  Rng rng(10);
  const auto d = blobs(rng, 120, 1.0);
  Rng wr(11);
  std::vector<double> w(d.rows());
  for (auto& v : w) v = wr.uniform(0.5, 2.0);
  const auto base = ForestModel::train(d, w, quick(5, 15));
  const auto pb = base.predict(d);
  for (const double k : {0.25, 4.0, 3.0}) {
    std::vector<double> scaled = w;
    for (auto& v : scaled) v *= k;
    const auto m = ForestModel::train(d, scaled, quick(5, 15));
    const auto pm = m.predict(d);
    for (std::size_t t = 0; t < base.trees().size(); ++t) {
      REQUIRE(base.trees()[t].nodes.size() == m.trees()[t].nodes.size());
      for (std::size_t n = 0; n < base.trees()[t].nodes.size(); ++n) {
        CHECK(base.trees()[t].nodes[n].feature == m.trees()[t].nodes[n].feature);
        CHECK(base.trees()[t].nodes[n].threshold == m.trees()[t].nodes[n].threshold);
      }
    }
    for (std::size_t i = 0; i < pb.size(); ++i) {
      CHECK(pb[i].predicted == pm[i].predicted);
      CHECK(pb[i].confidence == doctest::Approx(pm[i].confidence).epsilon(1e-12));
    }
  }
}

TEST_CASE("scaled class weights train the same forest") {
  Rng rng(18);
  Dataset d = make_dataset({"a", "b"});
  for (int i = 0; i < 160; ++i) {
    const std::int32_t c = i < 120 ? 0 : 1;
    d.add_row(std::vector<double>{c * 0.8 + rng.normal(), rng.normal()}, c, i);
  }
  const auto b = balance(d.labels, {std::nullopt, true}, 0);
  std::vector<double> scaled = b.weights;
  for (auto& w : scaled) w *= 8.0;
  const auto m1 = ForestModel::train(d, b.weights, quick(6, 10));
  const auto m2 = ForestModel::train(d, scaled, quick(6, 10));
  CHECK(m1.importances() == m2.importances());
  const auto p1 = m1.predict(d);
  const auto p2 = m2.predict(d);
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].predicted == p2[i].predicted);
    CHECK(p1[i].confidence == doctest::Approx(p2[i].confidence).epsilon(1e-12));
  }
}

TEST_CASE("constant features degenerate to priors with a flag") {
  Dataset d = make_dataset({"c"});
  for (int i = 0; i < 30; ++i) d.add_row(std::vector<double>{1.0}, i < 20 ? 0 : 1, i);
  const auto model = ForestModel::train(d, ones(d.rows()), quick());
  CHECK(model.degenerate());
  CHECK(model.importances() == std::vector<double>{1.0});
  const auto p = model.predict(d);
  CHECK(p[0].predicted == 0);
}

TEST_CASE("train errors") {
  Dataset d = make_dataset({"x"});
  d.add_row(std::vector<double>{1.0}, 0, 0);
  CHECK_THROWS_AS(ForestModel::train(d, ones(1), quick()), DataError);
  d.add_row(std::vector<double>{2.0}, 0, 1);
  CHECK_THROWS_AS(ForestModel::train(d, ones(2), quick()), DataError);
  d.add_row(std::vector<double>{3.0}, 1, 2);
  CHECK_THROWS_AS(ForestModel::train(d, ones(2), quick()), DataError);
  CHECK_THROWS_AS(ForestModel::train(d, std::vector<double>{1, -1, 1}, quick()), DataError);
}

TEST_CASE("pure leaf gives its own label with confidence one") {
  Dataset d = make_dataset({"x"});
  for (int i = 0; i < 10; ++i) d.add_row(std::vector<double>{i < 5 ? 0.0 : 10.0}, i < 5 ? 3 : 8, i);
  TrainConfig c = quick(1, 1);
  c.bootstrap = false;
  const auto p = ForestModel::train(d, ones(d.rows()), c).predict(d);
  CHECK(p[0].predicted == 3);
  CHECK(p[0].confidence == 1.0);
  CHECK(p[9].predicted == 8);
}

TEST_CASE("midpoint row between two symmetric clusters is uncertain") {
  Rng rng(12);
  Dataset d = make_dataset({"x", "y"});
  for (int i = 0; i < 400; ++i) {
    const std::int32_t c = i % 2;
    d.add_row(std::vector<double>{(c == 0 ? -1.0 : 1.0) + 0.8 * rng.normal(), rng.normal()}, c, i);
  }
  const auto model = ForestModel::train(d, ones(d.rows()), quick(2, 200));
  Dataset probe = make_dataset({"x", "y"});
  probe.add_row(std::vector<double>{0.0, 0.0}, 0, 0);
  const auto p = model.predict(probe);
  CHECK(p[0].confidence < 0.8);
  CHECK(p[0].confidence >= 0.5);
}

TEST_CASE("empty row set predicts nothing and schema mismatches are rejected") {
  Rng rng(13);
  const auto d = blobs(rng, 20, 3.0);
  const auto model = ForestModel::train(d, ones(d.rows()), quick());
  CHECK(model.predict(make_dataset({"signal", "noise"})).empty());
  Dataset wrong = make_dataset({"noise", "signal"});
  wrong.add_row(std::vector<double>{0.0, 0.0}, 0, 0);
  CHECK_THROWS_AS(model.predict(wrong), DataError);
  CHECK_THROWS_AS(model.distribution(std::vector<double>{1.0}), DataError);
}

TEST_CASE("model save and load round trip") {
  TempDir dir("model");
  Rng rng(14);
  const auto d = blobs(rng, 60, 1.0);
  const auto model = ForestModel::train(d, ones(d.rows()), quick());
  model.save(dir / "m.bin");
  const auto back = ForestModel::load(dir / "m.bin");
  CHECK(back.feature_names() == model.feature_names());
  CHECK(back.classes() == model.classes());
  CHECK(back.class_weights() == model.class_weights());
  CHECK(back.importances() == model.importances());
  const auto a = model.predict(d);
  const auto b = back.predict(d);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].predicted == b[i].predicted);
    CHECK(a[i].confidence == b[i].confidence);
  }
}

TEST_CASE("corrupt and foreign model files are rejected") {
  TempDir dir("model_bad");
  CHECK_THROWS_AS(ForestModel::load(dir / "missing.bin"), IoError);
  {
    std::ofstream out(dir / "junk.bin", std::ios::binary);
    out << "definitely not a model";
  }
  CHECK_THROWS_AS(ForestModel::load(dir / "junk.bin"), DataError);
  Rng rng(15);
  const auto d = blobs(rng, 20, 1.0);
  ForestModel::train(d, ones(d.rows()), quick()).save(dir / "m.bin");
  std::filesystem::resize_file(dir / "m.bin", std::filesystem::file_size(dir / "m.bin") / 2);
  CHECK_THROWS_AS(ForestModel::load(dir / "m.bin"), DataError);
}

TEST_CASE("k-fold on duplicated separable data gives an identity confusion matrix") {
  Dataset d = make_dataset({"x"});
  for (int rep = 0; rep < 5; ++rep) {
    for (std::int32_t c = 0; c < 3; ++c) d.add_row(std::vector<double>{10.0 * c}, c, d.rows());
  }
  const auto r = kfold_eval(d, quick());
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(r.confusion[i][j] == (i == j ? 5U : 0U));
  }
  for (const auto& m : r.metrics) {
    CHECK(*m.precision == 1.0);
    CHECK(*m.recall == 1.0);
  }
}

TEST_CASE("k-fold rows sum to support and predictions cover every row") {
  Rng rng(16);
  auto d = blobs(rng, 50, 0.5);
  for (int i = 0; i < 20; ++i) d.add_row(std::vector<double>{rng.normal(), rng.normal()}, 2, d.rows());
  const auto r = kfold_eval(d, quick(4, 10));
  REQUIRE(r.classes == std::vector<std::int32_t>{0, 1, 2});
  const std::vector<std::uint64_t> support{50, 50, 20};
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::accumulate(r.confusion[i].begin(), r.confusion[i].end(), std::uint64_t{0}) == support[i]);
    CHECK(r.metrics[i].support == support[i]);
  }
  CHECK(r.predictions.size() == d.rows());
  for (std::size_t i = 0; i < d.rows(); ++i) CHECK(r.predictions[i].row_id == d.row_ids[i]);
  const double imp = std::accumulate(r.importances.begin(), r.importances.end(), 0.0);
  CHECK(imp == doctest::Approx(1.0));
  const auto again = kfold_eval(d, quick(4, 10));
  CHECK(again.confusion == r.confusion);
}

TEST_CASE("k-fold refuses a class smaller than the fold count and names it") {
  Dataset d = make_dataset({"x"});
  for (int i = 0; i < 10; ++i) d.add_row(std::vector<double>{1.0 * i}, 0, i);
  d.add_row(std::vector<double>{50.0}, 7, 10);
  d.add_row(std::vector<double>{51.0}, 7, 11);
  try {
    kfold_eval(d, quick());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("class 7") != std::string::npos);
  }
}

TEST_CASE("permuted labels give about the majority prior") {
  Rng rng(17);
  Dataset d = make_dataset({"a", "b"});
  for (int i = 0; i < 400; ++i) {
    d.add_row(std::vector<double>{rng.normal(), rng.normal()}, rng.uniform() < 0.7 ? 0 : 1, i);
  }
  const auto r = kfold_eval(d, quick(8, 30));
  double correct = 0;
  for (std::size_t i = 0; i < 2; ++i) correct += static_cast<double>(r.confusion[i][i]);
  CHECK(std::abs(correct / 400.0 - 0.7) <= 0.1);
}

TEST_CASE("coin-flip labels give precision near the class prior") {
  double p0 = 0.0;
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(100 + s);
    Dataset d = make_dataset({"a", "b"});
    for (int i = 0; i < 300; ++i) d.add_row(std::vector<double>{rng.normal(), rng.normal()}, rng.uniform() < 0.5 ? 0 : 1, i);
    const auto r = kfold_eval(d, quick(s, 20));
    p0 += r.metrics[0].precision.value_or(0.0);
  }
  CHECK(std::abs(p0 / seeds - 0.5) <= 0.1);
}

TEST_CASE("metrics from a hand confusion matrix") {
  const auto m = metrics_from_confusion({1, 2}, {{8, 2}, {0, 0}});
  CHECK(*m[0].precision == 1.0);
  CHECK(*m[0].recall == 0.8);
  CHECK(*m[1].precision == 0.0);
  CHECK_FALSE(m[1].recall.has_value());
  const auto never = metrics_from_confusion({1, 2}, {{8, 0}, {3, 0}});
  CHECK_FALSE(never[1].precision.has_value());
  CHECK(m[1].support == 0);
}

TEST_CASE("per-point metrics multiply by the mix") {
  std::vector<ClassMetrics> m(3);
  m[0] = {1, 10, 1.0, 1.0};
  m[1] = {2, 10, 0.99, 0.9};
  m[2] = {3, 10, 0.7, 0.6};
  const std::map<std::int32_t, double> mix{{1, 0.9}, {2, 0.883}, {3, 1.0}};
  const auto p = per_point_metrics(m, mix);
  CHECK(*p[0].precision == doctest::Approx(0.9));
  CHECK(std::abs(*p[1].precision - 0.99 * 0.883) <= 1e-12);
  CHECK(std::round(*p[1].precision * 1000.0) / 1000.0 == 0.874);
  CHECK(std::abs(*p[1].recall - 0.8) <= 0.01);
  CHECK(*p[2].precision == 0.7);
  CHECK(*p[2].recall == 0.6);
  CHECK_THROWS_AS(per_point_metrics(m, {{1, 0.0}}), DataError);
  CHECK_THROWS_AS(per_point_metrics(m, {{1, 1.5}}), DataError);
  const auto partial = per_point_metrics(m, {{1, 0.5}});
  CHECK_FALSE(partial[1].precision.has_value());
}
