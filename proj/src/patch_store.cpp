#include "pcdim/patch_store.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "pcdim/binary_io.hpp"

namespace pcdim {
namespace {

constexpr int kStoreVersion = 1;

const char* mode_name(GridMode mode) { return mode == GridMode::kCubic ? "cubic" : "columnar"; }

double parse_number(const std::string& text, const std::string& what) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) throw DataError(fmt::format("cannot parse {} '{}'", what, text));
  return v;
}

std::vector<std::string> tokens_of(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

Vec3 parse_vec3(const std::string& s, const std::string& what) {
  const auto t = tokens_of(s);
  if (t.size() != 3) throw DataError(fmt::format("manifest: {} needs three values", what));
  return {parse_number(t[0], what), parse_number(t[1], what), parse_number(t[2], what)};
}

bool point_in_polygon(const Polygon2& poly, double x, double y) {
  bool inside = false;
  const auto& v = poly.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const double xi = v[i][0], yi = v[i][1], xj = v[j][0], yj = v[j][1];
    if ((yi > y) != (yj > y)) {
      const double x_cross = xi + (y - yi) * (xj - xi) / (yj - yi);
      if (x < x_cross) inside = !inside;
    }
  }
  return inside;
}

double orient(std::array<double, 2> a, std::array<double, 2> b, std::array<double, 2> c) {
  return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
}

bool on_segment(std::array<double, 2> a, std::array<double, 2> b, std::array<double, 2> p) {
  return std::min(a[0], b[0]) <= p[0] && p[0] <= std::max(a[0], b[0]) && std::min(a[1], b[1]) <= p[1] &&
         p[1] <= std::max(a[1], b[1]);
}

bool segments_intersect(std::array<double, 2> p1, std::array<double, 2> p2, std::array<double, 2> q1,
                        std::array<double, 2> q2) {
  const double d1 = orient(q1, q2, p1);
  const double d2 = orient(q1, q2, p2);
  const double d3 = orient(p1, p2, q1);
  const double d4 = orient(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  if (d1 == 0 && on_segment(q1, q2, p1)) return true;
  if (d2 == 0 && on_segment(q1, q2, p2)) return true;
  if (d3 == 0 && on_segment(p1, p2, q1)) return true;
  if (d4 == 0 && on_segment(p1, p2, q2)) return true;
  return false;
}

bool polygon_intersects_rect(const Polygon2& poly, const Box3& box) {
  const auto& v = poly.vertices;
  for (const auto& p : v) {
    if (p[0] >= box.lo.x && p[0] <= box.hi.x && p[1] >= box.lo.y && p[1] <= box.hi.y) return true;
  }
  const std::array<std::array<double, 2>, 4> corners{{{box.lo.x, box.lo.y},
                                                      {box.hi.x, box.lo.y},
                                                      {box.hi.x, box.hi.y},
                                                      {box.lo.x, box.hi.y}}};
  for (const auto& c : corners) {
    if (point_in_polygon(poly, c[0], c[1])) return true;
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& a = v[i];
    const auto& b = v[(i + 1) % v.size()];
    for (std::size_t e = 0; e < 4; ++e) {
      if (segments_intersect(a, b, corners[e], corners[(e + 1) % 4])) return true;
    }
  }
  return false;
}

double attribute_value(const Patch& patch, const std::string& name) {
  const auto& s = patch.stats;
  if (name == "z") return s.z.mean;
  if (name == "altitude") return s.mean_altitude;
  if (name == "intensity") return s.intensity.mean;
  if (name == "num_echo") return s.num_echo.mean;
  if (name == "count") return static_cast<double>(s.count);
  throw UsageError(fmt::format("unknown attribute '{}' (expected z, altitude, intensity, num_echo, count)", name));
}

void update(AttributeStats& a, double v, double& sum, bool first) {
  if (first) {
    a.min = v;
    a.max = v;
  } else {
    a.min = std::min(a.min, v);
    a.max = std::max(a.max, v);
  }
  sum += v;
}

void finish_mean(AttributeStats& a, double sum, std::size_t n) {
  a.mean = std::clamp(sum / static_cast<double>(n), a.min, a.max);
}

std::filesystem::path block_path(const std::filesystem::path& dir, PatchId id) {
  return dir / "patches" / fmt::format("{}.blk", id);
}

}  // namespace

void GridSpec::validate() const {
  for (std::size_t a = 0; a < 3; ++a) {
    if (!(cell_size[a] > 0.0) || !std::isfinite(cell_size[a])) {
      throw UsageError("grid cell sizes must be positive and finite");
    }
    if (!std::isfinite(origin[a])) throw UsageError("grid origin must be finite");
  }
  if (mode == GridMode::kCubic && (cell_size.x != cell_size.y || cell_size.y != cell_size.z)) {
    throw UsageError("cubic grid requires equal x, y, z cell sizes");
  }
}

GridIndex cell_of(const GridSpec& grid, Vec3 p) {
  GridIndex g;
  g.i = static_cast<std::int64_t>(std::floor((p.x - grid.origin.x) / grid.cell_size.x));
  g.j = static_cast<std::int64_t>(std::floor((p.y - grid.origin.y) / grid.cell_size.y));
  g.k = grid.mode == GridMode::kCubic
            ? static_cast<std::int64_t>(std::floor((p.z - grid.origin.z) / grid.cell_size.z))
            : 0;
  return g;
}

PatchStats compute_stats(std::span<const Point> points, double reference_height) {
  PatchStats s;
  s.count = points.size();
  if (points.empty()) return s;
  double z_sum = 0.0;
  double i_sum = 0.0;
  double e_sum = 0.0;
  double alt_sum = 0.0;
  bool first = true;
  for (const auto& p : points) {
    update(s.z, p.z, z_sum, first);
    update(s.intensity, p.intensity, i_sum, first);
    update(s.num_echo, p.num_echo, e_sum, first);
    alt_sum += p.z - reference_height;
    s.bbox.extend(p.position());
    first = false;
  }
  finish_mean(s.z, z_sum, points.size());
  finish_mean(s.intensity, i_sum, points.size());
  finish_mean(s.num_echo, e_sum, points.size());
  s.mean_altitude = std::clamp(alt_sum / static_cast<double>(points.size()), s.z.min - reference_height,
                               s.z.max - reference_height);
  return s;
}

std::pair<std::optional<std::int32_t>, double> dominant_class_of(std::span<const Point> points) {
  std::map<std::int32_t, std::size_t> counts;
  for (const auto& p : points) {
    if (p.labeled()) ++counts[p.class_label];
  }
  if (counts.empty() || points.empty()) return {std::nullopt, 1.0};
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return {best->first, static_cast<double>(best->second) / static_cast<double>(points.size())};
}

AttributeRange parse_attribute_range(const std::string& text) {
  const auto first = text.find(':');
  const auto second = first == std::string::npos ? std::string::npos : text.find(':', first + 1);
  if (first == std::string::npos || second == std::string::npos || first == 0) {
    throw UsageError(fmt::format("attribute filter '{}' must look like name:lo:hi", text));
  }
  AttributeRange r;
  r.name = text.substr(0, first);
  const auto lo = text.substr(first + 1, second - first - 1);
  const auto hi = text.substr(second + 1);
  try {
    if (!lo.empty()) r.lo = parse_number(lo, "attribute bound");
    if (!hi.empty()) r.hi = parse_number(hi, "attribute bound");
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  if (r.lo > r.hi) throw UsageError(fmt::format("attribute filter '{}' has lo > hi", text));
  return r;
}

double Polygon2::signed_area() const {
  double a = 0.0;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const auto& p = vertices[i];
    const auto& q = vertices[(i + 1) % vertices.size()];
    a += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * a;
}

PatchStore PatchStore::ingest(const PointCloud& cloud, const GridSpec& grid, double reference_height) {
  grid.validate();
  if (cloud.points.empty()) throw DataError("cannot ingest an empty point stream");
  if (!std::isfinite(reference_height)) throw UsageError("reference height must be finite");

  std::map<GridIndex, std::vector<Point>> cells;
  for (const auto& p : cloud.points) {
    validate_point(p);
    cells[cell_of(grid, p.position())].push_back(p);
  }

  PatchStore store;
  store.info_ = {grid, cloud.schema, reference_height};
  store.patches_.reserve(cells.size());
  for (auto& [index, points] : cells) {
    Patch patch;
    patch.id = store.patches_.size();
    patch.index = index;
    patch.points = std::move(points);
    patch.stats = compute_stats(patch.points, reference_height);
    if (cloud.schema.has_class) std::tie(patch.dominant_class, patch.mix) = dominant_class_of(patch.points);
    store.patches_.push_back(std::move(patch));
  }
  store.rebuild_index();
  return store;
}

void PatchStore::rebuild_index() {
  by_index_.clear();
  by_index_.reserve(patches_.size());
  for (const auto& p : patches_) by_index_.emplace(p.index, p.id);
}

const Patch& PatchStore::patch(PatchId id) const {
  if (id >= patches_.size()) throw DataError(fmt::format("unknown patch id {}", id));
  return patches_[id];
}

const Patch* PatchStore::find(const GridIndex& index) const {
  const auto it = by_index_.find(index);
  return it == by_index_.end() ? nullptr : &patches_[it->second];
}

std::uint64_t PatchStore::point_count() const {
  std::uint64_t n = 0;
  for (const auto& p : patches_) n += p.points.size();
  return n;
}

Box3 PatchStore::cell_box(const GridIndex& index) const {
  const auto& g = info_.grid;
  Box3 b;
  b.lo = {g.origin.x + static_cast<double>(index.i) * g.cell_size.x,
          g.origin.y + static_cast<double>(index.j) * g.cell_size.y,
          g.origin.z + static_cast<double>(index.k) * g.cell_size.z};
  b.hi = {b.lo.x + g.cell_size.x, b.lo.y + g.cell_size.y, b.lo.z + g.cell_size.z};
  if (g.mode == GridMode::kColumnar) {
    b.lo.z = -std::numeric_limits<double>::infinity();
    b.hi.z = std::numeric_limits<double>::infinity();
  }
  return b;
}

Box3 PatchStore::descriptor_box(const Patch& patch) const {
  Box3 b = cell_box(patch.index);
  if (info_.grid.mode == GridMode::kColumnar) {
    const double edge = info_.grid.cell_size.z;
    const double oz = info_.grid.origin.z;
    const double lo = oz + std::floor((patch.stats.bbox.lo.z - oz) / edge) * edge;
    const double layers = std::max(1.0, std::ceil((patch.stats.bbox.hi.z - lo) / edge));
    b.lo.z = lo;
    b.hi.z = lo + layers * edge;
  }
  return b;
}

Vec3 PatchStore::cell_center(const GridIndex& index) const {
  const auto& g = info_.grid;
  return {g.origin.x + (static_cast<double>(index.i) + 0.5) * g.cell_size.x,
          g.origin.y + (static_cast<double>(index.j) + 0.5) * g.cell_size.y,
          g.origin.z + (static_cast<double>(index.k) + 0.5) * g.cell_size.z};
}

std::vector<PatchId> PatchStore::query(const PatchFilter& filter) const {
  if (filter.box && filter.box->empty()) throw UsageError("query box is empty (lo > hi)");
  if (filter.polygon) {
    if (filter.polygon->vertices.size() < 3 || std::abs(filter.polygon->signed_area()) <= 0.0) {
      throw UsageError("query polygon is degenerate (zero area)");
    }
  }
  std::vector<PatchId> out;
  for (const auto& patch : patches_) {
    if (filter.box && !filter.box->intersects(patch.stats.bbox)) continue;
    if (filter.polygon && !polygon_intersects_rect(*filter.polygon, patch.stats.bbox)) continue;
    bool keep = true;
    for (const auto& a : filter.attributes) {
      const double v = attribute_value(patch, a.name);
      if (v < a.lo || v > a.hi) {
        keep = false;
        break;
      }
    }
    if (keep) out.push_back(patch.id);
  }
  return out;
}

std::vector<PatchId> PatchStore::neighbors(std::span<const PatchId> seeds, double radius_xy,
                                           double radius_z) const {
  if (radius_xy < 0.0 || radius_z < 0.0) throw UsageError("neighbor radii must be non-negative");
  const auto& g = info_.grid;
  const bool columnar = g.mode == GridMode::kColumnar;
  const auto reach = [](double r, double edge) { return static_cast<std::int64_t>(std::floor(r / edge)); };
  const std::int64_t ri = reach(radius_xy, g.cell_size.x);
  const std::int64_t rj = reach(radius_xy, g.cell_size.y);
  const std::int64_t rk = columnar ? 0 : reach(radius_z, g.cell_size.z);

  std::vector<char> selected(patches_.size(), 0);
  for (const PatchId id : seeds) {
    const auto& seed = patch(id);
    selected[id] = 1;
    for (std::int64_t di = -ri; di <= ri; ++di) {
      if (static_cast<double>(std::abs(di)) * g.cell_size.x > radius_xy) continue;
      for (std::int64_t dj = -rj; dj <= rj; ++dj) {
        if (static_cast<double>(std::abs(dj)) * g.cell_size.y > radius_xy) continue;
        for (std::int64_t dk = -rk; dk <= rk; ++dk) {
          if (static_cast<double>(std::abs(dk)) * g.cell_size.z > radius_z) continue;
          const auto* n = find({seed.index.i + di, seed.index.j + dj, seed.index.k + dk});
          if (n != nullptr) selected[n->id] = 1;
        }
      }
    }
  }
  std::vector<PatchId> out;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (selected[i]) out.push_back(i);
  }
  return out;
}

void PatchStore::save(const std::filesystem::path& dir) const {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "patches", ec);
  if (ec) throw IoError(fmt::format("cannot create store directory '{}': {}", dir.string(), ec.message()));

  {
    std::ofstream m(dir / "manifest.txt");
    if (!m) throw IoError(fmt::format("cannot write '{}'", (dir / "manifest.txt").string()));
    const auto& g = info_.grid;
    m << "format = pcdim-store\n";
    m << "version = " << kStoreVersion << '\n';
    m << "mode = " << mode_name(g.mode) << '\n';
    m << fmt::format("cell_size = {} {} {}\n", g.cell_size.x, g.cell_size.y, g.cell_size.z);
    m << fmt::format("origin = {} {} {}\n", g.origin.x, g.origin.y, g.origin.z);
    m << fmt::format("reference_height = {}\n", info_.reference_height);
    m << "has_intensity = " << (info_.schema.has_intensity ? 1 : 0) << '\n';
    m << "has_num_echo = " << (info_.schema.has_num_echo ? 1 : 0) << '\n';
    m << "has_class = " << (info_.schema.has_class ? 1 : 0) << '\n';
    m << "patch_count = " << patches_.size() << '\n';
    for (const auto& p : patches_) {
      m << fmt::format("patch = {} {} {} {} {}\n", p.id, p.index.i, p.index.j, p.index.k, p.points.size());
    }
  }

  {
    std::ofstream s(dir / "stats.csv");
    if (!s) throw IoError(fmt::format("cannot write '{}'", (dir / "stats.csv").string()));
    s << "patch_id,count,z_min,z_max,z_mean,intensity_min,intensity_max,intensity_mean,num_echo_min,"
         "num_echo_max,num_echo_mean,bbox_x0,bbox_y0,bbox_z0,bbox_x1,bbox_y1,bbox_z1,mean_altitude\n";
    for (const auto& p : patches_) {
      const auto& st = p.stats;
      s << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", p.id, st.count, st.z.min, st.z.max,
                       st.z.mean, st.intensity.min, st.intensity.max, st.intensity.mean, st.num_echo.min,
                       st.num_echo.max, st.num_echo.mean, st.bbox.lo.x, st.bbox.lo.y, st.bbox.lo.z, st.bbox.hi.x,
                       st.bbox.hi.y, st.bbox.hi.z, st.mean_altitude);
    }
  }

  for (const auto& p : patches_) {
    const auto path = block_path(dir, p.id);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    binio::write<std::uint64_t>(out, p.points.size());
    for (const auto& pt : p.points) {
      binio::write(out, pt.x);
      binio::write(out, pt.y);
      binio::write(out, pt.z);
    }
    if (info_.schema.has_intensity) {
      for (const auto& pt : p.points) binio::write(out, pt.intensity);
    }
    if (info_.schema.has_num_echo) {
      for (const auto& pt : p.points) binio::write(out, pt.num_echo);
    }
    if (info_.schema.has_class) {
      for (const auto& pt : p.points) binio::write(out, pt.class_label);
    }
    if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
  }
}

PatchStore PatchStore::load(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.txt");
  if (!m) throw IoError(fmt::format("cannot open store manifest '{}'", (dir / "manifest.txt").string()));

  PatchStore store;
  std::map<std::string, std::string> kv;
  struct Entry {
    PatchId id;
    GridIndex index;
    std::uint64_t count;
  };
  std::vector<Entry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(m, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(fmt::format("manifest line {}: expected key = value", line_no));
    auto key = line.substr(0, eq);
    auto value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    if (key == "patch") {
      const auto t = tokens_of(value);
      if (t.size() != 5) throw DataError(fmt::format("manifest line {}: malformed patch entry", line_no));
      Entry e{};
      e.id = static_cast<PatchId>(parse_number(t[0], "patch id"));
      e.index = {static_cast<std::int64_t>(parse_number(t[1], "grid index")),
                 static_cast<std::int64_t>(parse_number(t[2], "grid index")),
                 static_cast<std::int64_t>(parse_number(t[3], "grid index"))};
      e.count = static_cast<std::uint64_t>(parse_number(t[4], "point count"));
      entries.push_back(e);
    } else {
      kv[key] = value;
    }
  }
  auto need = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw DataError(fmt::format("manifest is missing '{}'", key));
    return it->second;
  };
  if (need("format") != "pcdim-store") throw DataError("manifest format is not pcdim-store");
  if (parse_number(need("version"), "version") != kStoreVersion) throw DataError("unsupported store version");
  const auto& mode = need("mode");
  if (mode != "cubic" && mode != "columnar") throw DataError(fmt::format("unknown grid mode '{}'", mode));
  auto& info = store.info_;
  info.grid.mode = mode == "cubic" ? GridMode::kCubic : GridMode::kColumnar;
  info.grid.cell_size = parse_vec3(need("cell_size"), "cell_size");
  info.grid.origin = parse_vec3(need("origin"), "origin");
  info.reference_height = parse_number(need("reference_height"), "reference_height");
  info.schema.has_intensity = need("has_intensity") == "1";
  info.schema.has_num_echo = need("has_num_echo") == "1";
  info.schema.has_class = need("has_class") == "1";
  if (parse_number(need("patch_count"), "patch_count") != static_cast<double>(entries.size())) {
    throw DataError("manifest patch_count does not match patch entries");
  }
  try {
    info.grid.validate();
  } catch (const UsageError& e) {
    throw DataError(fmt::format("manifest: {}", e.what()));
  }

  std::vector<PatchStats> cached(entries.size());
  {
    std::ifstream s(dir / "stats.csv");
    if (!s) throw IoError(fmt::format("cannot open '{}'", (dir / "stats.csv").string()));
    std::getline(s, line);
    std::size_t row = 0;
    while (std::getline(s, line)) {
      if (line.empty()) continue;
      std::vector<double> v;
      std::istringstream fields(line);
      std::string f;
      while (std::getline(fields, f, ',')) v.push_back(parse_number(f, "stat"));
      if (v.size() != 18) throw DataError(fmt::format("stats.csv row {}: expected 18 fields", row + 2));
      const auto id = static_cast<std::size_t>(v[0]);
      if (id >= cached.size()) throw DataError(fmt::format("stats.csv row {}: unknown patch id", row + 2));
      auto& st = cached[id];
      st.count = static_cast<std::uint64_t>(v[1]);
      st.z = {v[2], v[3], v[4]};
      st.intensity = {v[5], v[6], v[7]};
      st.num_echo = {v[8], v[9], v[10]};
      st.bbox.lo = {v[11], v[12], v[13]};
      st.bbox.hi = {v[14], v[15], v[16]};
      st.mean_altitude = v[17];
      ++row;
    }
  }

  store.patches_.resize(entries.size());
  for (const auto& e : entries) {
    if (e.id >= entries.size()) throw DataError(fmt::format("manifest patch id {} out of range", e.id));
    const auto path = block_path(dir, e.id);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open patch block '{}'", path.string()));
    Patch& p = store.patches_[e.id];
    p.id = e.id;
    p.index = e.index;
    const auto n = binio::read<std::uint64_t>(in);
    if (n != e.count || n == 0) throw DataError(fmt::format("patch block '{}' has a bad count header", path.string()));
    p.points.resize(n);
    for (auto& pt : p.points) {
      pt.x = binio::read<double>(in);
      pt.y = binio::read<double>(in);
      pt.z = binio::read<double>(in);
    }
    if (info.schema.has_intensity) {
      for (auto& pt : p.points) pt.intensity = binio::read<float>(in);
    }
    if (info.schema.has_num_echo) {
      for (auto& pt : p.points) pt.num_echo = binio::read<std::uint32_t>(in);
    }
    if (info.schema.has_class) {
      for (auto& pt : p.points) pt.class_label = binio::read<std::int32_t>(in);
    }
    p.stats = cached[e.id];
    if (info.schema.has_class) std::tie(p.dominant_class, p.mix) = dominant_class_of(p.points);
  }
  store.rebuild_index();
  return store;
}

}  // namespace pcdim
