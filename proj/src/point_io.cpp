#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string_view>

#include <fmt/format.h>

#include "pcdim/point.hpp"

namespace pcdim {
namespace {

enum class Column { kX, kY, kZ, kIntensity, kNumEcho, kClass, kIgnored };

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

Column column_for(std::string_view name) {
  std::string lower(name);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "x") return Column::kX;
  if (lower == "y") return Column::kY;
  if (lower == "z") return Column::kZ;
  if (lower == "intensity") return Column::kIntensity;
  if (lower == "num_echo" || lower == "number_of_echo" || lower == "number_of_returns") {
    return Column::kNumEcho;
  }
  if (lower == "class" || lower == "classification" || lower == "class_label") return Column::kClass;
  return Column::kIgnored;
}

double parse_double(std::string_view field, std::size_t line) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw DataError(fmt::format("line {}: cannot parse number '{}'", line, field));
  }
  return v;
}

struct Layout {
  std::vector<Column> columns;
  AttributeSchema schema;
};

Layout layout_from_names(const std::vector<std::string>& names, std::size_t line) {
  Layout layout;
  bool seen[6] = {false, false, false, false, false, false};
  for (const auto& n : names) {
    const Column c = column_for(trim(n));
    if (c != Column::kIgnored) {
      auto& flag = seen[static_cast<int>(c)];
      if (flag) throw DataError(fmt::format("line {}: duplicate column '{}'", line, n));
      flag = true;
    }
    layout.columns.push_back(c);
  }
  if (!seen[0] || !seen[1] || !seen[2]) {
    throw DataError(fmt::format("line {}: header must name x, y and z columns", line));
  }
  layout.schema.has_intensity = seen[3];
  layout.schema.has_num_echo = seen[4];
  layout.schema.has_class = seen[5];
  return layout;
}

template <typename Fields>
Point parse_record(const Layout& layout, const Fields& fields, std::size_t line) {
  if (fields.size() != layout.columns.size()) {
    throw DataError(fmt::format("line {}: expected {} fields, found {}", line, layout.columns.size(),
                                fields.size()));
  }
  Point p;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const Column c = layout.columns[i];
    if (c == Column::kIgnored) continue;
    const double v = parse_double(fields[i], line);
    switch (c) {
      case Column::kX: p.x = v; break;
      case Column::kY: p.y = v; break;
      case Column::kZ: p.z = v; break;
      case Column::kIntensity: p.intensity = static_cast<float>(v); break;
      case Column::kNumEcho:
        if (v < 1.0 || v != std::floor(v) || v > 1e9) {
          throw DataError(fmt::format("line {}: num_echo must be an integer >= 1", line));
        }
        p.num_echo = static_cast<std::uint32_t>(v);
        break;
      case Column::kClass:
        if (v != std::floor(v) || v < 0.0 || v > 2e9) {
          throw DataError(fmt::format("line {}: class must be a non-negative integer", line));
        }
        p.class_label = static_cast<std::int32_t>(v);
        break;
      case Column::kIgnored: break;
    }
  }
  try {
    validate_point(p);
  } catch (const DataError& e) {
    throw DataError(fmt::format("line {}: {}", line, e.what()));
  }
  return p;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

}  // namespace

void validate_point(const Point& p) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
    throw DataError("non-finite coordinate");
  }
  if (p.num_echo < 1) throw DataError("num_echo must be >= 1");
  if (!std::isfinite(p.intensity)) throw DataError("non-finite intensity");
}

PointCloud read_points_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::optional<Layout> layout;
  PointCloud cloud;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    const auto fields = split(view, ',');
    if (!layout) {
      std::vector<std::string> names(fields.begin(), fields.end());
      layout = layout_from_names(names, line_no);
      cloud.schema = layout->schema;
      continue;
    }
    cloud.points.push_back(parse_record(*layout, fields, line_no));
  }
  if (!layout) throw DataError("CSV input has no header");
  if (cloud.points.empty()) throw DataError("CSV input contains no points");
  return cloud;
}

PointCloud read_points_ply(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    return true;
  };
  if (!next_line() || trim(line) != "ply") throw DataError("line 1: missing 'ply' magic");

  std::vector<std::string> names;
  std::size_t vertex_count = 0;
  bool in_vertex = false;
  bool seen_vertex = false;
  bool ascii = false;
  // Elements declared before the vertex element must be skipped record by record.
  std::size_t skip_before = 0;
  while (true) {
    if (!next_line()) throw DataError("PLY header not terminated by end_header");
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens[0] == "end_header") break;
    if (tokens[0] == "comment" || tokens[0] == "obj_info") continue;
    if (tokens[0] == "format") {
      if (tokens.size() < 2 || tokens[1] != "ascii") {
        throw DataError(fmt::format("line {}: only ASCII PLY is supported", line_no));
      }
      ascii = true;
    } else if (tokens[0] == "element") {
      if (tokens.size() != 3) throw DataError(fmt::format("line {}: malformed element", line_no));
      std::size_t count = 0;
      const auto [ptr, ec] =
          std::from_chars(tokens[2].data(), tokens[2].data() + tokens[2].size(), count);
      if (ec != std::errc()) throw DataError(fmt::format("line {}: malformed element count", line_no));
      in_vertex = tokens[1] == "vertex";
      if (in_vertex) {
        seen_vertex = true;
        vertex_count = count;
      } else if (!seen_vertex) {
        skip_before += count;
      }
    } else if (tokens[0] == "property") {
      if (tokens.size() < 3) throw DataError(fmt::format("line {}: malformed property", line_no));
      if (in_vertex) {
        if (tokens[1] == "list") {
          throw DataError(fmt::format("line {}: list properties on vertex are not supported", line_no));
        }
        names.emplace_back(tokens.back());
      }
    } else {
      throw DataError(fmt::format("line {}: unexpected header keyword '{}'", line_no, tokens[0]));
    }
  }
  if (!ascii) throw DataError("PLY header has no ascii format line");
  if (!seen_vertex) throw DataError("PLY has no vertex element");
  const Layout layout = layout_from_names(names, line_no);

  for (std::size_t i = 0; i < skip_before; ++i) {
    if (!next_line()) throw DataError("PLY truncated before vertex data");
  }
  PointCloud cloud;
  cloud.schema = layout.schema;
  cloud.points.reserve(vertex_count);
  while (cloud.points.size() < vertex_count) {
    if (!next_line()) {
      throw DataError(fmt::format("PLY truncated: expected {} vertices, found {}", vertex_count,
                                  cloud.points.size()));
    }
    const auto fields = split_ws(line);
    if (fields.empty()) continue;
    cloud.points.push_back(parse_record(layout, fields, line_no));
  }
  if (cloud.points.empty()) throw DataError("PLY input contains no points");
  return cloud;
}

PointCloud read_points(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open input file '{}'", path.string()));
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  try {
    if (ext == ".ply") return read_points_ply(in);
    return read_points_csv(in);
  } catch (const IoError&) {
    throw;
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_points_csv(std::ostream& out, const PointCloud& cloud) {
  out << "x,y,z";
  if (cloud.schema.has_intensity) out << ",intensity";
  if (cloud.schema.has_num_echo) out << ",num_echo";
  if (cloud.schema.has_class) out << ",class";
  out << '\n';
  fmt::memory_buffer buf;
  for (const auto& p : cloud.points) {
    buf.clear();
    fmt::format_to(std::back_inserter(buf), "{},{},{}", p.x, p.y, p.z);
    if (cloud.schema.has_intensity) fmt::format_to(std::back_inserter(buf), ",{}", p.intensity);
    if (cloud.schema.has_num_echo) fmt::format_to(std::back_inserter(buf), ",{}", p.num_echo);
    if (cloud.schema.has_class) fmt::format_to(std::back_inserter(buf), ",{}", p.class_label);
    buf.push_back('\n');
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

}  // namespace pcdim
