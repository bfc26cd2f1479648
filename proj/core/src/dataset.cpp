#include "mixode/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mixode {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_double(const std::string& s, const std::string& path, int lineno) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::Parse, path + ":" + std::to_string(lineno) +
                                      ": cannot parse number '" + s + "'");
  }
}

int parse_int(const std::string& s, const std::string& path, int lineno) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw Error(ErrorCode::Parse, path + ":" + std::to_string(lineno) +
                                      ": cannot parse integer '" + s + "'");
  return v;
}

// shortest round-trip representation, deterministic across runs
std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

}  // namespace

Vector SubjectRecord::all_times() const {
  std::set<double> t;
  for (const Series& s : series)
    for (Eigen::Index k = 0; k < s.times.size(); ++k) t.insert(s.times[k]);
  Vector out(static_cast<Eigen::Index>(t.size()));
  Eigen::Index i = 0;
  for (double v : t) out[i++] = v;
  return out;
}

Vector Dataset::all_times() const {
  std::set<double> t;
  for (const SubjectRecord& s : subjects)
    for (const Series& ser : s.series)
      for (Eigen::Index k = 0; k < ser.times.size(); ++k) t.insert(ser.times[k]);
  Vector out(static_cast<Eigen::Index>(t.size()));
  Eigen::Index i = 0;
  for (double v : t) out[i++] = v;
  return out;
}

void Dataset::validate() const {
  if (subjects.empty())
    throw Error(ErrorCode::InsufficientData, "dataset has no subjects");
  for (const SubjectRecord& s : subjects) {
    bool any = false;
    for (const Series& ser : s.series) {
      if (ser.times.size() != ser.values.size())
        throw Error(ErrorCode::InvalidArgument,
                    "subject " + s.id + ": times/values length mismatch");
      for (Eigen::Index k = 0; k < ser.times.size(); ++k) {
        if (!std::isfinite(ser.values[k]) || !std::isfinite(ser.times[k]))
          throw Error(ErrorCode::InvalidArgument,
                      "subject " + s.id + ": non-finite observation");
        if (k > 0 && !(ser.times[k] > ser.times[k - 1]))
          throw Error(ErrorCode::InvalidArgument,
                      "subject " + s.id +
                          ": observation times must be strictly increasing");
      }
      any = any || ser.size() > 0;
    }
    if (!any)
      throw Error(ErrorCode::InsufficientData,
                  "subject " + s.id + " has no observations");
  }
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Parse, "cannot open " + path);
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line))
    throw Error(ErrorCode::Parse, path + ": empty file");
  ++lineno;
  {
    auto header = split_csv_line(line);
    if (header.size() != 4 || header[0] != "subject_id" ||
        header[1] != "component" || header[2] != "time" || header[3] != "value")
      throw Error(ErrorCode::Parse,
                  path + ":1: expected header subject_id,component,time,value");
  }
  struct Point {
    double t, v;
  };
  std::vector<std::string> order;
  std::map<std::string, std::map<int, std::vector<Point>>> rows;
  int max_component = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 4)
      throw Error(ErrorCode::Parse,
                  path + ":" + std::to_string(lineno) + ": expected 4 fields");
    const std::string& id = f[0];
    int comp = parse_int(f[1], path, lineno);
    if (comp < 0)
      throw Error(ErrorCode::Parse, path + ":" + std::to_string(lineno) +
                                        ": component index must be >= 0");
    double t = parse_double(f[2], path, lineno);
    double v = parse_double(f[3], path, lineno);
    if (rows.find(id) == rows.end()) order.push_back(id);
    rows[id][comp].push_back({t, v});
    max_component = std::max(max_component, comp);
  }
  Dataset data;
  data.n_components = max_component + 1;
  for (const std::string& id : order) {
    SubjectRecord rec;
    rec.id = id;
    rec.series.resize(data.n_components);
    for (auto& [comp, pts] : rows[id]) {
      std::stable_sort(pts.begin(), pts.end(),
                       [](const Point& a, const Point& b) { return a.t < b.t; });
      Series& s = rec.series[comp];
      s.times.resize(static_cast<Eigen::Index>(pts.size()));
      s.values.resize(static_cast<Eigen::Index>(pts.size()));
      for (std::size_t k = 0; k < pts.size(); ++k) {
        s.times[static_cast<Eigen::Index>(k)] = pts[k].t;
        s.values[static_cast<Eigen::Index>(k)] = pts[k].v;
      }
    }
    data.subjects.push_back(std::move(rec));
  }
  data.validate();
  return data;
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Parse, "cannot write " + path);
  out << "subject_id,component,time,value\n";
  for (const SubjectRecord& s : data.subjects)
    for (std::size_t comp = 0; comp < s.series.size(); ++comp) {
      const Series& ser = s.series[comp];
      for (Eigen::Index k = 0; k < ser.times.size(); ++k)
        out << s.id << ',' << comp << ',' << format_double(ser.times[k]) << ','
            << format_double(ser.values[k]) << '\n';
    }
}

void read_covariates_csv(Dataset& data, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Parse, "cannot open " + path);
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line))
    throw Error(ErrorCode::Parse, path + ": empty file");
  ++lineno;
  {
    auto header = split_csv_line(line);
    if (header.size() != 2 || header[0] != "subject_id" || header[1] != "dose")
      throw Error(ErrorCode::Parse, path + ":1: expected header subject_id,dose");
  }
  std::map<std::string, double> doses;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 2)
      throw Error(ErrorCode::Parse,
                  path + ":" + std::to_string(lineno) + ": expected 2 fields");
    doses[f[0]] = parse_double(f[1], path, lineno);
  }
  for (SubjectRecord& s : data.subjects) {
    auto it = doses.find(s.id);
    if (it != doses.end()) s.dose = it->second;
  }
}

void write_covariates_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Parse, "cannot write " + path);
  out << "subject_id,dose\n";
  for (const SubjectRecord& s : data.subjects)
    if (s.dose) out << s.id << ',' << format_double(*s.dose) << '\n';
}

}  // namespace mixode
