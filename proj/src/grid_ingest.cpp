#include "disagg/grid_ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace disagg {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim whitespace and a possible trailing \r
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& what, int line_no) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("non-numeric " + what + " '" + s + "' at line " +
                          std::to_string(line_no));
  }
}

long long parse_int(const std::string& s, const std::string& what, int line_no) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("non-integer " + what + " '" + s + "' at line " +
                          std::to_string(line_no));
  return v;
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file: " + path);
  return in;
}

}  // namespace

std::pair<PixelGrid, WardTable> load_grid(const std::string& pixel_file,
                                          const std::string& ward_file,
                                          const LoadOptions& options) {
  // --- ward file ---
  std::ifstream wf = open_or_throw(ward_file);
  std::string line;
  if (!std::getline(wf, line)) throw ValidationError("empty ward file: " + ward_file);
  {
    const auto header = split_csv_line(line);
    if (header.size() < 2 || header[0] != "ward_id" || header[1] != "population")
      throw ValidationError("ward file header must be 'ward_id,population'");
  }
  std::vector<std::pair<int, long long>> populations;
  std::unordered_set<int> seen_wards;
  int line_no = 1;
  while (std::getline(wf, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 2) throw ValidationError("ward file: expected 2 fields at line " +
                                             std::to_string(line_no));
    const int wid = static_cast<int>(parse_int(f[0], "ward_id", line_no));
    const long long pop = parse_int(f[1], "population", line_no);
    if (pop < 0) throw ValidationError("negative population for ward " + std::to_string(wid));
    if (!seen_wards.insert(wid).second)
      throw ValidationError("duplicate ward_id " + std::to_string(wid));
    populations.emplace_back(wid, pop);
  }
  if (populations.empty()) throw ValidationError("ward file has no rows: " + ward_file);

  // --- pixel file ---
  std::ifstream pf = open_or_throw(pixel_file);
  if (!std::getline(pf, line)) throw ValidationError("empty pixel file: " + pixel_file);
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "pixel_id" || header[1] != "row" ||
      header[2] != "col" || header[3] != "ward_id")
    throw ValidationError("pixel file header must start with 'pixel_id,row,col,ward_id'");
  const int m = static_cast<int>(header.size()) - 4;
  std::vector<std::string> cov_names(header.begin() + 4, header.end());

  std::vector<bool> do_log1p(m, false);
  for (const auto& name : options.log1p_covariates) {
    const auto it = std::find(cov_names.begin(), cov_names.end(), name);
    if (it == cov_names.end())
      throw ValidationError("--log1p names unknown covariate '" + name + "'");
    do_log1p[it - cov_names.begin()] = true;
  }

  PixelGrid grid;
  grid.pixel_side = options.pixel_side;
  std::vector<double> cov_data;  // row-major P x m
  line_no = 1;
  while (std::getline(pf, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (static_cast<int>(f.size()) != 4 + m)
      throw ValidationError("pixel file: expected " + std::to_string(4 + m) +
                            " fields at line " + std::to_string(line_no));
    Pixel px;
    px.pixel_id = static_cast<int>(parse_int(f[0], "pixel_id", line_no));
    px.row = static_cast<int>(parse_int(f[1], "row", line_no));
    px.col = static_cast<int>(parse_int(f[2], "col", line_no));
    px.ward_id = static_cast<int>(parse_int(f[3], "ward_id", line_no));
    grid.pixels.push_back(px);
    for (int k = 0; k < m; ++k) {
      double v = parse_double(f[4 + k], "covariate " + cov_names[k], line_no);
      if (do_log1p[k]) {
        if (v < -1.0 + 1e-300)
          throw ValidationError("log1p transform undefined for value " + f[4 + k]);
        v = std::log1p(v);
      }
      cov_data.push_back(v);
    }
  }
  const int P = grid.num_pixels();
  if (P == 0) throw ValidationError("pixel file has no rows: " + pixel_file);

  // pixel ids must be unique and contiguous 0..P-1
  {
    std::vector<bool> seen(P, false);
    for (const auto& px : grid.pixels) {
      if (px.pixel_id < 0 || px.pixel_id >= P)
        throw ValidationError("pixel_id " + std::to_string(px.pixel_id) +
                              " outside 0.." + std::to_string(P - 1));
      if (seen[px.pixel_id])
        throw ValidationError("duplicate pixel_id " + std::to_string(px.pixel_id));
      seen[px.pixel_id] = true;
    }
  }
  // reorder rows so that index == pixel_id
  {
    std::vector<Pixel> ordered(P);
    Matrix X(P, m + 1);
    for (int r = 0; r < P; ++r) {
      const Pixel& px = grid.pixels[r];
      ordered[px.pixel_id] = px;
      X(px.pixel_id, 0) = 1.0;
      for (int k = 0; k < m; ++k) X(px.pixel_id, k + 1) = cov_data[r * m + k];
    }
    grid.pixels = std::move(ordered);
    grid.covariates = std::move(X);
  }
  grid.covariate_names.assign(1, "intercept");
  grid.covariate_names.insert(grid.covariate_names.end(), cov_names.begin(), cov_names.end());

  if (options.standardize) {
    for (int k = 1; k <= m; ++k) {
      auto col = grid.covariates.col(k);
      const double mean = col.mean();
      const double sd = std::sqrt((col.array() - mean).square().sum() /
                                  std::max(1, P - 1));
      col.array() -= mean;
      if (sd > 0.0) col /= sd;
    }
  }

  WardTable wards = build_ward_table(grid, populations);
  return {std::move(grid), std::move(wards)};
}

WardTable build_ward_table(const PixelGrid& grid,
                           const std::vector<std::pair<int, long long>>& populations) {
  const int L = static_cast<int>(populations.size());
  const int P = grid.num_pixels();
  const int q = grid.num_covariates();

  std::unordered_map<int, int> index_of;
  WardTable wt;
  wt.wards.resize(L);
  wt.members.resize(L);
  for (int i = 0; i < L; ++i) {
    wt.wards[i].ward_id = populations[i].first;
    wt.wards[i].population = populations[i].second;
    index_of[populations[i].first] = i;
  }
  wt.x_bar = Matrix::Zero(L, q);
  for (int j = 0; j < P; ++j) {
    const auto it = index_of.find(grid.pixels[j].ward_id);
    if (it == index_of.end())
      throw ValidationError("pixel " + std::to_string(j) + " references ward " +
                            std::to_string(grid.pixels[j].ward_id) +
                            " absent from ward file");
    wt.members[it->second].push_back(j);
    wt.x_bar.row(it->second) += grid.covariates.row(j);
  }
  for (int i = 0; i < L; ++i) {
    const int n = static_cast<int>(wt.members[i].size());
    if (n == 0)
      throw ValidationError("empty ward: ward " + std::to_string(wt.wards[i].ward_id) +
                            " has no pixels");
    wt.wards[i].pixel_count = n;
    wt.x_bar.row(i) /= static_cast<double>(n);
  }
  return wt;
}

EmpiricalLogIntensity empirical_log_intensity(const WardTable& wards,
                                              std::optional<double> correction) {
  const int L = wards.num_wards();
  const double c = correction.value_or(0.0);
  EmpiricalLogIntensity out;
  out.lambda_hat.resize(L);
  out.precision.resize(L);
  for (int i = 0; i < L; ++i) {
    const double y = static_cast<double>(wards.wards[i].population) + c;
    if (y <= 0.0)
      throw ValidationError("zero count ward: ward " +
                            std::to_string(wards.wards[i].ward_id) +
                            " (supply a pseudo-count correction)");
    out.lambda_hat[i] = std::log(y / wards.wards[i].pixel_count);
    out.precision[i] = y;
  }
  return out;
}

void write_pixel_csv(const std::string& path, const PixelGrid& grid) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << "pixel_id,row,col,ward_id";
  for (std::size_t k = 1; k < grid.covariate_names.size(); ++k)
    out << ',' << grid.covariate_names[k];
  out << '\n';
  char buf[32];
  for (int j = 0; j < grid.num_pixels(); ++j) {
    const Pixel& px = grid.pixels[j];
    out << px.pixel_id << ',' << px.row << ',' << px.col << ',' << px.ward_id;
    for (int k = 1; k < grid.num_covariates(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", grid.covariates(j, k));
      out << ',' << buf;
    }
    out << '\n';
  }
}

void write_ward_csv(const std::string& path, const WardTable& wards) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << "ward_id,population\n";
  for (const Ward& w : wards.wards) out << w.ward_id << ',' << w.population << '\n';
}

}  // namespace disagg
