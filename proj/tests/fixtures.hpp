#pragma once

#include "disagg/grid_ingest.hpp"
#include "disagg/kernel_cov.hpp"
#include "disagg/types.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace disagg::testing {

// Builds a grid directly from (row, col, ward_id) triples with an
// intercept-only design unless covariate columns are supplied.
inline PixelGrid toy_grid(const std::vector<std::array<int, 3>>& cells,
                          const Matrix& extra_covariates = {}) {
  PixelGrid grid;
  const int P = static_cast<int>(cells.size());
  const int m = static_cast<int>(extra_covariates.cols());
  grid.pixels.resize(P);
  grid.covariates.resize(P, m + 1);
  grid.covariate_names.push_back("intercept");
  for (int k = 1; k <= m; ++k) grid.covariate_names.push_back("cov_" + std::to_string(k));
  for (int j = 0; j < P; ++j) {
    grid.pixels[j] = {j, cells[j][0], cells[j][1], cells[j][2]};
    grid.covariates(j, 0) = 1.0;
    for (int k = 0; k < m; ++k) grid.covariates(j, k + 1) = extra_covariates(j, k);
  }
  return grid;
}

inline WardTable toy_wards(const PixelGrid& grid,
                           const std::vector<std::pair<int, long long>>& populations) {
  return build_ward_table(grid, populations);
}

// Unique temp directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("disagg_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

}  // namespace disagg::testing
