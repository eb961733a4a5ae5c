#pragma once

#include "disagg/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace disagg {

struct LoadOptions {
  // Names of covariate columns to replace by log(1+x).
  std::vector<std::string> log1p_covariates;
  // Z-score each covariate column (intercept excluded).
  bool standardize = false;
  double pixel_side = 1.0;
};

// Parses the pixel and ward CSV files, applies covariate transforms,
// prepends the intercept column and computes ward-level aggregates.
//
// pixel CSV: pixel_id,row,col,ward_id,cov_1,...,cov_m
// ward CSV:  ward_id,population
std::pair<PixelGrid, WardTable> load_grid(const std::string& pixel_file,
                                          const std::string& ward_file,
                                          const LoadOptions& options = {});

// Builds the ward table from an already-assembled grid (used by the
// simulation path, where no files are involved). `populations` maps
// ward_id -> Y_i.
WardTable build_ward_table(const PixelGrid& grid,
                           const std::vector<std::pair<int, long long>>& populations);

// lambda_hat_i = log((Y_i + correction)/|A_i|), precision_i = Y_i + correction.
// Throws ValidationError on a zero-count ward when no correction is given.
EmpiricalLogIntensity empirical_log_intensity(const WardTable& wards,
                                              std::optional<double> correction = std::nullopt);

// Writers for the same CSV schemas load_grid reads (round-trip support).
void write_pixel_csv(const std::string& path, const PixelGrid& grid);
void write_ward_csv(const std::string& path, const WardTable& wards);

}  // namespace disagg
