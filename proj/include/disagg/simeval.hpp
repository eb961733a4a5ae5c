#pragma once

#include "disagg/baselines.hpp"
#include "disagg/predict.hpp"
#include "disagg/sampler.hpp"
#include "disagg/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace disagg {

enum class SettingKind { S1, S2, S3, Custom };

struct SimSetting {
  SettingKind kind = SettingKind::S1;
  double amplitude = 0.0;  // 0 for S1, 0.05 for S2, 0.1 for S3
  Vector beta_true;
  std::uint64_t seed = 0;

  static SimSetting named(const std::string& name, Vector beta_true, std::uint64_t seed);
  std::string name() const;
};

// True log-intensity surface and one realization of the ward counts.
struct SimulatedData {
  Vector truth;                 // P, log lambda(s_j)
  std::vector<long long> counts;  // L, ward counts in ward order
};

// Per pixel, log lambda(s) = X(s)' beta + a sin(2 pi s1*) + a cos(2 pi s2*)
// with s1*, s2* the row/col scaled by their maxima; ward counts are Poisson
// with mean equal to the pixel sum of exp(log lambda).
SimulatedData simulate(const SimSetting& setting, const PixelGrid& grid,
                       const WardTable& wards, Rng& rng);

// Synthetic grid: rows x cols pixels with smooth deterministic covariate
// surfaces plus seeded noise, tiled into wards_rows x wards_cols blocks.
PixelGrid make_synthetic_grid(int rows, int cols, int ward_rows, int ward_cols,
                              int num_covariates, std::uint64_t seed);

struct MetricReport {
  double rmse = 0.0;
  double mad = 0.0;
  double pos_sd = 0.0;
  double cover = 0.0;
  double dic = 0.0;
  double waic = 0.0;
  double time_seconds = 0.0;
};

// Seven Table-2 measures: pixel-level RMSE/MAD/PosSD/Cover against the
// truth, ward-level Poisson DIC and WAIC over the chain.
MetricReport metrics(const PixelPosterior& estimated, const Vector& truth,
                     const PosteriorChain& chain, const WardTable& wards);

struct VariogramBin {
  double h = 0.0;        // mean pair distance within the bin
  double gamma = 0.0;    // semivariance
  long long n_pairs = 0;
};

struct VariogramFit {
  double sill = 0.0;
  double range = 0.0;
  double nugget = 0.0;
  bool spatial_structure = true;  // false when the fit degenerates to nugget-only
};

struct Variogram {
  std::vector<VariogramBin> bins;
  int dropped_empty_bins = 0;
  std::optional<VariogramFit> fit;
};

// gamma(h) = sum (Z_i - Z_j)^2 / (2 |N(h)|), binned by centroid distance.
Variogram empirical_variogram(const Vector& residuals, const Matrix& centroids,
                              int n_bins, double max_dist);

// Weighted least squares of gamma(h) against nugget + sill (1 - exp(-h/range)),
// weights n_pairs/h^2; range profiled by deterministic multi-start 1-D search.
VariogramFit fit_exponential_variogram(const Variogram& vg);

struct StudyConfig {
  std::vector<std::string> settings;  // "s1","s2","s3"
  std::vector<std::string> models;    // "gp","wn","laplace","bayesglm"
  int replicates = 20;
  int rows = 100, cols = 100;
  int ward_rows = 5, ward_cols = 4;
  int num_covariates = 2;
  Vector beta_true;       // empty -> built-in default
  double phi_fixed = 10.0;  // single-phi mode; <=0 enables the full grid
  PhiGrid phi_grid;         // used only when phi_fixed <= 0
  int burn_in = 500;
  int samples = 1500;
  std::uint64_t seed = 1;
  int threads = 0;
};

StudyConfig load_study_config(const std::string& path);

struct StudyRow {
  std::string setting;
  std::string model;
  int replicates_done = 0;
  int replicates_failed = 0;
  MetricReport avg;
};

// Simulates `replicates` datasets per setting, fits every model, averages
// the metrics. Deterministic given the master seed.
std::vector<StudyRow> run_study(const StudyConfig& config);

void write_study_csv(const std::string& path, const std::vector<StudyRow>& rows);
void write_variogram_csv(const std::string& path, const Variogram& vg);

}  // namespace disagg
