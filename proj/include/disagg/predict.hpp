#pragma once

#include "disagg/kernel_cov.hpp"
#include "disagg/sampler.hpp"
#include "disagg/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace disagg {

// Per-pixel posterior summaries of lambda*(s_j).
struct PixelPosterior {
  Vector mean;  // length P
  Vector sd;    // length P
  int num_draws = 0;
  std::uint64_t seed = 0;
  std::vector<double> phi_grid;
  std::size_t peak_scratch_bytes = 0;  // largest transient buffer footprint
};

// Conditional mean of lambda_p* for one draw, restricted to a pixel block:
// X_block beta + Sp0_block Sigma00^-1 (lambda* - X~ beta).
Vector conditional_pixel_mean(const Vector& beta, const Vector& lambda_star,
                              const Matrix& x_block, const Matrix& sp0_block,
                              const CovarianceBundle& bundle, const Matrix& x_tilde);

// Diagonal of the conditional covariance for one draw:
// sigma2 * (1 - row' Sigma00^-1 row) per pixel, clamped at zero.
Vector conditional_pixel_var(double sigma2, const Matrix& sp0_block,
                             const CovarianceBundle& bundle);

// Monte Carlo posterior mean/sd over the chain via the total-expectation /
// total-variance decomposition. Computation is blocked by ward: within a
// ward, draws are grouped by phi index so each Sigma_p0 section is read once.
// Peak scratch memory is O(max ward size x L + chain), never O(P x B).
PixelPosterior pixel_posterior(const PosteriorChain& chain,
                               const std::vector<CovarianceBundle>& bundles,
                               const PixelGrid& grid, const WardTable& wards,
                               int threads = 0);

struct WardCheckRow {
  int ward_id;
  double aggregated_pixel_mean;  // log of ward-averaged exp(pixel mean)
  double chain_lambda_mean;      // posterior mean of lambda*_i
  double difference;
};

// Sanity report relating pixel-level estimates back to ward-level ones.
std::vector<WardCheckRow> aggregate_check(const PixelPosterior& posterior,
                                          const PixelGrid& grid, const WardTable& wards,
                                          const PosteriorChain& chain);

void write_pixel_posterior_csv(const std::string& path, const PixelGrid& grid,
                               const PixelPosterior& posterior);
void write_aggregate_check_csv(const std::string& path,
                               const std::vector<WardCheckRow>& rows);

// Binary PGM raster of a per-pixel statistic with linear min-max scaling;
// the scaling is recorded in `<path>.scale.txt`.
void write_pgm(const std::string& path, const PixelGrid& grid, const Vector& values);

}  // namespace disagg
