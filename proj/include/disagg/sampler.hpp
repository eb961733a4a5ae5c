#pragma once

#include "disagg/kernel_cov.hpp"
#include "disagg/rng.hpp"
#include "disagg/types.hpp"

#include <string>
#include <vector>

namespace disagg {

struct Hyperpriors {
  double beta_sd = 100.0;  // beta ~ N(0, beta_sd^2 I)
  double ig_shape = 0.01;  // sigma2 ~ Inverse-Gamma(ig_shape, ig_rate)
  double ig_rate = 0.01;
  PhiGrid phi_grid;
};

struct ChainConfig {
  int burn_in = 500;
  int samples = 1500;
  std::uint64_t seed = 0;
  int thin = 1;
};

struct PosteriorChain {
  Matrix lambda_star;       // B x L
  Matrix beta;              // B x (m+1)
  Vector sigma2;            // B
  Vector phi;               // B
  VectorI phi_index;        // B, indices into phi_grid
  std::vector<double> phi_grid;
  std::uint64_t seed = 0;

  int num_draws() const { return static_cast<int>(lambda_star.rows()); }
  int num_wards() const { return static_cast<int>(lambda_star.cols()); }
  int num_coefs() const { return static_cast<int>(beta.cols()); }
};

// Working Gaussian likelihood from the Laplace approximation:
// lambda_hat ~ N(lambda*, diag(1/Y)), so the weights are the counts Y.
EmpiricalLogIntensity gaussian_likelihood(const WardTable& wards);

// One exact draw from the lambda* full conditional
// N(mu*, (sigma^-2 Sigma00^-1 + diag(Y))^-1).
Vector update_lambda_star(const Vector& beta, double sigma2, const CovarianceBundle& bundle,
                          const Matrix& x_tilde, const Vector& lambda_hat,
                          const Vector& weights, Rng& rng);

// One exact draw from the beta full conditional
// N(mu1, (sigma^-2 X~' Sigma00^-1 X~ + beta_sd^-2 I)^-1).
Vector update_beta(const Vector& lambda_star, double sigma2, const CovarianceBundle& bundle,
                   const Matrix& x_tilde, const Hyperpriors& priors, Rng& rng);

// Inverse-Gamma full-conditional parameters for sigma2.
double sigma2_posterior_shape(const Hyperpriors& priors, int num_wards);
double sigma2_posterior_rate(const Vector& lambda_star, const Vector& beta,
                             const CovarianceBundle& bundle, const Matrix& x_tilde,
                             const Hyperpriors& priors);

// Inverse-Gamma(shape + L/2, rate + quadform/2) draw for sigma2.
double update_sigma2(const Vector& lambda_star, const Vector& beta,
                     const CovarianceBundle& bundle, const Matrix& x_tilde,
                     const Hyperpriors& priors, Rng& rng);

// PPS draw over the candidate grid; weights are the N_L(lambda*; X~ beta,
// sigma2 Sigma00) densities, normalized in log space.
std::pair<double, int> update_phi(const Vector& lambda_star, const Vector& beta,
                                  double sigma2, const std::vector<CovarianceBundle>& bundles,
                                  const Matrix& x_tilde, Rng& rng);

// Log selection weights before normalization (exposed for testing).
Vector phi_log_weights(const Vector& lambda_star, const Vector& beta, double sigma2,
                       const std::vector<CovarianceBundle>& bundles, const Matrix& x_tilde);

// Full Gibbs run. Initialization: lambda* at the empirical log-intensities,
// beta at the OLS fit of lambda_hat on X~, sigma2 at the mean squared OLS
// residual, phi at the grid median. Sweep order: lambda*, beta, sigma2, phi.
PosteriorChain run_chain(const PixelGrid& grid, const WardTable& wards,
                         const std::vector<CovarianceBundle>& bundles,
                         const Hyperpriors& priors, const ChainConfig& config);

// Binary chain file (magic DSGS) plus CSV summary/trace emitters.
void write_chain(const std::string& path, const PosteriorChain& chain);
PosteriorChain read_chain(const std::string& path);
void write_chain_summary(const std::string& path, const PosteriorChain& chain,
                         const std::vector<std::string>& coef_names);
void write_trace(const std::string& path, const PosteriorChain& chain,
                 const std::vector<int>& lambda_indices);

}  // namespace disagg
