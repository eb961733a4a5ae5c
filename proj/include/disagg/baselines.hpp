#pragma once

#include "disagg/predict.hpp"
#include "disagg/sampler.hpp"
#include "disagg/types.hpp"

#include <string>

namespace disagg {

enum class BaselineKind { BayesGLM, Laplace, LaplaceWN };

BaselineKind parse_baseline(const std::string& name);  // "bayesglm" | "laplace" | "wn"

struct GlmFit {
  Vector coef;      // m+1
  Vector se;        // m+1
  Vector z;         // m+1
  Vector p;         // m+1
  bool converged = false;
  int iterations = 0;
};

// Frequentist Poisson regression Y_i ~ Poisson(|A_i| exp(x~_i' beta)) by
// IRLS with offset log|A_i|; standard errors from the inverse observed
// information, two-sided normal p-values.
GlmFit fit_poisson_glm(const WardTable& wards, int max_iter = 100, double tol = 1e-10);

void write_glm_csv(const std::string& path, const GlmFit& fit,
                   const std::vector<std::string>& coef_names);

// Comparison models sharing the main model's chain interface. The returned
// chain stores ward-level lambda* draws (equal to X~ beta for Laplace and
// BayesGLM) so that DIC/WAIC machinery applies uniformly.
PosteriorChain fit_baseline(BaselineKind kind, const PixelGrid& grid, const WardTable& wards,
                            const Hyperpriors& priors, const ChainConfig& config);

// Pixel-level posterior summaries for each baseline. Laplace and BayesGLM
// have no latent field: pixel mean/sd come from X beta draws alone.
// Laplace-WN uses its diagonal aggregation covariance.
PixelPosterior baseline_pixel_posterior(BaselineKind kind, const PosteriorChain& chain,
                                        const PixelGrid& grid, const WardTable& wards);

// The Laplace-WN model's bundle: Sigma00 = diag(1/|A_i|), Sigma_p0(j,i) =
// 1/|A_i| for member pixels, else 0.
CovarianceBundle white_noise_bundle(const PixelGrid& grid, const WardTable& wards,
                                    double jitter = 0.0);

}  // namespace disagg
