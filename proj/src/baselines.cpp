#include "disagg/baselines.hpp"

#include "disagg/grid_ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace disagg {

BaselineKind parse_baseline(const std::string& name) {
  if (name == "bayesglm") return BaselineKind::BayesGLM;
  if (name == "laplace") return BaselineKind::Laplace;
  if (name == "wn") return BaselineKind::LaplaceWN;
  throw ValidationError("unknown baseline model '" + name + "' (want bayesglm|laplace|wn)");
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

GlmFit fit_poisson_glm(const WardTable& wards, int max_iter, double tol) {
  const int L = wards.num_wards();
  const Matrix& X = wards.x_bar;
  const int q = static_cast<int>(X.cols());
  const Vector y = wards.counts();
  const Vector offset = wards.pixel_counts().array().log();

  GlmFit fit;
  fit.coef = Vector::Zero(q);
  // Start from the intercept-only MLE.
  fit.coef[0] = std::log(std::max(1e-12, y.sum() / wards.pixel_counts().sum()));

  double deviance = std::numeric_limits<double>::infinity();
  Matrix info(q, q);
  for (fit.iterations = 1; fit.iterations <= max_iter; ++fit.iterations) {
    const Vector eta = offset + X * fit.coef;
    const Vector mu = eta.array().exp();
    // working response and weights of the IRLS step
    const Vector z = (eta - offset).array() + (y - mu).array() / mu.array();
    info = X.transpose() * mu.asDiagonal() * X;
    Eigen::LDLT<Matrix> ldlt(info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw NumericalError("rank-deficient design in fit_poisson_glm");
    fit.coef = ldlt.solve(X.transpose() * (mu.asDiagonal() * z));

    double dev = 0.0;
    for (int i = 0; i < L; ++i) {
      const double mui = std::exp(offset[i] + X.row(i).dot(fit.coef));
      dev += 2.0 * (y[i] > 0.0 ? y[i] * std::log(y[i] / mui) - (y[i] - mui) : mui);
    }
    if (std::abs(dev - deviance) < tol * (std::abs(dev) + 0.1)) {
      deviance = dev;
      fit.converged = true;
      break;
    }
    deviance = dev;
  }
  if (!fit.converged)
    throw NumericalError("fit_poisson_glm did not converge in " + std::to_string(max_iter) +
                         " iterations");

  const Matrix cov = info.ldlt().solve(Matrix::Identity(q, q));
  fit.se = cov.diagonal().array().sqrt();
  fit.z = fit.coef.array() / fit.se.array();
  fit.p.resize(q);
  for (int k = 0; k < q; ++k) fit.p[k] = 2.0 * (1.0 - normal_cdf(std::abs(fit.z[k])));
  return fit;
}

void write_glm_csv(const std::string& path, const GlmFit& fit,
                   const std::vector<std::string>& coef_names) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << "predictor,estimate,std_error,z_value,p_value\n";
  char buf[160];
  for (int k = 0; k < fit.coef.size(); ++k) {
    const std::string name =
        k < static_cast<int>(coef_names.size()) ? coef_names[k] : "cov_" + std::to_string(k);
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g\n", name.c_str(), fit.coef[k],
                  fit.se[k], fit.z[k], fit.p[k]);
    out << buf;
  }
}

CovarianceBundle white_noise_bundle(const PixelGrid& grid, const WardTable& wards,
                                    double jitter) {
  const int L = wards.num_wards();
  const int P = grid.num_pixels();
  CovarianceBundle b;
  b.phi = 0.0;  // placeholder; the WN model has no range parameter
  b.sigma00 = Matrix::Zero(L, L);
  for (int i = 0; i < L; ++i) b.sigma00(i, i) = 1.0 / wards.wards[i].pixel_count;
  factor_bundle(b, jitter);
  Matrix sp0 = Matrix::Zero(P, L);
  for (int i = 0; i < L; ++i)
    for (const int j : wards.members[i]) sp0(j, i) = 1.0 / wards.wards[i].pixel_count;
  b.sigma_p0 = std::make_shared<DenseSp0Store>(std::move(sp0));
  return b;
}

namespace {

PosteriorChain fit_laplace(const WardTable& wards, const Hyperpriors& priors,
                           const ChainConfig& config) {
  // eta == 0: closed-form conjugate posterior of beta against the working
  // likelihood N(lambda_hat; X~ beta, diag(1/Y)); sampled for interface
  // uniformity. No variance parameter exists in this model.
  const EmpiricalLogIntensity eli = empirical_log_intensity(wards);
  const Matrix& X = wards.x_bar;
  const int L = wards.num_wards();
  const int q = static_cast<int>(X.cols());

  Matrix precision = X.transpose() * eli.precision.asDiagonal() * X;
  precision.diagonal().array() += 1.0 / (priors.beta_sd * priors.beta_sd);
  Eigen::LLT<Matrix> llt(precision);
  if (llt.info() != Eigen::Success)
    throw NumericalError("Laplace baseline: posterior precision not positive definite");
  const Vector mean = llt.solve(X.transpose() * eli.precision.cwiseProduct(eli.lambda_hat));

  Rng rng(config.seed);
  const int B = config.samples;
  PosteriorChain chain;
  chain.beta.resize(B, q);
  chain.lambda_star.resize(B, L);
  chain.sigma2 = Vector::Ones(B);
  chain.phi = Vector::Zero(B);
  chain.phi_index = VectorI::Zero(B);
  chain.seed = config.seed;
  Vector z(q);
  for (int b = 0; b < B; ++b) {
    for (int k = 0; k < q; ++k) z[k] = rng.normal();
    const Vector draw = mean + llt.matrixU().solve(z);
    chain.beta.row(b) = draw;
    chain.lambda_star.row(b) = (X * draw).transpose();
  }
  return chain;
}

PosteriorChain fit_bayes_glm(const WardTable& wards, const Hyperpriors& priors,
                             const ChainConfig& config) {
  const Matrix& X = wards.x_bar;
  const int L = wards.num_wards();
  const int q = static_cast<int>(X.cols());
  const Vector y = wards.counts();
  const Vector log_area = wards.pixel_counts().array().log();

  const auto log_post = [&](const Vector& beta) {
    const Vector eta = log_area + X * beta;
    double lp = (y.array() * eta.array() - eta.array().exp()).sum();
    lp -= 0.5 * beta.squaredNorm() / (priors.beta_sd * priors.beta_sd);
    return lp;
  };

  // Start at the MLE when available.
  Vector beta = Vector::Zero(q);
  try {
    beta = fit_poisson_glm(wards).coef;
  } catch (const NumericalError&) {
    beta[0] = std::log(std::max(1e-12, y.sum() / wards.pixel_counts().sum()));
  }

  Rng rng(config.seed);
  Vector step = Vector::Constant(q, 0.1);
  double lp = log_post(beta);

  const int B = config.samples;
  PosteriorChain chain;
  chain.beta.resize(B, q);
  chain.lambda_star.resize(B, L);
  chain.sigma2 = Vector::Ones(B);
  chain.phi = Vector::Zero(B);
  chain.phi_index = VectorI::Zero(B);
  chain.seed = config.seed;

  // Componentwise random-walk Metropolis; step sizes adapt in windows of 50
  // during burn-in toward the 0.23-0.44 acceptance band.
  VectorI accepted = VectorI::Zero(q);
  const int adapt_window = 50;
  const int total = config.burn_in + B * config.thin;
  int stored = 0;
  for (int it = 0; it < total; ++it) {
    for (int k = 0; k < q; ++k) {
      Vector prop = beta;
      prop[k] += step[k] * rng.normal();
      const double lp_prop = log_post(prop);
      if (std::log(rng.uniform_pos()) < lp_prop - lp) {
        beta = prop;
        lp = lp_prop;
        ++accepted[k];
      }
    }
    if (it < config.burn_in && (it + 1) % adapt_window == 0) {
      for (int k = 0; k < q; ++k) {
        const double rate = static_cast<double>(accepted[k]) / adapt_window;
        if (rate < 0.23) step[k] *= 0.7;
        else if (rate > 0.44) step[k] *= 1.4;
      }
      accepted.setZero();
    }
    const int post = it - config.burn_in;
    if (post >= 0 && post % config.thin == 0 && stored < B) {
      chain.beta.row(stored) = beta;
      chain.lambda_star.row(stored) = (X * beta).transpose();
      ++stored;
    }
  }
  return chain;
}

}  // namespace

PosteriorChain fit_baseline(BaselineKind kind, const PixelGrid& grid, const WardTable& wards,
                            const Hyperpriors& priors, const ChainConfig& config) {
  switch (kind) {
    case BaselineKind::Laplace:
      return fit_laplace(wards, priors, config);
    case BaselineKind::BayesGLM:
      return fit_bayes_glm(wards, priors, config);
    case BaselineKind::LaplaceWN: {
      std::vector<CovarianceBundle> bundles;
      bundles.push_back(white_noise_bundle(grid, wards));
      return run_chain(grid, wards, bundles, priors, config);
    }
  }
  throw ValidationError("unreachable baseline kind");
}

PixelPosterior baseline_pixel_posterior(BaselineKind kind, const PosteriorChain& chain,
                                        const PixelGrid& grid, const WardTable& wards) {
  const int B = chain.num_draws();
  const int P = grid.num_pixels();
  if (B < 2) throw ValidationError("baseline_pixel_posterior needs at least 2 draws");

  if (kind == BaselineKind::LaplaceWN) {
    std::vector<CovarianceBundle> bundles;
    bundles.push_back(white_noise_bundle(grid, wards));
    return pixel_posterior(chain, bundles, grid, wards);
  }

  // No latent field: the pixel posterior is that of X beta.
  PixelPosterior out;
  out.mean.resize(P);
  out.sd.resize(P);
  out.num_draws = B;
  out.seed = chain.seed;
  const Vector beta_mean = chain.beta.colwise().mean();
  const Matrix centered = chain.beta.rowwise() - beta_mean.transpose();
  const Matrix beta_cov = centered.transpose() * centered / (B - 1);
  for (int j = 0; j < P; ++j) {
    const Vector x = grid.covariates.row(j);
    out.mean[j] = x.dot(beta_mean);
    out.sd[j] = std::sqrt(std::max(0.0, x.dot(beta_cov * x)));
  }
  return out;
}

}  // namespace disagg
