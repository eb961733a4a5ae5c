#include "disagg/baselines.hpp"

#include "disagg/rng.hpp"
#include "disagg/simeval.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>

using namespace disagg;

TEST_CASE("parse_baseline") {
  CHECK(parse_baseline("bayesglm") == BaselineKind::BayesGLM);
  CHECK(parse_baseline("laplace") == BaselineKind::Laplace);
  CHECK(parse_baseline("wn") == BaselineKind::LaplaceWN);
  CHECK_THROWS_AS(parse_baseline("gp2"), ValidationError);
}

TEST_CASE("intercept-only Poisson GLM has the closed-form rate estimate") {
  // beta0_hat = log(sum Y / sum |A|), se = 1/sqrt(sum Y)
  const PixelGrid grid = testing::toy_grid(
      {{0, 0, 1}, {0, 1, 1}, {0, 2, 1}, {1, 0, 2}, {1, 1, 2}});
  const WardTable wards = testing::toy_wards(grid, {{1, 21}, {2, 14}});
  const GlmFit fit = fit_poisson_glm(wards);
  REQUIRE(fit.converged);
  CHECK(fit.coef[0] == doctest::Approx(std::log(35.0 / 5.0)).epsilon(1e-9));
  CHECK(fit.se[0] == doctest::Approx(1.0 / std::sqrt(35.0)).epsilon(1e-9));
  CHECK(fit.z[0] == doctest::Approx(fit.coef[0] / fit.se[0]));
  CHECK(fit.p[0] < 1e-6);
}

TEST_CASE("Poisson GLM recovers generating coefficients within 3 standard errors") {
  const int rows = 12, cols = 12;
  const PixelGrid grid = make_synthetic_grid(rows, cols, 4, 4, 2, 99);
  Rng rng(2718);
  const Vector beta_true = (Vector(3) << 2.0, 0.6, -0.4).finished();

  // ward counts from the GLM's own generative model (flat within covariates)
  std::vector<std::vector<int>> members(16);
  for (const auto& px : grid.pixels) members[px.ward_id].push_back(px.pixel_id);
  std::vector<std::pair<int, long long>> pops;
  for (int i = 0; i < 16; ++i) {
    double mu = 0.0;
    for (const int j : members[i]) mu += std::exp(grid.covariates.row(j).dot(beta_true));
    pops.emplace_back(i, rng.poisson(mu));
  }
  const WardTable wards = testing::toy_wards(grid, pops);

  // refit on ward-averaged covariates; mean-model mismatch from averaging
  // inside the exponential is small for these smooth surfaces
  const GlmFit fit = fit_poisson_glm(wards);
  REQUIRE(fit.converged);
  for (int k = 0; k < 3; ++k)
    CHECK(std::abs(fit.coef[k] - beta_true[k]) < 3.0 * fit.se[k] + 0.05);
}

TEST_CASE("GLM pushes the rate toward zero for all-zero counts") {
  const PixelGrid grid = testing::toy_grid({{0, 0, 1}, {0, 1, 1}});
  const WardTable wards = testing::toy_wards(grid, {{1, 0}});
  const GlmFit fit = fit_poisson_glm(wards);
  CHECK(fit.converged);
  CHECK(fit.coef[0] < -20.0);
}

TEST_CASE("white_noise_bundle structure") {
  const PixelGrid grid = testing::toy_grid(
      {{0, 0, 1}, {0, 1, 1}, {0, 2, 1}, {1, 0, 2}, {1, 1, 2}});
  const WardTable wards = testing::toy_wards(grid, {{1, 9}, {2, 4}});
  const CovarianceBundle b = white_noise_bundle(grid, wards);

  CHECK(b.sigma00.rows() == 2);
  CHECK(b.sigma00(0, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(b.sigma00(1, 1) == doctest::Approx(1.0 / 2.0));
  CHECK(b.sigma00(0, 1) == 0.0);

  Matrix sp0;
  b.sigma_p0->read_rows(0, grid.num_pixels(), sp0);
  for (int j = 0; j < grid.num_pixels(); ++j) {
    const int own = grid.pixels[j].ward_id == 1 ? 0 : 1;
    CHECK(sp0(j, own) == doctest::Approx(1.0 / wards.wards[own].pixel_count));
    CHECK(sp0(j, 1 - own) == 0.0);
  }
}

TEST_CASE("white-noise pixel posterior is flat within each ward") {
  // no cross-ward borrowing: every pixel of a ward shares one mean/sd
  std::vector<std::array<int, 3>> cells;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) cells.push_back({r, c, c / 2});
  const PixelGrid grid = testing::toy_grid(cells);
  const WardTable wards = testing::toy_wards(grid, {{0, 120}, {1, 45}});
  Hyperpriors priors;
  ChainConfig cfg;
  cfg.burn_in = 100;
  cfg.samples = 300;
  cfg.seed = 17;
  const PosteriorChain chain = fit_baseline(BaselineKind::LaplaceWN, grid, wards, priors, cfg);
  const PixelPosterior post = baseline_pixel_posterior(BaselineKind::LaplaceWN, chain, grid, wards);
  for (int w = 0; w < 2; ++w) {
    const int ref = wards.members[w][0];
    for (const int j : wards.members[w]) {
      CHECK(post.mean[j] == doctest::Approx(post.mean[ref]).epsilon(1e-12));
      CHECK(post.sd[j] == doctest::Approx(post.sd[ref]).epsilon(1e-12));
    }
  }
  // two wards with very different counts get different levels
  CHECK(post.mean[wards.members[0][0]] != doctest::Approx(post.mean[wards.members[1][0]]));
}

TEST_CASE("Laplace baseline matches its closed-form Gaussian posterior") {
  // working model: lambda_hat ~ N(Xbar beta, diag(1/Y)), beta ~ N(0, 100^2 I)
  const PixelGrid grid = testing::toy_grid(
      {{0, 0, 1}, {0, 1, 1}, {1, 0, 2}, {1, 1, 2}, {2, 0, 3}, {2, 1, 3}},
      (Matrix(6, 1) << 0.1, 0.2, 0.5, 0.6, 0.9, 1.0).finished());
  const WardTable wards = testing::toy_wards(grid, {{1, 400}, {2, 900}, {3, 250}});
  Hyperpriors priors;
  ChainConfig cfg;
  cfg.burn_in = 0;
  cfg.samples = 60000;
  cfg.seed = 404;
  const PosteriorChain chain = fit_baseline(BaselineKind::Laplace, grid, wards, priors, cfg);

  const EmpiricalLogIntensity e = empirical_log_intensity(wards);
  const Matrix w = e.precision.asDiagonal();
  const Matrix prec = wards.x_bar.transpose() * w * wards.x_bar +
                      Matrix::Identity(2, 2) / (100.0 * 100.0);
  const Matrix cov_expect = prec.inverse();
  const Vector mean_expect = cov_expect * wards.x_bar.transpose() * w * e.lambda_hat;

  const Vector mean = chain.beta.colwise().mean();
  const Matrix centered = chain.beta.rowwise() - mean.transpose();
  const Matrix cov = centered.transpose() * centered / (chain.num_draws() - 1);
  for (int k = 0; k < 2; ++k)
    CHECK(std::abs(mean[k] - mean_expect[k]) <
          6.0 * std::sqrt(cov_expect(k, k) / 60000.0) + 1e-6);
  CHECK((cov - cov_expect).cwiseAbs().maxCoeff() < 0.1 * cov_expect.cwiseAbs().maxCoeff());
  // lambda* draws are the fitted regression means
  for (int b = 0; b < 5; ++b)
    CHECK((chain.lambda_star.row(b).transpose() -
           wards.x_bar * chain.beta.row(b).transpose())
              .cwiseAbs()
              .maxCoeff() < 1e-12);
}

TEST_CASE("Laplace pixel posterior interpolates the regression surface only") {
  const PixelGrid grid = testing::toy_grid(
      {{0, 0, 1}, {0, 1, 1}, {1, 0, 2}, {1, 1, 2}},
      (Matrix(4, 1) << 0.0, 1.0, 2.0, 3.0).finished());
  const WardTable wards = testing::toy_wards(grid, {{1, 300}, {2, 500}});
  Hyperpriors priors;
  ChainConfig cfg;
  cfg.burn_in = 0;
  cfg.samples = 2000;
  cfg.seed = 11;
  const PosteriorChain chain = fit_baseline(BaselineKind::Laplace, grid, wards, priors, cfg);
  const PixelPosterior post = baseline_pixel_posterior(BaselineKind::Laplace, chain, grid, wards);
  const Vector beta_mean = chain.beta.colwise().mean();
  for (int j = 0; j < 4; ++j)
    CHECK(post.mean[j] == doctest::Approx(grid.covariates.row(j).dot(beta_mean)).epsilon(1e-9));
  CHECK((post.sd.array() > 0).all());
}

TEST_CASE("adaptive BayesGLM concentrates at the MLE and mixes") {
  const PixelGrid grid = testing::toy_grid(
      {{0, 0, 1}, {0, 1, 1}, {1, 0, 2}, {1, 1, 2}, {2, 0, 3}, {2, 1, 3},
       {3, 0, 4}, {3, 1, 4}},
      (Matrix(8, 1) << -0.7, -0.5, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8).finished());
  const WardTable wards =
      testing::toy_wards(grid, {{1, 220}, {2, 340}, {3, 410}, {4, 590}});
  const GlmFit mle = fit_poisson_glm(wards);
  REQUIRE(mle.converged);

  Hyperpriors priors;
  ChainConfig cfg;
  cfg.burn_in = 2000;
  cfg.samples = 8000;
  cfg.seed = 321;
  const PosteriorChain chain = fit_baseline(BaselineKind::BayesGLM, grid, wards, priors, cfg);
  const Vector mean = chain.beta.colwise().mean();
  for (int k = 0; k < 2; ++k)
    CHECK(std::abs(mean[k] - mle.coef[k]) < 3.0 * mle.se[k]);
  // posterior sd of the same order as the frequentist standard error
  for (int k = 0; k < 2; ++k) {
    const Vector col = chain.beta.col(k);
    const double sd = std::sqrt((col.array() - col.mean()).square().sum() / (col.size() - 1));
    CHECK(sd > 0.3 * mle.se[k]);
    CHECK(sd < 3.0 * mle.se[k]);
  }
  // chain actually moves
  int changes = 0;
  for (int b = 1; b < chain.num_draws(); ++b)
    if (chain.beta(b, 0) != chain.beta(b - 1, 0)) ++changes;
  const double accept = static_cast<double>(changes) / (chain.num_draws() - 1);
  CHECK(accept > 0.1);
  CHECK(accept < 0.9);
}

TEST_CASE("baseline chains are deterministic in the seed") {
  const PixelGrid grid = testing::toy_grid({{0, 0, 1}, {0, 1, 1}, {1, 0, 2}, {1, 1, 2}});
  const WardTable wards = testing::toy_wards(grid, {{1, 50}, {2, 90}});
  Hyperpriors priors;
  ChainConfig cfg;
  cfg.burn_in = 50;
  cfg.samples = 100;
  cfg.seed = 8;
  for (const auto kind :
       {BaselineKind::BayesGLM, BaselineKind::Laplace, BaselineKind::LaplaceWN}) {
    const PosteriorChain a = fit_baseline(kind, grid, wards, priors, cfg);
    const PosteriorChain b = fit_baseline(kind, grid, wards, priors, cfg);
    CHECK(a.beta == b.beta);
    CHECK(a.lambda_star == b.lambda_star);
  }
}
