#include "disagg/sampler.hpp"

#include "disagg/grid_ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

namespace disagg {

namespace {

// Draw from N(mean, Q^-1) given the Cholesky factor of the precision Q:
// x = mean + L^-T z.
Vector precision_normal_draw(const Eigen::LLT<Matrix>& llt, const Vector& mean, Rng& rng) {
  const int n = static_cast<int>(mean.size());
  Vector z(n);
  for (int i = 0; i < n; ++i) z[i] = rng.normal();
  return mean + llt.matrixU().solve(z);
}

}  // namespace

EmpiricalLogIntensity gaussian_likelihood(const WardTable& wards) {
  return empirical_log_intensity(wards);
}

Vector update_lambda_star(const Vector& beta, double sigma2, const CovarianceBundle& bundle,
                          const Matrix& x_tilde, const Vector& lambda_hat,
                          const Vector& weights, Rng& rng) {
  const int L = static_cast<int>(lambda_hat.size());
  const double inv_s2 = 1.0 / sigma2;

  const Matrix sigma00_inv = bundle.solve(Matrix(Matrix::Identity(L, L)));
  Matrix precision = inv_s2 * sigma00_inv;
  precision.diagonal() += weights;

  const Vector prior_mean_part = inv_s2 * (sigma00_inv * (x_tilde * beta));
  const Vector rhs = prior_mean_part + weights.cwiseProduct(lambda_hat);

  Eigen::LLT<Matrix> llt(precision);
  if (llt.info() != Eigen::Success)
    throw NumericalError("lambda* full-conditional precision not positive definite");
  const Vector mean = llt.solve(rhs);
  return precision_normal_draw(llt, mean, rng);
}

Vector update_beta(const Vector& lambda_star, double sigma2, const CovarianceBundle& bundle,
                   const Matrix& x_tilde, const Hyperpriors& priors, Rng& rng) {
  const double inv_s2 = 1.0 / sigma2;

  const Matrix sinv_x = bundle.solve(x_tilde);            // Sigma00^-1 X~
  Matrix precision = inv_s2 * (x_tilde.transpose() * sinv_x);
  precision.diagonal().array() += 1.0 / (priors.beta_sd * priors.beta_sd);
  const Vector rhs = inv_s2 * (sinv_x.transpose() * lambda_star);

  Eigen::LLT<Matrix> llt(precision);
  if (llt.info() != Eigen::Success)
    throw NumericalError("beta full-conditional precision not positive definite");
  const Vector mean = llt.solve(rhs);
  return precision_normal_draw(llt, mean, rng);
}

double sigma2_posterior_shape(const Hyperpriors& priors, int num_wards) {
  return priors.ig_shape + 0.5 * num_wards;
}

double sigma2_posterior_rate(const Vector& lambda_star, const Vector& beta,
                             const CovarianceBundle& bundle, const Matrix& x_tilde,
                             const Hyperpriors& priors) {
  const Vector resid = lambda_star - x_tilde * beta;
  return priors.ig_rate + 0.5 * resid.dot(bundle.solve(resid));
}

double update_sigma2(const Vector& lambda_star, const Vector& beta,
                     const CovarianceBundle& bundle, const Matrix& x_tilde,
                     const Hyperpriors& priors, Rng& rng) {
  const double shape = sigma2_posterior_shape(priors, static_cast<int>(lambda_star.size()));
  const double rate = sigma2_posterior_rate(lambda_star, beta, bundle, x_tilde, priors);
  if (!(rate > 0.0))
    throw NumericalError("sigma2 full-conditional rate is non-positive");
  return rng.inverse_gamma(shape, rate);
}

Vector phi_log_weights(const Vector& lambda_star, const Vector& beta, double sigma2,
                       const std::vector<CovarianceBundle>& bundles, const Matrix& x_tilde) {
  const int L = static_cast<int>(lambda_star.size());
  const Vector resid = lambda_star - x_tilde * beta;
  Vector logw(static_cast<int>(bundles.size()));
  for (std::size_t k = 0; k < bundles.size(); ++k) {
    // -1/2 log det(sigma2 Sigma00) - 1/2 resid' (sigma2 Sigma00)^-1 resid,
    // via one triangular solve against the cached factor.
    const Vector half = bundles[k].chol00.matrixL().solve(resid);
    logw[static_cast<int>(k)] = -0.5 * (L * std::log(sigma2) + bundles[k].logdet00) -
                                0.5 * half.squaredNorm() / sigma2;
  }
  return logw;
}

std::pair<double, int> update_phi(const Vector& lambda_star, const Vector& beta,
                                  double sigma2, const std::vector<CovarianceBundle>& bundles,
                                  const Matrix& x_tilde, Rng& rng) {
  Vector logw = phi_log_weights(lambda_star, beta, sigma2, bundles, x_tilde);
  const double max_lw = logw.maxCoeff();
  Vector w = (logw.array() - max_lw).exp();
  const double total = w.sum();

  const double u = rng.uniform() * total;
  double cum = 0.0;
  for (int k = 0; k < w.size(); ++k) {
    cum += w[k];
    if (u < cum || k == w.size() - 1) return {bundles[k].phi, k};
  }
  return {bundles.back().phi, static_cast<int>(bundles.size()) - 1};
}

PosteriorChain run_chain(const PixelGrid& grid, const WardTable& wards,
                         const std::vector<CovarianceBundle>& bundles,
                         const Hyperpriors& priors, const ChainConfig& config) {
  (void)grid;
  if (bundles.empty()) throw ValidationError("run_chain: no covariance bundles");
  if (config.samples < 1) throw ValidationError("run_chain: samples must be >= 1");

  const int L = wards.num_wards();
  const Matrix& x_tilde = wards.x_bar;
  const int q = static_cast<int>(x_tilde.cols());
  const EmpiricalLogIntensity eli = gaussian_likelihood(wards);

  // Initialization: OLS of lambda_hat on X~.
  Vector lambda_star = eli.lambda_hat;
  Vector beta =
      (x_tilde.transpose() * x_tilde).ldlt().solve(x_tilde.transpose() * eli.lambda_hat);
  const Vector ols_resid = eli.lambda_hat - x_tilde * beta;
  double sigma2 = std::max(1e-8, ols_resid.squaredNorm() / L);
  int phi_index = static_cast<int>(bundles.size()) / 2;
  double phi = bundles[phi_index].phi;

  Rng rng(config.seed);
  const int B = config.samples;
  PosteriorChain chain;
  chain.lambda_star.resize(B, L);
  chain.beta.resize(B, q);
  chain.sigma2.resize(B);
  chain.phi.resize(B);
  chain.phi_index.resize(B);
  chain.phi_grid.reserve(bundles.size());
  for (const auto& b : bundles) chain.phi_grid.push_back(b.phi);
  chain.seed = config.seed;

  const int total = config.burn_in + B * config.thin;
  int stored = 0;
  for (int it = 0; it < total; ++it) {
    const CovarianceBundle& bundle = bundles[phi_index];
    lambda_star = update_lambda_star(beta, sigma2, bundle, x_tilde, eli.lambda_hat,
                                     eli.precision, rng);
    beta = update_beta(lambda_star, sigma2, bundle, x_tilde, priors, rng);
    sigma2 = update_sigma2(lambda_star, beta, bundle, x_tilde, priors, rng);
    std::tie(phi, phi_index) = update_phi(lambda_star, beta, sigma2, bundles, x_tilde, rng);

    const int post = it - config.burn_in;
    if (post >= 0 && post % config.thin == 0 && stored < B) {
      chain.lambda_star.row(stored) = lambda_star;
      chain.beta.row(stored) = beta;
      chain.sigma2[stored] = sigma2;
      chain.phi[stored] = phi;
      chain.phi_index[stored] = phi_index;
      ++stored;
    }
  }
  return chain;
}

namespace {

constexpr char kChainMagic[4] = {'D', 'S', 'G', 'S'};
constexpr std::uint32_t kChainVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void write_chain(const std::string& path, const PosteriorChain& chain) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write chain file: " + path);
  out.write(kChainMagic, 4);
  put(out, kChainVersion);
  put(out, static_cast<std::uint32_t>(chain.num_wards()));
  put(out, static_cast<std::uint32_t>(chain.num_coefs() - 1));  // m
  put(out, static_cast<std::uint32_t>(chain.num_draws()));
  put(out, static_cast<std::uint32_t>(chain.phi_grid.size()));
  put(out, chain.seed);
  for (const double v : chain.phi_grid) put(out, v);
  for (int b = 0; b < chain.num_draws(); ++b) {
    for (int i = 0; i < chain.num_wards(); ++i) put(out, chain.lambda_star(b, i));
    for (int k = 0; k < chain.num_coefs(); ++k) put(out, chain.beta(b, k));
    put(out, chain.sigma2[b]);
    put(out, chain.phi[b]);
    put(out, static_cast<std::int32_t>(chain.phi_index[b]));
  }
  if (!out) throw ValidationError("short write to chain file: " + path);
}

PosteriorChain read_chain(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open chain file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kChainMagic, 4) != 0)
    throw ValidationError("bad chain file magic: " + path);
  if (get<std::uint32_t>(in) != kChainVersion)
    throw ValidationError("unsupported chain file version: " + path);
  const int L = static_cast<int>(get<std::uint32_t>(in));
  const int m = static_cast<int>(get<std::uint32_t>(in));
  const int B = static_cast<int>(get<std::uint32_t>(in));
  const int n_phi = static_cast<int>(get<std::uint32_t>(in));
  PosteriorChain chain;
  chain.seed = get<std::uint64_t>(in);
  chain.phi_grid.resize(n_phi);
  for (double& v : chain.phi_grid) v = get<double>(in);
  chain.lambda_star.resize(B, L);
  chain.beta.resize(B, m + 1);
  chain.sigma2.resize(B);
  chain.phi.resize(B);
  chain.phi_index.resize(B);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < L; ++i) chain.lambda_star(b, i) = get<double>(in);
    for (int k = 0; k <= m; ++k) chain.beta(b, k) = get<double>(in);
    chain.sigma2[b] = get<double>(in);
    chain.phi[b] = get<double>(in);
    chain.phi_index[b] = get<std::int32_t>(in);
  }
  if (!in) throw ValidationError("truncated chain file: " + path);
  return chain;
}

namespace {

struct Summary {
  double mean, sd, lo, hi;
};

Summary summarize(Vector draws) {
  const int n = static_cast<int>(draws.size());
  Summary s{};
  s.mean = draws.mean();
  s.sd = n > 1 ? std::sqrt((draws.array() - s.mean).square().sum() / (n - 1)) : 0.0;
  std::sort(draws.begin(), draws.end());
  const auto q = [&](double p) {
    const double idx = p * (n - 1);
    const int lo = static_cast<int>(idx);
    const int hi = std::min(n - 1, lo + 1);
    return draws[lo] + (idx - lo) * (draws[hi] - draws[lo]);
  };
  s.lo = q(0.025);
  s.hi = q(0.975);
  return s;
}

void print_summary_row(std::ofstream& out, const std::string& name, const Summary& s) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g\n", name.c_str(), s.mean, s.sd,
                s.lo, s.hi);
  out << buf;
}

}  // namespace

void write_chain_summary(const std::string& path, const PosteriorChain& chain,
                         const std::vector<std::string>& coef_names) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write summary file: " + path);
  out << "parameter,post_mean,post_sd,ci_lower,ci_upper\n";
  for (int k = 0; k < chain.num_coefs(); ++k) {
    const std::string name = k < static_cast<int>(coef_names.size())
                                 ? "beta_" + std::to_string(k) + "(" + coef_names[k] + ")"
                                 : "beta_" + std::to_string(k);
    print_summary_row(out, name, summarize(chain.beta.col(k)));
  }
  print_summary_row(out, "sigma2", summarize(chain.sigma2));
  print_summary_row(out, "phi", summarize(chain.phi));
  // Discrete posterior over the phi grid.
  for (std::size_t g = 0; g < chain.phi_grid.size(); ++g) {
    const double p =
        (chain.phi_index.array() == static_cast<int>(g)).cast<double>().sum() /
        chain.num_draws();
    char buf[96];
    std::snprintf(buf, sizeof(buf), "phi_prob_%g,%.9g,0,0,0\n", chain.phi_grid[g], p);
    out << buf;
  }
}

void write_trace(const std::string& path, const PosteriorChain& chain,
                 const std::vector<int>& lambda_indices) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write trace file: " + path);
  out << "iteration";
  for (int k = 0; k < chain.num_coefs(); ++k) out << ",beta_" << k;
  out << ",sigma2,phi";
  for (const int i : lambda_indices) out << ",lambda_star_" << i;
  out << '\n';
  char buf[32];
  for (int b = 0; b < chain.num_draws(); ++b) {
    out << b;
    const auto emit = [&](double v) {
      std::snprintf(buf, sizeof(buf), ",%.9g", v);
      out << buf;
    };
    for (int k = 0; k < chain.num_coefs(); ++k) emit(chain.beta(b, k));
    emit(chain.sigma2[b]);
    emit(chain.phi[b]);
    for (const int i : lambda_indices) {
      if (i < 0 || i >= chain.num_wards())
        throw ValidationError("trace lambda index out of range: " + std::to_string(i));
      emit(chain.lambda_star(b, i));
    }
    out << '\n';
  }
}

}  // namespace disagg
