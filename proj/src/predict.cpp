#include "disagg/predict.hpp"

#include "disagg/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>

namespace disagg {

Vector conditional_pixel_mean(const Vector& beta, const Vector& lambda_star,
                              const Matrix& x_block, const Matrix& sp0_block,
                              const CovarianceBundle& bundle, const Matrix& x_tilde) {
  const Vector resid = lambda_star - x_tilde * beta;
  return x_block * beta + sp0_block * bundle.solve(resid);
}

Vector conditional_pixel_var(double sigma2, const Matrix& sp0_block,
                             const CovarianceBundle& bundle) {
  // q_j = row_j' Sigma00^-1 row_j via one triangular solve per block.
  const Matrix half = bundle.chol00.matrixL().solve(sp0_block.transpose());
  Vector out(sp0_block.rows());
  for (int j = 0; j < sp0_block.rows(); ++j)
    out[j] = std::max(0.0, sigma2 * (1.0 - half.col(j).squaredNorm()));
  return out;
}

PixelPosterior pixel_posterior(const PosteriorChain& chain,
                               const std::vector<CovarianceBundle>& bundles,
                               const PixelGrid& grid, const WardTable& wards,
                               int threads) {
  const int B = chain.num_draws();
  const int L = wards.num_wards();
  const int P = grid.num_pixels();
  if (B < 2) throw ValidationError("pixel_posterior needs at least 2 draws");
  if (chain.num_wards() != L) throw ValidationError("chain/ward dimension mismatch");

  // Draws grouped by phi index so each Sigma_p0 section is read once per ward.
  std::vector<std::vector<int>> draws_by_phi(bundles.size());
  for (int b = 0; b < B; ++b) {
    const int k = chain.phi_index[b];
    if (k < 0 || k >= static_cast<int>(bundles.size()))
      throw ValidationError("chain references a phi index with no bundle");
    draws_by_phi[k].push_back(b);
  }

  // Per-draw ward-space residual solves, shared by every ward block:
  // t^(b) = Sigma00(phi_b)^-1 (lambda*^(b) - X~ beta^(b)).   (B x L, small)
  Matrix resid_solved(B, L);
  for (std::size_t k = 0; k < bundles.size(); ++k) {
    for (const int b : draws_by_phi[k]) {
      const Vector resid =
          chain.lambda_star.row(b).transpose() - wards.x_bar * chain.beta.row(b).transpose();
      resid_solved.row(b) = bundles[k].solve(resid).transpose();
    }
  }

  PixelPosterior out;
  out.mean.resize(P);
  out.sd.resize(P);
  out.num_draws = B;
  out.seed = chain.seed;
  out.phi_grid = chain.phi_grid;

  std::size_t peak_bytes = static_cast<std::size_t>(B) * L * sizeof(double);
  std::mutex peak_mutex;

  parallel_for(L, threads, [&](int w) {
    const std::vector<int>& ids = wards.members[w];
    const int nw = static_cast<int>(ids.size());

    Matrix x_block(nw, grid.num_covariates());
    for (int r = 0; r < nw; ++r) x_block.row(r) = grid.covariates.row(ids[r]);

    Vector sum_m = Vector::Zero(nw);
    Vector sum_m2 = Vector::Zero(nw);
    Vector sum_v = Vector::Zero(nw);

    Matrix sp0_block;
    std::size_t ward_bytes = 0;
    for (std::size_t k = 0; k < bundles.size(); ++k) {
      if (draws_by_phi[k].empty()) continue;
      bundles[k].sigma_p0->read_rows(ids, sp0_block);
      const Matrix half = bundles[k].chol00.matrixL().solve(sp0_block.transpose());
      Vector q(nw);
      for (int j = 0; j < nw; ++j) q[j] = half.col(j).squaredNorm();
      ward_bytes = std::max(ward_bytes,
                            static_cast<std::size_t>(nw) * L * 2 * sizeof(double) +
                                static_cast<std::size_t>(nw) * 5 * sizeof(double) +
                                static_cast<std::size_t>(nw) * grid.num_covariates() *
                                    sizeof(double));

      for (const int b : draws_by_phi[k]) {
        const Vector m = x_block * chain.beta.row(b).transpose() +
                         sp0_block * resid_solved.row(b).transpose();
        sum_m += m;
        sum_m2 += m.cwiseProduct(m);
        const double s2 = chain.sigma2[b];
        for (int j = 0; j < nw; ++j) sum_v[j] += std::max(0.0, s2 * (1.0 - q[j]));
      }
    }

    for (int r = 0; r < nw; ++r) {
      const double mean = sum_m[r] / B;
      // within-draw conditional variance + between-draw variance (B-1 denom)
      const double between =
          std::max(0.0, (sum_m2[r] - B * mean * mean) / (B - 1));
      const double var = sum_v[r] / B + between;
      out.mean[ids[r]] = mean;
      out.sd[ids[r]] = std::sqrt(std::max(0.0, var));
    }

    std::lock_guard<std::mutex> lock(peak_mutex);
    peak_bytes = std::max(peak_bytes, ward_bytes);
  });

  out.peak_scratch_bytes = peak_bytes;
  return out;
}

std::vector<WardCheckRow> aggregate_check(const PixelPosterior& posterior,
                                          const PixelGrid& grid, const WardTable& wards,
                                          const PosteriorChain& chain) {
  (void)grid;
  std::vector<WardCheckRow> rows;
  rows.reserve(wards.num_wards());
  for (int w = 0; w < wards.num_wards(); ++w) {
    double s = 0.0;
    for (const int j : wards.members[w]) s += std::exp(posterior.mean[j]);
    WardCheckRow row;
    row.ward_id = wards.wards[w].ward_id;
    row.aggregated_pixel_mean = std::log(s / wards.wards[w].pixel_count);
    row.chain_lambda_mean = chain.lambda_star.col(w).mean();
    row.difference = row.aggregated_pixel_mean - row.chain_lambda_mean;
    rows.push_back(row);
  }
  return rows;
}

void write_pixel_posterior_csv(const std::string& path, const PixelGrid& grid,
                               const PixelPosterior& posterior) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << "pixel_id,row,col,ward_id,post_mean,post_sd\n";
  char buf[64];
  for (int j = 0; j < grid.num_pixels(); ++j) {
    const Pixel& px = grid.pixels[j];
    out << px.pixel_id << ',' << px.row << ',' << px.col << ',' << px.ward_id;
    std::snprintf(buf, sizeof(buf), ",%.9g,%.9g\n", posterior.mean[j], posterior.sd[j]);
    out << buf;
  }
}

void write_aggregate_check_csv(const std::string& path,
                               const std::vector<WardCheckRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << "ward_id,aggregated_pixel_mean,chain_lambda_mean,difference\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", r.ward_id,
                  r.aggregated_pixel_mean, r.chain_lambda_mean, r.difference);
    out << buf;
  }
}

void write_pgm(const std::string& path, const PixelGrid& grid, const Vector& values) {
  int max_row = 0, max_col = 0;
  for (const auto& px : grid.pixels) {
    max_row = std::max(max_row, px.row);
    max_col = std::max(max_col, px.col);
  }
  const double lo = values.minCoeff();
  const double hi = values.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;

  std::vector<unsigned char> img(static_cast<std::size_t>(max_row + 1) * (max_col + 1), 0);
  for (int j = 0; j < grid.num_pixels(); ++j) {
    const auto& px = grid.pixels[j];
    const double t = (values[j] - lo) / span;
    img[static_cast<std::size_t>(px.row) * (max_col + 1) + px.col] =
        static_cast<unsigned char>(std::lround(255.0 * t));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << "P5\n" << (max_col + 1) << ' ' << (max_row + 1) << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data()),
            static_cast<std::streamsize>(img.size()));

  std::ofstream scale(path + ".scale.txt");
  char buf[96];
  std::snprintf(buf, sizeof(buf), "min %.9g\nmax %.9g\n", lo, hi);
  scale << buf;
}

}  // namespace disagg
