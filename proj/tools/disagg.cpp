#include "disagg/baselines.hpp"
#include "disagg/grid_ingest.hpp"
#include "disagg/kernel_cov.hpp"
#include "disagg/manifest.hpp"
#include "disagg/predict.hpp"
#include "disagg/sampler.hpp"
#include "disagg/simeval.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

constexpr const char* kVersion = "disagg 0.1.0";

std::string join_argv(int argc, char** argv) {
  std::ostringstream ss;
  for (int i = 0; i < argc; ++i) {
    if (i) ss << ' ';
    ss << argv[i];
  }
  return ss.str();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string default_cache_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("DISAGG_CACHE_DIR")) return env;
  return "";
}

struct CommonInputs {
  std::string pixels, wards, log1p;
  bool standardize = false;

  std::pair<disagg::PixelGrid, disagg::WardTable> load() const {
    disagg::LoadOptions opt;
    opt.log1p_covariates = split_list(log1p);
    opt.standardize = standardize;
    return disagg::load_grid(pixels, wards, opt);
  }
  void add_flags(CLI::App* cmd) {
    cmd->add_option("--pixels", pixels, "pixel CSV (pixel_id,row,col,ward_id,cov_*)")
        ->required();
    cmd->add_option("--wards", wards, "ward CSV (ward_id,population)")->required();
    cmd->add_option("--log1p", log1p, "comma-separated covariates to log(1+x)-transform");
    cmd->add_flag("--standardize", standardize, "z-score covariates");
  }
};

void finish_manifest(disagg::RunManifest& manifest, const std::string& out_dir) {
  manifest.finished_at = disagg::iso8601_now();
  manifest.write(out_dir.empty() ? "." : out_dir);
}

std::string dir_of(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  return parent.empty() ? "." : parent.string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian spatial disaggregation of areal count data"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(0, 1);

  disagg::RunManifest manifest;
  manifest.command_line = join_argv(argc, argv);
  manifest.tool_version = kVersion;
  manifest.started_at = disagg::iso8601_now();

  // ---- precompute-cov ----
  auto* cov_cmd = app.add_subcommand("precompute-cov",
                                     "compute and cache per-phi covariance matrices");
  CommonInputs cov_in;
  cov_in.add_flags(cov_cmd);
  std::string cov_phi_grid = "2.5:17.5:0.25", cov_cache;
  int cov_threads = 0;
  double cov_jitter = 1e-8;
  cov_cmd->add_option("--phi-grid", cov_phi_grid, "lo:hi:step or comma list");
  cov_cmd->add_option("--cache-dir", cov_cache, "cache directory (or $DISAGG_CACHE_DIR)");
  cov_cmd->add_option("--threads", cov_threads, "worker threads (0 = hardware)");
  cov_cmd->add_option("--jitter", cov_jitter, "diagonal jitter before Cholesky");

  // ---- fit ----
  auto* fit_cmd = app.add_subcommand("fit", "run the Gibbs sampler (or a baseline model)");
  CommonInputs fit_in;
  fit_in.add_flags(fit_cmd);
  std::string fit_model = "gp", fit_phi_grid = "2.5:17.5:0.25", fit_cache,
              fit_out = "chain.bin", fit_trace, fit_trace_lambda;
  int fit_burn = 500, fit_samples = 1500, fit_thin = 1, fit_threads = 0;
  double fit_jitter = 1e-8;
  std::uint64_t fit_seed = 0;
  bool fit_has_seed = false;
  fit_cmd->add_option("--model", fit_model, "gp|wn|laplace|bayesglm");
  fit_cmd->add_option("--phi-grid", fit_phi_grid, "phi grid (gp model)");
  fit_cmd->add_option("--cache-dir", fit_cache, "covariance cache (gp model)");
  fit_cmd->add_option("--burn-in", fit_burn, "burn-in sweeps");
  fit_cmd->add_option("--samples", fit_samples, "stored posterior draws");
  fit_cmd->add_option("--thin", fit_thin, "thinning interval");
  fit_cmd->add_option("--threads", fit_threads, "worker threads for precomputation");
  fit_cmd->add_option("--jitter", fit_jitter, "diagonal jitter");
  fit_cmd->add_option("--seed", fit_seed, "RNG seed (required)")
      ->each([&](const std::string&) { fit_has_seed = true; });
  fit_cmd->add_option("--out", fit_out, "output chain file");
  fit_cmd->add_option("--trace", fit_trace, "iteration-indexed trace CSV");
  fit_cmd->add_option("--trace-lambda", fit_trace_lambda,
                      "comma list of lambda* indices for the trace");

  // ---- predict ----
  auto* pred_cmd = app.add_subcommand("predict", "pixel-level posterior mean/sd");
  CommonInputs pred_in;
  pred_in.add_flags(pred_cmd);
  std::string pred_chain, pred_cache, pred_out = "pixel_posterior.csv", pred_model = "gp",
              pred_png_mean, pred_png_sd, pred_agg;
  int pred_threads = 0;
  double pred_jitter = 1e-8;
  pred_cmd->add_option("--chain", pred_chain, "chain file from 'fit'")->required();
  pred_cmd->add_option("--model", pred_model, "gp|wn|laplace|bayesglm (must match fit)");
  pred_cmd->add_option("--cache-dir", pred_cache, "covariance cache (gp model)");
  pred_cmd->add_option("--out", pred_out, "output CSV");
  pred_cmd->add_option("--png-mean", pred_png_mean, "PGM raster of posterior means");
  pred_cmd->add_option("--png-sd", pred_png_sd, "PGM raster of posterior sds");
  pred_cmd->add_option("--aggregate-check", pred_agg, "per-ward aggregation report CSV");
  pred_cmd->add_option("--threads", pred_threads, "worker threads");
  pred_cmd->add_option("--jitter", pred_jitter, "diagonal jitter");

  // ---- simulate ----
  auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic dataset");
  std::string sim_setting = "s1", sim_wards = "5x4", sim_beta_file, sim_prefix = "sim/";
  int sim_rows = 100, sim_cols = 100, sim_covs = 2;
  std::uint64_t sim_seed = 0;
  bool sim_has_seed = false;
  sim_cmd->add_option("--setting", sim_setting, "s1|s2|s3");
  sim_cmd->add_option("--rows", sim_rows, "grid rows");
  sim_cmd->add_option("--cols", sim_cols, "grid cols");
  sim_cmd->add_option("--wards", sim_wards, "ward tiling, e.g. 5x4");
  sim_cmd->add_option("--covariates", sim_covs, "number of synthetic covariates");
  sim_cmd->add_option("--beta-file", sim_beta_file, "CSV with one beta value per line");
  sim_cmd->add_option("--seed", sim_seed, "RNG seed (required)")
      ->each([&](const std::string&) { sim_has_seed = true; });
  sim_cmd->add_option("--out-prefix", sim_prefix, "output prefix/directory");

  // ---- evaluate ----
  auto* eval_cmd = app.add_subcommand("evaluate", "run the simulation study");
  std::string eval_study, eval_out = "table2.csv";
  std::uint64_t eval_seed = 0;
  bool eval_has_seed = false;
  eval_cmd->add_option("--study", eval_study, "study config file")->required();
  eval_cmd->add_option("--out", eval_out, "output CSV");
  eval_cmd->add_option("--seed", eval_seed, "override the study seed")
      ->each([&](const std::string&) { eval_has_seed = true; });

  // ---- glm ----
  auto* glm_cmd = app.add_subcommand("glm", "frequentist Poisson GLM table");
  CommonInputs glm_in;
  glm_in.add_flags(glm_cmd);
  std::string glm_out = "glm.csv";
  glm_cmd->add_option("--out", glm_out, "output CSV");

  // ---- variogram ----
  auto* vg_cmd = app.add_subcommand("variogram", "empirical variogram + exponential fit");
  std::string vg_in_path, vg_out = "vg.csv";
  int vg_bins = 15;
  double vg_maxd = 40.0;
  vg_cmd->add_option("--residuals", vg_in_path, "CSV with header x,y,value")->required();
  vg_cmd->add_option("--bins", vg_bins, "number of distance bins");
  vg_cmd->add_option("--max-dist", vg_maxd, "maximum pair distance");
  vg_cmd->add_option("--out", vg_out, "output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << '\n';
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (cov_cmd->parsed()) {
      const std::string cache = default_cache_dir(cov_cache);
      if (cache.empty())
        throw disagg::ValidationError("--cache-dir (or $DISAGG_CACHE_DIR) is required");
      auto [grid, wards] = cov_in.load();
      manifest.add_input(cov_in.pixels);
      manifest.add_input(cov_in.wards);
      const disagg::PhiGrid phi_grid = disagg::PhiGrid::parse(cov_phi_grid);
      disagg::CacheStats stats;
      disagg::prepare_bundles(grid, wards, phi_grid, cache, cov_jitter, cov_threads,
                              &stats);
      std::cout << "cached " << phi_grid.size() << " phi values (" << stats.hits
                << " hits, " << stats.recomputed << " recomputed)\n";
      finish_manifest(manifest, cache);
    } else if (fit_cmd->parsed()) {
      if (!fit_has_seed)
        throw disagg::ValidationError("--seed is required for 'fit'");
      auto [grid, wards] = fit_in.load();
      manifest.add_input(fit_in.pixels);
      manifest.add_input(fit_in.wards);
      manifest.seed = fit_seed;
      manifest.seeded = true;

      disagg::ChainConfig cc;
      cc.burn_in = fit_burn;
      cc.samples = fit_samples;
      cc.thin = fit_thin;
      cc.seed = fit_seed;
      disagg::Hyperpriors priors;

      disagg::PosteriorChain chain;
      if (fit_model == "gp") {
        const std::string cache = default_cache_dir(fit_cache);
        if (cache.empty())
          throw disagg::ValidationError("--cache-dir is required for the gp model");
        priors.phi_grid = disagg::PhiGrid::parse(fit_phi_grid);
        const auto bundles = disagg::prepare_bundles(grid, wards, priors.phi_grid, cache,
                                                     fit_jitter, fit_threads);
        chain = disagg::run_chain(grid, wards, bundles, priors, cc);
      } else {
        chain = disagg::fit_baseline(disagg::parse_baseline(fit_model), grid, wards,
                                     priors, cc);
      }
      disagg::write_chain(fit_out, chain);
      const std::string summary =
          (std::filesystem::path(dir_of(fit_out)) / "chain_summary.csv").string();
      disagg::write_chain_summary(summary, chain, grid.covariate_names);
      if (!fit_trace.empty()) {
        std::vector<int> idx;
        for (const auto& s : split_list(fit_trace_lambda)) idx.push_back(std::stoi(s));
        disagg::write_trace(fit_trace, chain, idx);
      }
      std::cout << "wrote " << fit_out << " (" << chain.num_draws() << " draws)\n";
      finish_manifest(manifest, dir_of(fit_out));
    } else if (pred_cmd->parsed()) {
      auto [grid, wards] = pred_in.load();
      manifest.add_input(pred_in.pixels);
      manifest.add_input(pred_in.wards);
      manifest.add_input(pred_chain);
      const disagg::PosteriorChain chain = disagg::read_chain(pred_chain);

      disagg::PixelPosterior post;
      if (pred_model == "gp") {
        const std::string cache = default_cache_dir(pred_cache);
        if (cache.empty())
          throw disagg::ValidationError("--cache-dir is required for the gp model");
        disagg::PhiGrid phi_grid;
        phi_grid.values = chain.phi_grid;
        const auto bundles = disagg::prepare_bundles(grid, wards, phi_grid, cache,
                                                     pred_jitter, pred_threads);
        post = disagg::pixel_posterior(chain, bundles, grid, wards, pred_threads);
        if (!pred_agg.empty())
          disagg::write_aggregate_check_csv(pred_agg,
                                            disagg::aggregate_check(post, grid, wards, chain));
      } else {
        post = disagg::baseline_pixel_posterior(disagg::parse_baseline(pred_model), chain,
                                                grid, wards);
        if (!pred_agg.empty())
          disagg::write_aggregate_check_csv(pred_agg,
                                            disagg::aggregate_check(post, grid, wards, chain));
      }
      disagg::write_pixel_posterior_csv(pred_out, grid, post);
      if (!pred_png_mean.empty()) disagg::write_pgm(pred_png_mean, grid, post.mean);
      if (!pred_png_sd.empty()) disagg::write_pgm(pred_png_sd, grid, post.sd);
      std::cout << "wrote " << pred_out << '\n';
      finish_manifest(manifest, dir_of(pred_out));
    } else if (sim_cmd->parsed()) {
      if (!sim_has_seed)
        throw disagg::ValidationError("--seed is required for 'simulate'");
      manifest.seed = sim_seed;
      manifest.seeded = true;
      int wr = 0, wc = 0;
      if (std::sscanf(sim_wards.c_str(), "%dx%d", &wr, &wc) != 2)
        throw disagg::ValidationError("--wards must look like 5x4");
      disagg::PixelGrid grid =
          disagg::make_synthetic_grid(sim_rows, sim_cols, wr, wc, sim_covs,
                                      disagg::Rng(sim_seed).split(7001).seed());
      disagg::Vector beta(sim_covs + 1);
      if (sim_beta_file.empty()) {
        beta[0] = 2.0;
        for (int k = 1; k <= sim_covs; ++k) beta[k] = (k % 2 == 1) ? 0.5 : -0.5;
      } else {
        std::ifstream bf(sim_beta_file);
        if (!bf) throw disagg::ValidationError("cannot open " + sim_beta_file);
        manifest.add_input(sim_beta_file);
        std::string line;
        int k = 0;
        while (std::getline(bf, line) && k <= sim_covs) beta[k++] = std::stod(line);
        if (k != sim_covs + 1)
          throw disagg::ValidationError("--beta-file must hold covariates+1 values");
      }
      // geometry table with placeholder counts, then one simulated dataset
      std::vector<std::pair<int, long long>> ids;
      for (int w = 0; w < wr * wc; ++w) ids.emplace_back(w, 1);
      const disagg::WardTable geometry = disagg::build_ward_table(grid, ids);
      const disagg::SimSetting setting = disagg::SimSetting::named(sim_setting, beta, sim_seed);
      disagg::Rng rng = disagg::Rng(sim_seed).split(1);
      const disagg::SimulatedData data = disagg::simulate(setting, grid, geometry, rng);

      std::filesystem::create_directories(sim_prefix);
      const auto prefix = std::filesystem::path(sim_prefix);
      disagg::write_pixel_csv((prefix / "pixels.csv").string(), grid);
      std::vector<std::pair<int, long long>> pops;
      for (int i = 0; i < geometry.num_wards(); ++i)
        pops.emplace_back(geometry.wards[i].ward_id, data.counts[i]);
      const disagg::WardTable wards = disagg::build_ward_table(grid, pops);
      disagg::write_ward_csv((prefix / "wards.csv").string(), wards);
      {
        std::ofstream tf(prefix / "truth.csv");
        tf << "pixel_id,log_intensity\n";
        char buf[64];
        for (int j = 0; j < grid.num_pixels(); ++j) {
          std::snprintf(buf, sizeof(buf), "%d,%.9g\n", j, data.truth[j]);
          tf << buf;
        }
      }
      std::cout << "wrote " << (prefix / "pixels.csv").string() << ", wards.csv, truth.csv\n";
      finish_manifest(manifest, sim_prefix);
    } else if (eval_cmd->parsed()) {
      disagg::StudyConfig cfg = disagg::load_study_config(eval_study);
      manifest.add_input(eval_study);
      if (eval_has_seed) cfg.seed = eval_seed;
      manifest.seed = cfg.seed;
      manifest.seeded = true;
      const auto rows = disagg::run_study(cfg);
      disagg::write_study_csv(eval_out, rows);
      std::cout << "wrote " << eval_out << '\n';
      finish_manifest(manifest, dir_of(eval_out));
    } else if (glm_cmd->parsed()) {
      auto [grid, wards] = glm_in.load();
      manifest.add_input(glm_in.pixels);
      manifest.add_input(glm_in.wards);
      const disagg::GlmFit fit = disagg::fit_poisson_glm(wards);
      disagg::write_glm_csv(glm_out, fit, grid.covariate_names);
      std::cout << "wrote " << glm_out << " (" << fit.iterations << " IRLS iterations)\n";
      finish_manifest(manifest, dir_of(glm_out));
    } else if (vg_cmd->parsed()) {
      std::ifstream in(vg_in_path);
      if (!in) throw disagg::ValidationError("cannot open " + vg_in_path);
      manifest.add_input(vg_in_path);
      std::string line;
      if (!std::getline(in, line) || line.rfind("x,y,value", 0) != 0)
        throw disagg::ValidationError("residual CSV must have header x,y,value");
      std::vector<double> xs, ys, vs;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        double x, y, v;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &x, &y, &v) != 3)
          throw disagg::ValidationError("bad residual CSV line: " + line);
        xs.push_back(x);
        ys.push_back(y);
        vs.push_back(v);
      }
      disagg::Matrix centroids(static_cast<int>(xs.size()), 2);
      disagg::Vector resid(static_cast<int>(xs.size()));
      for (std::size_t i = 0; i < xs.size(); ++i) {
        centroids(static_cast<int>(i), 0) = xs[i];
        centroids(static_cast<int>(i), 1) = ys[i];
        resid[static_cast<int>(i)] = vs[i];
      }
      disagg::Variogram vg = disagg::empirical_variogram(resid, centroids, vg_bins, vg_maxd);
      vg.fit = disagg::fit_exponential_variogram(vg);
      disagg::write_variogram_csv(vg_out, vg);
      std::cout << "wrote " << vg_out << '\n';
      finish_manifest(manifest, dir_of(vg_out));
    } else {
      std::cerr << app.help() << '\n';
      return 1;
    }
  } catch (const disagg::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
