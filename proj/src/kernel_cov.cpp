#include "disagg/kernel_cov.hpp"

#include "disagg/parallel.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace disagg {

namespace {

constexpr char kCacheMagic[4] = {'D', 'S', 'G', 'C'};
constexpr std::uint32_t kCacheVersion = 1;

#pragma pack(push, 1)
struct CacheHeader {
  char magic[4];
  std::uint32_t version;
  std::uint64_t rows;
  std::uint32_t cols;
  float phi;
  std::uint64_t checksum;  // FNV-1a over the payload bytes
};
#pragma pack(pop)
static_assert(sizeof(CacheHeader) == 32, "cache header must be 32 bytes");

std::uint64_t fnv1a(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Kahan-compensated accumulator for the large pixel-pair sums.
struct CompensatedSum {
  double sum = 0.0;
  double c = 0.0;
  void add(double x) {
    const double y = x - c;
    const double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
};

double pair_sum(const PixelGrid& grid, const std::vector<int>& a,
                const std::vector<int>& b, double inv_phi_scaled) {
  CompensatedSum acc;
  for (const int p : a) {
    const double r0 = grid.pixels[p].row;
    const double c0 = grid.pixels[p].col;
    for (const int q : b) {
      const double dr = r0 - grid.pixels[q].row;
      const double dc = c0 - grid.pixels[q].col;
      acc.add(std::exp(-std::sqrt(dr * dr + dc * dc) * inv_phi_scaled));
    }
  }
  return acc.sum;
}

std::string phi_tag(double phi) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", phi);
  return buf;
}

}  // namespace

PhiGrid PhiGrid::parse(const std::string& spec) {
  PhiGrid g;
  if (spec.find(':') != std::string::npos) {
    double lo = 0, hi = 0, step = 0;
    char colon1 = 0, colon2 = 0;
    std::istringstream ss(spec);
    if (!(ss >> lo >> colon1 >> hi >> colon2 >> step) || colon1 != ':' || colon2 != ':' ||
        step <= 0.0 || hi < lo)
      throw ValidationError("bad phi grid spec '" + spec + "' (want lo:hi:step)");
    for (double v = lo; v <= hi + 1e-9 * step; v += step) g.values.push_back(v);
  } else {
    std::istringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      g.values.push_back(std::stod(item));
    }
  }
  g.validate();
  return g;
}

void PhiGrid::validate() const {
  if (values.empty()) throw ValidationError("phi grid is empty");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] <= 0.0) throw ValidationError("phi grid values must be positive");
    if (i > 0 && values[i] <= values[i - 1])
      throw ValidationError("phi grid must be strictly increasing");
  }
}

Matrix build_sigma00(const PixelGrid& grid, const WardTable& wards, double phi,
                     int threads) {
  const int L = wards.num_wards();
  const double inv_phi_scaled = grid.pixel_side / phi;
  Matrix sigma = Matrix::Zero(L, L);

  // One task per unordered ward pair (i <= j); each writes a single cell.
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(L * (L + 1) / 2);
  for (int i = 0; i < L; ++i)
    for (int j = i; j < L; ++j) pairs.emplace_back(i, j);

  parallel_for(static_cast<int>(pairs.size()), threads, [&](int t) {
    const auto [i, j] = pairs[t];
    const double s = pair_sum(grid, wards.members[i], wards.members[j], inv_phi_scaled);
    sigma(i, j) = s / (static_cast<double>(wards.wards[i].pixel_count) *
                       static_cast<double>(wards.wards[j].pixel_count));
  });
  // Mirror the strict upper triangle so symmetry is exact.
  for (int i = 0; i < L; ++i)
    for (int j = i + 1; j < L; ++j) sigma(j, i) = sigma(i, j);
  return sigma;
}

Matrix build_sigma_p0(const PixelGrid& grid, const WardTable& wards, double phi,
                      int threads) {
  const int P = grid.num_pixels();
  const int L = wards.num_wards();
  const double inv_phi_scaled = grid.pixel_side / phi;
  Matrix sp0(P, L);

  // Contiguous pixel blocks; each task owns its rows.
  const int block = 1024;
  const int n_blocks = (P + block - 1) / block;
  parallel_for(n_blocks, threads, [&](int t) {
    const int lo = t * block;
    const int hi = std::min(P, lo + block);
    for (int j = lo; j < hi; ++j) {
      const double r0 = grid.pixels[j].row;
      const double c0 = grid.pixels[j].col;
      for (int i = 0; i < L; ++i) {
        CompensatedSum acc;
        for (const int q : wards.members[i]) {
          const double dr = r0 - grid.pixels[q].row;
          const double dc = c0 - grid.pixels[q].col;
          acc.add(std::exp(-std::sqrt(dr * dr + dc * dc) * inv_phi_scaled));
        }
        sp0(j, i) = acc.sum / wards.wards[i].pixel_count;
      }
    }
  });
  return sp0;
}

void factor_bundle(CovarianceBundle& bundle, double jitter) {
  const int L = static_cast<int>(bundle.sigma00.rows());
  Matrix jittered = bundle.sigma00;
  jittered.diagonal().array() += jitter;
  bundle.chol00.compute(jittered);
  if (bundle.chol00.info() != Eigen::Success)
    throw NumericalError("Cholesky factorization failed for phi = " + phi_tag(bundle.phi) +
                         " (even with jitter " + std::to_string(jitter) + ")");
  double logdet = 0.0;
  const auto& l = bundle.chol00.matrixLLT();
  for (int i = 0; i < L; ++i) logdet += std::log(l(i, i));
  bundle.logdet00 = 2.0 * logdet;
}

CovarianceBundle make_bundle(const PixelGrid& grid, const WardTable& wards, double phi,
                             double jitter, int threads) {
  CovarianceBundle b;
  b.phi = phi;
  b.sigma00 = build_sigma00(grid, wards, phi, threads);
  factor_bundle(b, jitter);
  b.sigma_p0 = std::make_shared<DenseSp0Store>(build_sigma_p0(grid, wards, phi, threads));
  return b;
}

void write_matrix_cache(const std::string& path, const Matrix& m, double phi) {
  // Row-major payload so that FileSp0Store can stream rows.
  const int rows = static_cast<int>(m.rows());
  const int cols = static_cast<int>(m.cols());
  std::vector<double> payload(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) payload[static_cast<std::size_t>(r) * cols + c] = m(r, c);

  CacheHeader h{};
  std::memcpy(h.magic, kCacheMagic, 4);
  h.version = kCacheVersion;
  h.rows = static_cast<std::uint64_t>(rows);
  h.cols = static_cast<std::uint32_t>(cols);
  h.phi = static_cast<float>(phi);
  h.checksum = fnv1a(reinterpret_cast<const unsigned char*>(payload.data()),
                     payload.size() * sizeof(double));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write cache file: " + tmp);
    out.write(reinterpret_cast<const char*>(&h), sizeof(h));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!out) throw ValidationError("short write to cache file: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

bool read_matrix_cache(const std::string& path, Matrix& out, double expected_phi) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  CacheHeader h{};
  in.read(reinterpret_cast<char*>(&h), sizeof(h));
  if (!in || std::memcmp(h.magic, kCacheMagic, 4) != 0 || h.version != kCacheVersion)
    return false;
  if (std::abs(static_cast<double>(h.phi) - expected_phi) > 1e-6) return false;
  const std::size_t n = static_cast<std::size_t>(h.rows) * h.cols;
  std::vector<double> payload(n);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) return false;
  if (fnv1a(reinterpret_cast<const unsigned char*>(payload.data()), n * sizeof(double)) !=
      h.checksum)
    return false;
  out.resize(static_cast<int>(h.rows), static_cast<int>(h.cols));
  for (std::uint64_t r = 0; r < h.rows; ++r)
    for (std::uint32_t c = 0; c < h.cols; ++c)
      out(static_cast<int>(r), static_cast<int>(c)) = payload[r * h.cols + c];
  return true;
}

std::string sigma00_cache_path(const std::string& cache_dir, double phi) {
  return (std::filesystem::path(cache_dir) / ("sigma00_phi" + phi_tag(phi) + ".bin")).string();
}

std::string sigmap0_cache_path(const std::string& cache_dir, double phi) {
  return (std::filesystem::path(cache_dir) / ("sigmap0_phi" + phi_tag(phi) + ".bin")).string();
}

FileSp0Store::FileSp0Store(const std::string& path) : path_(path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open cache file: " + path);
  CacheHeader h{};
  in.read(reinterpret_cast<char*>(&h), sizeof(h));
  if (!in || std::memcmp(h.magic, kCacheMagic, 4) != 0)
    throw ValidationError("bad cache file header: " + path);
  rows_ = static_cast<int>(h.rows);
  cols_ = static_cast<int>(h.cols);
}

void FileSp0Store::read_rows(int first, int count, Matrix& out) const {
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw ValidationError("cannot open cache file: " + path_);
  out.resize(count, cols_);
  std::vector<double> row(cols_);
  in.seekg(static_cast<std::streamoff>(sizeof(CacheHeader)) +
           static_cast<std::streamoff>(first) * cols_ * sizeof(double));
  for (int r = 0; r < count; ++r) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(cols_ * sizeof(double)));
    if (!in) throw ValidationError("short read from cache file: " + path_);
    for (int c = 0; c < cols_; ++c) out(r, c) = row[c];
  }
}

void FileSp0Store::read_rows(const std::vector<int>& ids, Matrix& out) const {
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw ValidationError("cannot open cache file: " + path_);
  out.resize(static_cast<int>(ids.size()), cols_);
  std::vector<double> row(cols_);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    in.seekg(static_cast<std::streamoff>(sizeof(CacheHeader)) +
             static_cast<std::streamoff>(ids[r]) * cols_ * sizeof(double));
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(cols_ * sizeof(double)));
    if (!in) throw ValidationError("short read from cache file: " + path_);
    for (int c = 0; c < cols_; ++c) out(static_cast<int>(r), c) = row[c];
  }
}

std::vector<CovarianceBundle> prepare_bundles(const PixelGrid& grid, const WardTable& wards,
                                              const PhiGrid& phi_grid,
                                              const std::string& cache_dir, double jitter,
                                              int threads, CacheStats* stats) {
  phi_grid.validate();
  std::filesystem::create_directories(cache_dir);
  std::vector<CovarianceBundle> bundles;
  bundles.reserve(phi_grid.values.size());
  for (const double phi : phi_grid.values) {
    const std::string p00 = sigma00_cache_path(cache_dir, phi);
    const std::string pp0 = sigmap0_cache_path(cache_dir, phi);

    CovarianceBundle b;
    b.phi = phi;
    bool hit = read_matrix_cache(p00, b.sigma00, phi);
    // sigma_p0 is validated by header + checksum once; afterwards it is
    // streamed row-wise without re-checksumming.
    Matrix sp0_check;
    hit = hit && read_matrix_cache(pp0, sp0_check, phi) &&
          sp0_check.rows() == grid.num_pixels() && sp0_check.cols() == wards.num_wards() &&
          b.sigma00.rows() == wards.num_wards();
    if (!hit) {
      b.sigma00 = build_sigma00(grid, wards, phi, threads);
      const Matrix sp0 = build_sigma_p0(grid, wards, phi, threads);
      write_matrix_cache(p00, b.sigma00, phi);
      write_matrix_cache(pp0, sp0, phi);
      if (stats) ++stats->recomputed;
    } else if (stats) {
      ++stats->hits;
    }
    factor_bundle(b, jitter);
    b.sigma_p0 = std::make_shared<FileSp0Store>(pp0);
    bundles.push_back(std::move(b));
  }
  return bundles;
}

}  // namespace disagg
