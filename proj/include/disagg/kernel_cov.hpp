#pragma once

#include "disagg/types.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace disagg {

struct KernelParams {
  double sigma2 = 1.0;  // marginal variance
  double phi = 1.0;     // spatial range, pixel-side units
};

// Ordered candidate values for the range parameter.
struct PhiGrid {
  std::vector<double> values;

  static PhiGrid parse(const std::string& spec);  // "lo:hi:step" or "v1,v2,..."
  int size() const { return static_cast<int>(values.size()); }
  double median() const { return values[values.size() / 2]; }
  void validate() const;
};

// Exponential correlation exp(-d/phi).
inline double exp_corr(double d, double phi) { return std::exp(-d / phi); }

// Read-only P x L cross-correlation store; rows indexed by pixel_id.
class Sp0Store {
 public:
  virtual ~Sp0Store() = default;
  virtual int rows() const = 0;
  virtual int cols() const = 0;
  // Copies rows [first, first+count) into `out` (count x L), in id order.
  virtual void read_rows(int first, int count, Matrix& out) const = 0;
  // Gathers arbitrary row indices (ascending) into `out`.
  virtual void read_rows(const std::vector<int>& ids, Matrix& out) const = 0;
};

class DenseSp0Store final : public Sp0Store {
 public:
  explicit DenseSp0Store(Matrix data) : data_(std::move(data)) {}
  int rows() const override { return static_cast<int>(data_.rows()); }
  int cols() const override { return static_cast<int>(data_.cols()); }
  void read_rows(int first, int count, Matrix& out) const override {
    out = data_.middleRows(first, count);
  }
  void read_rows(const std::vector<int>& ids, Matrix& out) const override {
    out.resize(static_cast<int>(ids.size()), data_.cols());
    for (std::size_t r = 0; r < ids.size(); ++r) out.row(static_cast<int>(r)) = data_.row(ids[r]);
  }
  const Matrix& matrix() const { return data_; }

 private:
  Matrix data_;
};

class FileSp0Store final : public Sp0Store {
 public:
  explicit FileSp0Store(const std::string& path);
  int rows() const override { return rows_; }
  int cols() const override { return cols_; }
  void read_rows(int first, int count, Matrix& out) const override;
  void read_rows(const std::vector<int>& ids, Matrix& out) const override;

 private:
  std::string path_;
  int rows_ = 0;
  int cols_ = 0;
};

// Per-phi precomputation: ward aggregate matrix, its Cholesky factor and
// log-determinant, plus the pixel-to-ward cross-correlation store.
struct CovarianceBundle {
  double phi = 0.0;
  Matrix sigma00;                     // L x L
  Eigen::LLT<Matrix> chol00;          // of sigma00 + jitter*I
  double logdet00 = 0.0;              // log det(sigma00 + jitter*I)
  std::shared_ptr<const Sp0Store> sigma_p0;

  // Solves (sigma00 + jitter*I) x = b via the cached factor.
  Vector solve(const Vector& b) const { return chol00.solve(b); }
  Matrix solve(const Matrix& b) const { return chol00.solve(b); }
};

// Entry (i,j) = |A_i|^-1 |A_j|^-1 sum over pixel pairs of exp(-d/phi).
// Parallel over ward pairs; exact Euclidean distances, compensated sums.
Matrix build_sigma00(const PixelGrid& grid, const WardTable& wards, double phi,
                     int threads = 0);

// Row j, column i = |A_i|^-1 sum_{s_l in A_i} exp(-|s_j - s_l|/phi).
Matrix build_sigma_p0(const PixelGrid& grid, const WardTable& wards, double phi,
                      int threads = 0);

// Factors sigma00 + jitter*I; throws NumericalError naming phi on failure.
void factor_bundle(CovarianceBundle& bundle, double jitter);

// Builds an in-memory bundle (no cache involvement).
CovarianceBundle make_bundle(const PixelGrid& grid, const WardTable& wards, double phi,
                             double jitter = 1e-8, int threads = 0);

struct CacheStats {
  int hits = 0;
  int recomputed = 0;
};

// For each phi, loads a valid cache from cache_dir or computes and persists
// sigma00 + sigma_p0 (files sigma00_phi<v>.bin / sigmap0_phi<v>.bin).
// Corrupt or mismatched cache files are recomputed. Bundles returned in
// ascending phi order; sigma_p0 stores are file-backed.
std::vector<CovarianceBundle> prepare_bundles(const PixelGrid& grid, const WardTable& wards,
                                              const PhiGrid& phi_grid,
                                              const std::string& cache_dir,
                                              double jitter = 1e-8, int threads = 0,
                                              CacheStats* stats = nullptr);

// Binary matrix cache: 32-byte header (magic DSGC, version, rows, cols,
// phi, FNV-1a checksum of the payload) then row-major little-endian doubles.
void write_matrix_cache(const std::string& path, const Matrix& m, double phi);
bool read_matrix_cache(const std::string& path, Matrix& out, double expected_phi);

std::string sigma00_cache_path(const std::string& cache_dir, double phi);
std::string sigmap0_cache_path(const std::string& cache_dir, double phi);

}  // namespace disagg
