#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace disagg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using VectorI = Eigen::VectorXi;

// Thrown on malformed or inconsistent input (bad CSV, missing ward, ...).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a numerical step fails (Cholesky breakdown, overflow, ...).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Pixel {
  int pixel_id = 0;
  int row = 0;
  int col = 0;
  int ward_id = 0;
};

// Fine-resolution grid: pixel coordinates, ward membership and the P x (m+1)
// covariate matrix X (leading column of ones for the intercept).
struct PixelGrid {
  std::vector<Pixel> pixels;         // ordered by pixel_id = 0..P-1
  Matrix covariates;                 // P x (m+1)
  std::vector<std::string> covariate_names;  // length m+1, first is "intercept"
  double pixel_side = 1.0;           // distance units per pixel side

  int num_pixels() const { return static_cast<int>(pixels.size()); }
  int num_covariates() const { return static_cast<int>(covariates.cols()); }
};

struct Ward {
  int ward_id = 0;
  long long population = 0;   // Y_i
  int pixel_count = 0;        // |A_i|
};

// Areal units: counts Y_i, pixel counts |A_i|, averaged covariates X_bar.
struct WardTable {
  std::vector<Ward> wards;    // ordered by appearance in the ward file
  Matrix x_bar;               // L x (m+1), row i = mean covariate of ward i
  std::vector<std::vector<int>> members;  // pixel ids per ward, ascending

  int num_wards() const { return static_cast<int>(wards.size()); }
  // Index of a ward_id within `wards`, or -1.
  int ward_index(int ward_id) const {
    for (int i = 0; i < num_wards(); ++i)
      if (wards[i].ward_id == ward_id) return i;
    return -1;
  }
  Vector counts() const {
    Vector y(num_wards());
    for (int i = 0; i < num_wards(); ++i) y[i] = static_cast<double>(wards[i].population);
    return y;
  }
  Vector pixel_counts() const {
    Vector a(num_wards());
    for (int i = 0; i < num_wards(); ++i) a[i] = static_cast<double>(wards[i].pixel_count);
    return a;
  }
};

// lambda_hat_i = log((Y_i + c)/|A_i|) with Fisher information Y_i + c.
struct EmpiricalLogIntensity {
  Vector lambda_hat;   // length L
  Vector precision;    // length L, equals Y_i (+ pseudo-count)
};

}  // namespace disagg
