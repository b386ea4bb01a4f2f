#pragma once

#include <cstdint>
#include <vector>

#include "dyl/descriptor.hpp"

namespace dyl {

enum class FitMethod { Lms, LeastSquares };

struct RbfConfig {
  int m_centers = 16;
  double sigma = 0.0;  // <= 0: median pairwise center distance, resolved at fit time
  double learn_rate = 0.05;
  int epochs = 200;
  double ridge = 1e-6;
  std::uint64_t seed = 0;
  FitMethod fit = FitMethod::Lms;

  void validate() const;
};

/// One-step difference model dz = W^T phi(z) over Gaussian centers.
struct DynamicsModel {
  Matrix centers;  // M x k
  Matrix weights;  // M x k; row i is w_i
  double sigma = 1.0;
  RbfConfig config;
  std::vector<double> residual_history;  // mean squared residual after each epoch

  int m() const { return static_cast<int>(centers.rows()); }
  int k() const { return static_cast<int>(centers.cols()); }
};

/// Lloyd's algorithm with k-means++ seeding. Rows of Z are points.
Matrix kmeans(const Matrix& Z, int m, std::uint64_t seed, int max_iterations = 100);

/// phi_i = exp(-|z - c_i|^2 / (2 sigma^2)).
Vector rbf_response(const Vector& z, const Matrix& centers, double sigma);

/// Median pairwise distance between centers; 1.0 when undefined or zero.
double median_center_distance(const Matrix& centers);

/// Targets are z_{t+1} - z_t. Centers come from k-means over all rows of Z.
DynamicsModel train_dynamics(const Matrix& Z, const RbfConfig& config);

/// Weight fit for fixed centers/sigma on explicit (input, target) pairs.
/// Used by train_dynamics; exposed so callers can refit on rescaled targets.
DynamicsModel fit_weights(const Matrix& inputs, const Matrix& targets, const Matrix& centers, double sigma,
                          const RbfConfig& config);

/// Closed-form ridge solution (Phi^T Phi + ridge I)^-1 Phi^T targets, N x M design.
Matrix ridge_weights(const Matrix& design, const Matrix& targets, double ridge);

/// Design matrix: row t is phi(inputs_t).
Matrix rbf_design(const Matrix& inputs, const Matrix& centers, double sigma);

double training_mse(const DynamicsModel& model, const Matrix& inputs, const Matrix& targets);

Vector predict_delta(const DynamicsModel& model, const Vector& z);

struct EnergyFrame {
  Vector e;  // phi(z_t) scaled by the residual norm
  double residual_norm = 0.0;
  Vector residual;  // predicted minus observed delta
  int frame_index = 0;
};

std::vector<EnergyFrame> energy_sequence(const DynamicsModel& model, const Matrix& Z);

struct EdgMap {
  Matrix sectors;  // r_bins x theta_bins
  int frame_index = 0;
};

/// Attributes the prediction residual to sectors by back-projecting it into raw
/// descriptor space and taking the per-sector norm, weighted by mean(phi(z_t)).
EdgMap edg_from_energy(const EnergyFrame& energy, const DynamicsModel& model, const PcaModel& pca,
                       const ScalerModel& scaler, const SectorGrid& grid, const Vector& z, const Vector& dz);

struct PedgResult {
  Matrix P;  // one row per energy frame
  PcaModel pca;
};

PedgResult pedg_sequence(const std::vector<EnergyFrame>& energies, int k2);

nlohmann::json to_json(const DynamicsModel& m);
DynamicsModel dynamics_from_json(const nlohmann::json& j);

}  // namespace dyl
