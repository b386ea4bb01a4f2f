#pragma once

#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dyl/common.hpp"
#include "dyl/flow.hpp"
#include "dyl/seqio.hpp"

namespace dyl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr int kSectorFeatures = 6;

/// Feature order inside one sector's block of the raw descriptor.
enum SectorFeature : int { MeanRadial = 0, MeanTangential, StdRadial, StdTangential, MeanGray, StdGray };

/// R x TH polar partition around a pole. A non-positive r_max or a NaN center
/// means "use the image default" and is resolved by `resolved_for`.
struct SectorGrid {
  int r_bins = 4;
  int theta_bins = 12;
  double cx = std::numeric_limits<double>::quiet_NaN();
  double cy = std::numeric_limits<double>::quiet_NaN();
  double r_max = 0.0;

  SectorGrid resolved_for(int height, int width) const;
  void validate(int height, int width) const;
  int sector_count() const { return r_bins * theta_bins; }
  int descriptor_length() const { return sector_count() * kSectorFeatures; }
};

struct SectorIndex {
  int ring = 0;
  int bin = 0;
};

/// nullopt when the point lies at or beyond r_max.
std::optional<SectorIndex> sector_of(double x, double y, const SectorGrid& grid);

struct RawDescriptor {
  Vector values;  // ring-major, then angle bin, then feature
  int frame_index = 0;
};

RawDescriptor extract_descriptor(const Image& frame, const FlowField& flow, const SectorGrid& grid, int frame_index = 0);

struct ScalerModel {
  Vector mean;
  Vector scale;

  Vector apply(const Vector& x) const;
  Vector invert(const Vector& x) const;
};

inline constexpr double kScaleFloor = 1e-8;

ScalerModel fit_scaler(const Matrix& X);

struct PcaModel {
  Matrix components;  // k x D, orthonormal rows
  Vector explained_variance;
  Vector input_mean;
  double total_variance = 0.0;  // trace of the covariance, for explained ratios

  int k() const { return static_cast<int>(components.rows()); }
  int input_dim() const { return static_cast<int>(components.cols()); }
  Vector project(const Vector& x) const;
  Vector back_project(const Vector& z) const;
  double explained_ratio() const;
};

/// Top-k principal axes of X (rows are samples), population covariance.
/// Each component's largest-magnitude entry is made positive.
PcaModel fit_pca(const Matrix& X, int k);

struct DescriptorResult {
  Matrix Z;  // (T-1) x k
  Matrix raw;  // (T-1) x D, before scaling
  ScalerModel scaler;
  PcaModel pca;
};

/// Fit mode when scaler/pca are absent, transform-only otherwise.
DescriptorResult descriptor_sequence(const FrameSequence& seq, const std::vector<FlowField>& flows,
                                     const SectorGrid& grid, int k, const ScalerModel* scaler = nullptr,
                                     const PcaModel* pca = nullptr);

nlohmann::json to_json(const ScalerModel& s);
nlohmann::json to_json(const PcaModel& p);
ScalerModel scaler_from_json(const nlohmann::json& j);
PcaModel pca_from_json(const nlohmann::json& j);

// Shared by the JSON writers of several modules.
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);

}  // namespace dyl
