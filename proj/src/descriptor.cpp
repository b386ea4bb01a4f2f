#include "dyl/descriptor.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

namespace dyl {

using nlohmann::json;

namespace {

constexpr const char* kModule = "descriptor";

void require_finite(const Matrix& X, const char* what) {
  if (!X.allFinite()) throw Error(ErrorKind::Numeric, kModule, std::string(what) + " contains non-finite values");
}

}  // namespace

SectorGrid SectorGrid::resolved_for(int height, int width) const {
  SectorGrid g = *this;
  if (std::isnan(g.cx)) g.cx = width / 2;
  if (std::isnan(g.cy)) g.cy = height / 2;
  if (!(g.r_max > 0.0)) g.r_max = std::min(height, width) / 2.0;
  return g;
}

void SectorGrid::validate(int height, int width) const {
  if (r_bins < 1 || theta_bins < 1) throw Error(ErrorKind::Parameter, kModule, "grid needs r_bins >= 1 and theta_bins >= 1");
  if (!(r_max > 0.0)) throw Error(ErrorKind::Parameter, kModule, "grid r_max must be > 0");
  if (!(cx >= 0.0 && cx <= width - 1 && cy >= 0.0 && cy <= height - 1))
    throw Error(ErrorKind::Parameter, kModule, "grid center lies outside the image");
}

std::optional<SectorIndex> sector_of(double x, double y, const SectorGrid& grid) {
  const double dx = x - grid.cx, dy = y - grid.cy;
  const double rho = std::hypot(dx, dy);
  if (rho >= grid.r_max) return std::nullopt;
  double angle = (dx == 0.0 && dy == 0.0) ? 0.0 : std::atan2(dy, dx);
  if (angle < 0.0) angle += 2.0 * std::numbers::pi;
  SectorIndex s;
  s.ring = std::min(static_cast<int>(std::floor(rho * grid.r_bins / grid.r_max)), grid.r_bins - 1);
  s.bin = std::min(static_cast<int>(std::floor(angle * grid.theta_bins / (2.0 * std::numbers::pi))), grid.theta_bins - 1);
  return s;
}

RawDescriptor extract_descriptor(const Image& frame, const FlowField& flow, const SectorGrid& grid, int frame_index) {
  if (!frame.same_shape(flow.u) || !frame.same_shape(flow.v))
    throw Error(ErrorKind::Dimension, kModule, "frame and flow differ in size");
  const int h = frame.height(), w = frame.width();
  const int sectors = grid.sector_count();

  // Per-pixel projections, then two passes per sector (mean, then spread).
  struct Sample {
    int sector;
    double vr, vt, gray;
  };
  std::vector<Sample> samples;
  samples.reserve(frame.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto s = sector_of(x, y, grid);
      if (!s) continue;
      const double dx = x - grid.cx, dy = y - grid.cy;
      const double rho = std::hypot(dx, dy);
      const double ex = rho > 0.0 ? dx / rho : 0.0;
      const double ey = rho > 0.0 ? dy / rho : 0.0;
      const double u = flow.u(y, x), v = flow.v(y, x);
      samples.push_back({s->ring * grid.theta_bins + s->bin, u * ex + v * ey, -u * ey + v * ex, frame(y, x)});
    }

  std::vector<double> count(sectors, 0.0);
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(sectors, 3);
  Eigen::MatrixXd var = Eigen::MatrixXd::Zero(sectors, 3);
  for (const auto& s : samples) {
    count[s.sector] += 1.0;
    mean(s.sector, 0) += s.vr;
    mean(s.sector, 1) += s.vt;
    mean(s.sector, 2) += s.gray;
  }
  for (int i = 0; i < sectors; ++i)
    if (count[i] > 0) mean.row(i) /= count[i];
  for (const auto& s : samples) {
    const double d[3] = {s.vr - mean(s.sector, 0), s.vt - mean(s.sector, 1), s.gray - mean(s.sector, 2)};
    for (int f = 0; f < 3; ++f) var(s.sector, f) += d[f] * d[f];
  }

  RawDescriptor out;
  out.frame_index = frame_index;
  out.values = Vector::Zero(grid.descriptor_length());
  for (int i = 0; i < sectors; ++i) {
    if (count[i] == 0) continue;
    auto block = out.values.segment(i * kSectorFeatures, kSectorFeatures);
    block[MeanRadial] = mean(i, 0);
    block[MeanTangential] = mean(i, 1);
    block[StdRadial] = std::sqrt(var(i, 0) / count[i]);
    block[StdTangential] = std::sqrt(var(i, 1) / count[i]);
    block[MeanGray] = mean(i, 2);
    block[StdGray] = std::sqrt(var(i, 2) / count[i]);
  }
  return out;
}

Vector ScalerModel::apply(const Vector& x) const {
  if (x.size() != mean.size()) throw Error(ErrorKind::Model, kModule, "scaler dimension mismatch");
  return ((x - mean).array() / scale.array()).matrix();
}

Vector ScalerModel::invert(const Vector& x) const {
  if (x.size() != mean.size()) throw Error(ErrorKind::Model, kModule, "scaler dimension mismatch");
  return (x.array() * scale.array()).matrix() + mean;
}

ScalerModel fit_scaler(const Matrix& X) {
  if (X.rows() < 2) throw Error(ErrorKind::InsufficientData, kModule, "scaler needs at least 2 samples");
  require_finite(X, "scaler input");
  ScalerModel m;
  m.mean = X.colwise().mean().transpose();
  const Matrix centered = X.rowwise() - m.mean.transpose();
  m.scale = (centered.array().square().colwise().sum() / static_cast<double>(X.rows())).sqrt().transpose();
  for (auto& s : m.scale) s = std::max(s, kScaleFloor);
  return m;
}

Vector PcaModel::project(const Vector& x) const {
  if (x.size() != input_dim()) throw Error(ErrorKind::Model, kModule, "PCA input dimension mismatch");
  return components * (x - input_mean);
}

Vector PcaModel::back_project(const Vector& z) const {
  if (z.size() != k()) throw Error(ErrorKind::Model, kModule, "PCA latent dimension mismatch");
  return components.transpose() * z + input_mean;
}

double PcaModel::explained_ratio() const {
  return total_variance > 0.0 ? explained_variance.sum() / total_variance : 1.0;
}

PcaModel fit_pca(const Matrix& X, int k) {
  const auto n = X.rows(), d = X.cols();
  if (n < 2) throw Error(ErrorKind::InsufficientData, kModule, "PCA needs at least 2 samples");
  if (k < 1 || k > std::min<Eigen::Index>(n - 1, d))
    throw Error(ErrorKind::Parameter, kModule,
                "PCA k=" + std::to_string(k) + " outside [1, " + std::to_string(std::min<Eigen::Index>(n - 1, d)) + "]");
  require_finite(X, "PCA input");

  PcaModel m;
  m.input_mean = X.colwise().mean().transpose();
  const Matrix centered = X.rowwise() - m.input_mean.transpose();
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(n);
  m.total_variance = cov.trace();

  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) throw Error(ErrorKind::Numeric, kModule, "eigendecomposition failed");
  m.components.resize(k, d);
  m.explained_variance.resize(k);
  for (int i = 0; i < k; ++i) {
    const Eigen::Index col = d - 1 - i;  // eigenvalues come ascending
    Vector axis = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis[arg] < 0) axis = -axis;
    m.components.row(i) = axis.transpose();
    m.explained_variance[i] = std::max(0.0, eig.eigenvalues()[col]);
  }
  return m;
}

DescriptorResult descriptor_sequence(const FrameSequence& seq, const std::vector<FlowField>& flows,
                                     const SectorGrid& grid_in, int k, const ScalerModel* scaler,
                                     const PcaModel* pca) {
  if (static_cast<int>(flows.size()) != seq.length() - 1)
    throw Error(ErrorKind::Dimension, kModule, "expected T-1 flows for T frames");
  const SectorGrid grid = grid_in.resolved_for(seq.height(), seq.width());
  grid.validate(seq.height(), seq.width());
  const int n = static_cast<int>(flows.size());
  const int dim = grid.descriptor_length();

  DescriptorResult out;
  out.raw.resize(n, dim);
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < n; ++t) out.raw.row(t) = extract_descriptor(seq.frames[t], flows[t], grid, t).values.transpose();

  if ((scaler == nullptr) != (pca == nullptr))
    throw Error(ErrorKind::Model, kModule, "transform mode needs both a scaler and a PCA model");
  if (scaler) {
    if (scaler->mean.size() != dim || pca->input_dim() != dim)
      throw Error(ErrorKind::Model, kModule,
                  "model expects descriptor length " + std::to_string(scaler->mean.size()) + ", grid gives " +
                      std::to_string(dim));
    out.scaler = *scaler;
    out.pca = *pca;
  } else {
    out.scaler = fit_scaler(out.raw);
  }
  Matrix scaled(n, dim);
  for (int t = 0; t < n; ++t) scaled.row(t) = out.scaler.apply(out.raw.row(t).transpose()).transpose();
  if (!pca) out.pca = fit_pca(scaled, k);
  out.Z.resize(n, out.pca.k());
  for (int t = 0; t < n; ++t) out.Z.row(t) = out.pca.project(scaled.row(t).transpose()).transpose();
  return out;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) throw Error(ErrorKind::Format, kModule, "ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

json vector_to_json(const Vector& v) { return json(std::vector<double>(v.begin(), v.end())); }

Vector vector_from_json(const json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json to_json(const ScalerModel& s) { return {{"mean", vector_to_json(s.mean)}, {"scale", vector_to_json(s.scale)}}; }

json to_json(const PcaModel& p) {
  return {{"k", p.k()},
          {"components", matrix_to_json(p.components)},
          {"explained_variance", vector_to_json(p.explained_variance)},
          {"input_mean", vector_to_json(p.input_mean)},
          {"total_variance", p.total_variance}};
}

ScalerModel scaler_from_json(const json& j) {
  try {
    ScalerModel s{vector_from_json(j.at("mean")), vector_from_json(j.at("scale"))};
    if (s.mean.size() != s.scale.size()) throw Error(ErrorKind::Model, kModule, "scaler mean/scale lengths differ");
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, kModule, std::string("scaler JSON: ") + e.what());
  }
}

PcaModel pca_from_json(const json& j) {
  try {
    PcaModel p;
    p.components = matrix_from_json(j.at("components"));
    p.explained_variance = vector_from_json(j.at("explained_variance"));
    p.input_mean = vector_from_json(j.at("input_mean"));
    p.total_variance = j.value("total_variance", 0.0);
    if (p.k() != j.at("k").get<int>() || p.input_mean.size() != p.input_dim())
      throw Error(ErrorKind::Model, kModule, "PCA JSON dimensions inconsistent");
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, kModule, std::string("PCA JSON: ") + e.what());
  }
}

}  // namespace dyl
