#include "dyl/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dyl {

using nlohmann::json;

namespace {

constexpr const char* kModule = "dynamics";
constexpr double kDivergenceLimit = 1e6;

Matrix deltas(const Matrix& Z) { return Z.bottomRows(Z.rows() - 1) - Z.topRows(Z.rows() - 1); }

}  // namespace

void RbfConfig::validate() const {
  if (m_centers < 1) throw Error(ErrorKind::Parameter, kModule, "m_centers must be >= 1");
  if (!(learn_rate > 0.0)) throw Error(ErrorKind::Parameter, kModule, "learn_rate must be > 0");
  if (epochs < 1) throw Error(ErrorKind::Parameter, kModule, "epochs must be >= 1");
  if (!(ridge >= 0.0)) throw Error(ErrorKind::Parameter, kModule, "ridge must be >= 0");
}

Matrix kmeans(const Matrix& Z, int m, std::uint64_t seed, int max_iterations) {
  const auto n = Z.rows();
  if (m < 1) throw Error(ErrorKind::Parameter, kModule, "k-means needs at least one center");
  if (n < m) throw Error(ErrorKind::InsufficientData, kModule,
                         "k-means needs at least " + std::to_string(m) + " points, got " + std::to_string(n));
  if (!Z.allFinite()) throw Error(ErrorKind::Numeric, kModule, "k-means input contains non-finite values");

  std::mt19937_64 rng(seed);
  Matrix centers(m, Z.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  centers.row(0) = Z.row(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
  for (int c = 1; c < m; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (Z.row(i) - centers.row(c - 1)).squaredNorm());
      total += d2[i];
    }
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0 && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
    }
    centers.row(c) = Z.row(pick);
  }

  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    std::vector<double> dist(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < m; ++c) {
        const double d = (Z.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      dist[i] = best_d;
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    Matrix sums = Matrix::Zero(m, Z.cols());
    std::vector<int> counts(m, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += Z.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < m; ++c) {
      if (counts[c] > 0) {
        centers.row(c) = sums.row(c) / counts[c];
        continue;
      }
      // Empty cluster: move it to the point worst served by its current center.
      Eigen::Index far = 0;
      for (Eigen::Index i = 1; i < n; ++i)
        if (dist[i] > dist[far]) far = i;
      centers.row(c) = Z.row(far);
      dist[far] = 0.0;
      assign[far] = c;
    }
  }
  return centers;
}

Vector rbf_response(const Vector& z, const Matrix& centers, double sigma) {
  if (z.size() != centers.cols()) throw Error(ErrorKind::Model, kModule, "input dimension does not match centers");
  Vector phi(centers.rows());
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (Eigen::Index i = 0; i < centers.rows(); ++i) phi[i] = std::exp(-(z.transpose() - centers.row(i)).squaredNorm() * inv);
  return phi;
}

double median_center_distance(const Matrix& centers) {
  std::vector<double> d;
  for (Eigen::Index i = 0; i < centers.rows(); ++i)
    for (Eigen::Index j = i + 1; j < centers.rows(); ++j) d.push_back((centers.row(i) - centers.row(j)).norm());
  if (d.empty()) return 1.0;
  std::sort(d.begin(), d.end());
  const std::size_t mid = d.size() / 2;
  const double med = d.size() % 2 ? d[mid] : 0.5 * (d[mid - 1] + d[mid]);
  return med > 0.0 ? med : 1.0;
}

Matrix rbf_design(const Matrix& inputs, const Matrix& centers, double sigma) {
  Matrix design(inputs.rows(), centers.rows());
  for (Eigen::Index t = 0; t < inputs.rows(); ++t)
    design.row(t) = rbf_response(inputs.row(t).transpose(), centers, sigma).transpose();
  return design;
}

Matrix ridge_weights(const Matrix& design, const Matrix& targets, double ridge) {
  const Matrix gram = design.transpose() * design + ridge * Matrix::Identity(design.cols(), design.cols());
  Eigen::LDLT<Matrix> solver(gram);
  if (solver.info() != Eigen::Success) throw Error(ErrorKind::Numeric, kModule, "ridge system is singular");
  return solver.solve(design.transpose() * targets);
}

double training_mse(const DynamicsModel& model, const Matrix& inputs, const Matrix& targets) {
  const Matrix design = rbf_design(inputs, model.centers, model.sigma);
  return (design * model.weights - targets).rowwise().squaredNorm().mean();
}

DynamicsModel fit_weights(const Matrix& inputs, const Matrix& targets, const Matrix& centers, double sigma,
                          const RbfConfig& config) {
  config.validate();
  if (inputs.rows() != targets.rows() || inputs.cols() != targets.cols() || inputs.cols() != centers.cols())
    throw Error(ErrorKind::Model, kModule, "inputs, targets and centers disagree in shape");
  if (inputs.rows() < 1) throw Error(ErrorKind::InsufficientData, kModule, "no training pairs");
  if (!(sigma > 0.0)) throw Error(ErrorKind::Parameter, kModule, "sigma must be > 0");

  DynamicsModel model;
  model.centers = centers;
  model.sigma = sigma;
  model.config = config;
  model.config.sigma = sigma;
  model.weights = Matrix::Zero(centers.rows(), inputs.cols());

  const Matrix design = rbf_design(inputs, centers, sigma);
  if (config.fit == FitMethod::LeastSquares) {
    model.weights = ridge_weights(design, targets, config.ridge);
    model.residual_history.push_back((design * model.weights - targets).rowwise().squaredNorm().mean());
    return model;
  }

  model.residual_history.reserve(config.epochs);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (Eigen::Index t = 0; t < design.rows(); ++t) {
      const Vector phi = design.row(t).transpose();
      const Vector err = targets.row(t).transpose() - model.weights.transpose() * phi;
      model.weights.noalias() += config.learn_rate * phi * err.transpose();
    }
    const double mse = (design * model.weights - targets).rowwise().squaredNorm().mean();
    if (!std::isfinite(mse) || mse > kDivergenceLimit)
      throw Error(ErrorKind::Divergence, kModule,
                  "training diverged at epoch " + std::to_string(epoch) + "; try a smaller learn_rate");
    model.residual_history.push_back(mse);
  }
  return model;
}

DynamicsModel train_dynamics(const Matrix& Z, const RbfConfig& config) {
  config.validate();
  if (Z.rows() < std::max(config.m_centers, 2))
    throw Error(ErrorKind::InsufficientData, kModule,
                "need at least max(M, 2) = " + std::to_string(std::max(config.m_centers, 2)) + " samples");
  const Matrix centers = kmeans(Z, config.m_centers, config.seed);
  const double sigma = config.sigma > 0.0 ? config.sigma : median_center_distance(centers);
  return fit_weights(Z.topRows(Z.rows() - 1), deltas(Z), centers, sigma, config);
}

Vector predict_delta(const DynamicsModel& model, const Vector& z) {
  if (z.size() != model.k()) throw Error(ErrorKind::Model, kModule, "input dimension does not match the model");
  return model.weights.transpose() * rbf_response(z, model.centers, model.sigma);
}

std::vector<EnergyFrame> energy_sequence(const DynamicsModel& model, const Matrix& Z) {
  if (Z.rows() < 2) throw Error(ErrorKind::InsufficientData, kModule, "energy needs at least 2 samples");
  if (Z.cols() != model.k()) throw Error(ErrorKind::Model, kModule, "Z dimension does not match the model");
  std::vector<EnergyFrame> out(Z.rows() - 1);
#pragma omp parallel for schedule(static)
  for (Eigen::Index t = 0; t < Z.rows() - 1; ++t) {
    const Vector z = Z.row(t).transpose();
    const Vector phi = rbf_response(z, model.centers, model.sigma);
    EnergyFrame& f = out[t];
    f.frame_index = static_cast<int>(t);
    f.residual = model.weights.transpose() * phi - (Z.row(t + 1) - Z.row(t)).transpose();
    f.residual_norm = f.residual.norm();
    f.e = phi * f.residual_norm;
  }
  return out;
}

EdgMap edg_from_energy(const EnergyFrame& energy, const DynamicsModel& model, const PcaModel& pca,
                       const ScalerModel& scaler, const SectorGrid& grid, const Vector& z, const Vector& dz) {
  if (pca.input_dim() != grid.descriptor_length() || scaler.scale.size() != grid.descriptor_length())
    throw Error(ErrorKind::Model, kModule, "grid does not match the descriptor models");
  if (pca.k() != model.k() || z.size() != model.k() || dz.size() != model.k())
    throw Error(ErrorKind::Model, kModule, "latent dimension mismatch between PCA and dynamics model");
  if (energy.e.size() != model.m()) throw Error(ErrorKind::Model, kModule, "energy vector length differs from M");

  const Vector phi = rbf_response(z, model.centers, model.sigma);
  const Vector residual = model.weights.transpose() * phi - dz;
  const Vector raw = (pca.components.transpose() * residual).cwiseProduct(scaler.scale);
  const double weight = phi.mean();

  EdgMap map;
  map.frame_index = energy.frame_index;
  map.sectors.resize(grid.r_bins, grid.theta_bins);
  for (int r = 0; r < grid.r_bins; ++r)
    for (int th = 0; th < grid.theta_bins; ++th) {
      const int s = r * grid.theta_bins + th;
      map.sectors(r, th) = std::max(0.0, raw.segment(s * kSectorFeatures, kSectorFeatures).norm() * weight);
    }
  return map;
}

PedgResult pedg_sequence(const std::vector<EnergyFrame>& energies, int k2) {
  if (energies.size() < 2) throw Error(ErrorKind::InsufficientData, kModule, "P_EDG needs at least 2 energy frames");
  const auto m = energies.front().e.size();
  Matrix E(static_cast<Eigen::Index>(energies.size()), m);
  for (std::size_t t = 0; t < energies.size(); ++t) {
    if (energies[t].e.size() != m) throw Error(ErrorKind::Model, kModule, "energy frames differ in length");
    E.row(static_cast<Eigen::Index>(t)) = energies[t].e.transpose();
  }
  if (k2 < 1 || k2 > std::min<Eigen::Index>(E.rows() - 1, m))
    throw Error(ErrorKind::InsufficientData, kModule,
                "k2=" + std::to_string(k2) + " needs at least k2+1 energy frames and k2 <= M");
  PedgResult out;
  out.pca = fit_pca(E, k2);
  out.P.resize(E.rows(), k2);
  for (Eigen::Index t = 0; t < E.rows(); ++t) out.P.row(t) = out.pca.project(E.row(t).transpose()).transpose();
  return out;
}

json to_json(const DynamicsModel& m) {
  const RbfConfig& c = m.config;
  return {{"centers", matrix_to_json(m.centers)},
          {"weights", matrix_to_json(m.weights)},
          {"sigma", m.sigma},
          {"config",
           {{"m_centers", c.m_centers},
            {"sigma", c.sigma},
            {"learn_rate", c.learn_rate},
            {"epochs", c.epochs},
            {"ridge", c.ridge},
            {"seed", c.seed},
            {"fit", c.fit == FitMethod::Lms ? "lms" : "ls"}}},
          {"residual_history", m.residual_history}};
}

DynamicsModel dynamics_from_json(const json& j) {
  try {
    DynamicsModel m;
    m.centers = matrix_from_json(j.at("centers"));
    m.weights = matrix_from_json(j.at("weights"));
    m.sigma = j.at("sigma").get<double>();
    const auto& c = j.at("config");
    m.config.m_centers = c.at("m_centers").get<int>();
    m.config.sigma = c.at("sigma").get<double>();
    m.config.learn_rate = c.at("learn_rate").get<double>();
    m.config.epochs = c.at("epochs").get<int>();
    m.config.ridge = c.at("ridge").get<double>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    m.config.fit = c.at("fit").get<std::string>() == "ls" ? FitMethod::LeastSquares : FitMethod::Lms;
    m.residual_history = j.at("residual_history").get<std::vector<double>>();
    if (m.centers.rows() != m.weights.rows() || m.centers.cols() != m.weights.cols())
      throw Error(ErrorKind::Model, kModule, "centers and weights differ in shape");
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, kModule, std::string("model JSON: ") + e.what());
  }
}

}  // namespace dyl
