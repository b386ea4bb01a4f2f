#include "dyl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace dyl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kModule = "pipeline";

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void PipelineConfig::validate() const {
  flow.validate();
  rbf.validate();
  if (grid.r_bins < 1 || grid.theta_bins < 1) throw Error(ErrorKind::Parameter, kModule, "grid bins must be >= 1");
  if (pca_k < 1) throw Error(ErrorKind::Parameter, kModule, "pca k must be >= 1");
  if (k2 < 1) throw Error(ErrorKind::Parameter, kModule, "k2 must be >= 1");
}

json to_json(const PipelineConfig& c) {
  return {{"grid", {{"r_bins", c.grid.r_bins}, {"theta_bins", c.grid.theta_bins}, {"r_max", c.grid.r_max}}},
          {"flow",
           {{"alpha", c.flow.alpha}, {"iterations", c.flow.iterations}, {"presmooth_sigma", c.flow.presmooth_sigma}}},
          {"pca_k", c.pca_k},
          {"rbf",
           {{"m_centers", c.rbf.m_centers},
            {"sigma", c.rbf.sigma},
            {"learn_rate", c.rbf.learn_rate},
            {"epochs", c.rbf.epochs},
            {"ridge", c.rbf.ridge},
            {"fit", c.rbf.fit == FitMethod::Lms ? "lms" : "ls"}}},
          {"k2", c.k2},
          {"cpda",
           {{"channels", c.cpda.channels},
            {"phase_dim", c.cpda.phase_dim},
            {"edg_dim", c.cpda.edg_dim},
            {"heads", c.cpda.heads},
            {"alpha", c.cpda.alpha}}},
          {"seed", c.seed}};
}

PipelineConfig config_from_json(const json& j, PipelineConfig c) {
  try {
    if (j.contains("grid")) {
      const auto& g = j["grid"];
      maybe(g, "r_bins", c.grid.r_bins);
      maybe(g, "theta_bins", c.grid.theta_bins);
      maybe(g, "r_max", c.grid.r_max);
    }
    if (j.contains("flow")) {
      const auto& f = j["flow"];
      maybe(f, "alpha", c.flow.alpha);
      maybe(f, "iterations", c.flow.iterations);
      maybe(f, "presmooth_sigma", c.flow.presmooth_sigma);
    }
    maybe(j, "pca_k", c.pca_k);
    if (j.contains("rbf")) {
      const auto& r = j["rbf"];
      maybe(r, "m_centers", c.rbf.m_centers);
      maybe(r, "sigma", c.rbf.sigma);
      maybe(r, "learn_rate", c.rbf.learn_rate);
      maybe(r, "epochs", c.rbf.epochs);
      maybe(r, "ridge", c.rbf.ridge);
      if (r.contains("fit")) c.rbf.fit = r["fit"].get<std::string>() == "ls" ? FitMethod::LeastSquares : FitMethod::Lms;
    }
    maybe(j, "k2", c.k2);
    if (j.contains("cpda")) {
      const auto& p = j["cpda"];
      maybe(p, "channels", c.cpda.channels);
      maybe(p, "phase_dim", c.cpda.phase_dim);
      maybe(p, "edg_dim", c.cpda.edg_dim);
      maybe(p, "heads", c.cpda.heads);
      maybe(p, "alpha", c.cpda.alpha);
    }
    maybe(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, kModule, std::string("config: ") + e.what());
  }
  return c;
}

Matrix EdgResult::pedg_per_pair() const { return align_pedg(pedg.P, static_cast<int>(flows.size())); }

double EdgResult::final_residual() const {
  return model.residual_history.empty() ? 0.0 : model.residual_history.back();
}

EdgResult run_edg_pipeline(const FrameSequence& seq, const PipelineConfig& config) {
  config.validate();
  seq.validate();
  EdgResult r;
  r.grid = config.grid.resolved_for(seq.height(), seq.width());
  r.grid.validate(seq.height(), seq.width());

  r.flows = flow_sequence(seq, config.flow);
  for (const auto& f : r.flows)
    for (std::size_t i = 0; i < f.u.size() && !r.motion_detected; ++i)
      r.motion_detected = f.u.data()[i] != 0.0 || f.v.data()[i] != 0.0;

  r.descriptors = descriptor_sequence(seq, r.flows, r.grid, config.pca_k);
  RbfConfig rbf = config.rbf;
  rbf.seed = derive_seed(config.seed, "dynamics.kmeans");
  const Matrix& Z = r.descriptors.Z;
  r.model = train_dynamics(Z, rbf);
  r.energies = energy_sequence(r.model, Z);
  r.edg.resize(r.energies.size());
#pragma omp parallel for schedule(static)
  for (int t = 0; t < static_cast<int>(r.energies.size()); ++t) {
    const Vector z = Z.row(t).transpose();
    const Vector dz = (Z.row(t + 1) - Z.row(t)).transpose();
    r.edg[t] = edg_from_energy(r.energies[t], r.model, r.descriptors.pca, r.descriptors.scaler, r.grid, z, dz);
  }
  r.pedg = pedg_sequence(r.energies, config.k2);
  return r;
}

std::vector<Grid2<std::uint8_t>> edg_heatmaps(const EdgResult& r, int height, int width) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& m : r.edg) {
    lo = std::min(lo, m.sectors.minCoeff());
    hi = std::max(hi, m.sectors.maxCoeff());
  }
  const double span = hi - lo;
  std::vector<Grid2<std::uint8_t>> out;
  for (const auto& m : r.edg) {
    Grid2<std::uint8_t> img(height, width, 0);
    if (span > 0.0)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
          if (auto s = sector_of(x, y, r.grid)) img(y, x) = quantize((m.sectors(s->ring, s->bin) - lo) / span);
    out.push_back(std::move(img));
  }
  return out;
}

std::string edg_csv(const EdgResult& r) {
  std::string out = "t,r,theta,energy\n";
  for (const auto& m : r.edg)
    for (int ring = 0; ring < m.sectors.rows(); ++ring)
      for (int th = 0; th < m.sectors.cols(); ++th)
        out += std::to_string(m.frame_index) + "," + std::to_string(ring) + "," + std::to_string(th) + "," +
               format_number(m.sectors(ring, th)) + "\n";
  return out;
}

namespace {

std::string matrix_csv(const Matrix& m, const char* prefix) {
  std::string out = "t";
  for (Eigen::Index c = 0; c < m.cols(); ++c) out += "," + std::string(prefix) + std::to_string(c);
  out += "\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out += std::to_string(r);
    for (Eigen::Index c = 0; c < m.cols(); ++c) out += "," + format_number(m(r, c));
    out += "\n";
  }
  return out;
}

}  // namespace

std::string pedg_csv(const EdgResult& r) { return matrix_csv(r.pedg_per_pair(), "p"); }

std::string descriptor_csv(const EdgResult& r) { return matrix_csv(r.descriptors.raw, "f"); }

void write_edg_outputs(const EdgResult& r, int height, int width, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::Io, kModule, "cannot create " + out_dir.string() + ": " + ec.message());
  const auto maps = edg_heatmaps(r, height, width);
  for (std::size_t t = 0; t < maps.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "edg_%04zu.pgm", t);
    write_file_atomic(out_dir / name, encode_pgm(maps[t]));
  }
  write_text_atomic(out_dir / "edg.csv", edg_csv(r));
  write_text_atomic(out_dir / "pedg.csv", pedg_csv(r));
  write_text_atomic(out_dir / "descriptors.csv", descriptor_csv(r));
  write_text_atomic(out_dir / "model.json", to_json(r.model).dump(2) + "\n");
  const json desc = {{"scaler", to_json(r.descriptors.scaler)},
                     {"pca", to_json(r.descriptors.pca)},
                     {"pedg_pca", to_json(r.pedg.pca)},
                     {"grid",
                      {{"r_bins", r.grid.r_bins},
                       {"theta_bins", r.grid.theta_bins},
                       {"cx", r.grid.cx},
                       {"cy", r.grid.cy},
                       {"r_max", r.grid.r_max}}}};
  write_text_atomic(out_dir / "descriptor_model.json", desc.dump(2) + "\n");
}

}  // namespace dyl
