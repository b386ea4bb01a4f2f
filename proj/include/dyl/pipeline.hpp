#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dyl/cpda.hpp"
#include "dyl/dynamics.hpp"
#include "dyl/flow.hpp"
#include "dyl/seqio.hpp"

namespace dyl {

struct PipelineConfig {
  SectorGrid grid;
  FlowParams flow;
  int pca_k = 10;
  RbfConfig rbf;
  int k2 = 8;
  CpdaShape cpda;
  std::uint64_t seed = 7;

  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);
/// Keys missing from `j` keep the values already in `base`.
PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {});

struct EdgResult {
  SectorGrid grid;  // resolved for the sequence size
  std::vector<FlowField> flows;
  DescriptorResult descriptors;
  DynamicsModel model;
  std::vector<EnergyFrame> energies;  // T-2 frames
  std::vector<EdgMap> edg;            // one per energy frame
  PedgResult pedg;
  bool motion_detected = false;

  /// P_EDG padded to one row per frame pair (T-1) by repeating the last row.
  Matrix pedg_per_pair() const;
  double final_residual() const;
};

/// flow -> descriptors -> dynamics -> energy -> EDG and P_EDG.
EdgResult run_edg_pipeline(const FrameSequence& seq, const PipelineConfig& config);

/// Sector values painted into their annular sectors, min-max scaled over the
/// whole sequence to 0..255. A constant sequence paints zeros.
std::vector<Grid2<std::uint8_t>> edg_heatmaps(const EdgResult& r, int height, int width);

std::string edg_csv(const EdgResult& r);
std::string pedg_csv(const EdgResult& r);
std::string descriptor_csv(const EdgResult& r);

/// Writes edg_%04d.pgm, edg.csv, pedg.csv, descriptors.csv, model.json and descriptor_model.json.
void write_edg_outputs(const EdgResult& r, int height, int width, const std::filesystem::path& out_dir);

}  // namespace dyl
