#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dyl/common.hpp"
#include "dyl/seqio.hpp"

namespace dyl {

using BinaryMask = Grid2<std::uint8_t>;  // nonzero = foreground

/// 2|A and B| / (|A| + |B|); 1.0 when both are empty.
double dice(const BinaryMask& a, const BinaryMask& b);

/// Foreground pixels with at least one 8-neighbour outside the mask (the image
/// border counts as outside). Returned as (y, x) pairs in raster order.
std::vector<std::array<int, 2>> boundary_pixels(const BinaryMask& m);

/// 95th percentile (linear interpolation) of the symmetric boundary-to-boundary
/// distances. Throws UndefinedDistance if either mask is empty.
double hd95(const BinaryMask& a, const BinaryMask& b);

/// Percentile with linear interpolation between order statistics, q in [0, 1].
double percentile_linear(std::vector<double> values, double q);

/// Mean absolute change of per-frame Dice between adjacent frames.
double tcd(const std::vector<double>& dice_per_frame);

BinaryMask binarize(const LabelImage& labels, Label label);

struct LabelReport {
  Label label = Label::LV;
  std::vector<double> dice_per_frame;
  std::vector<std::optional<double>> hd95_per_frame;  // empty when undefined
  std::vector<int> skipped_frames;  // gt empty for this label
  double mean_dice = 0.0;
  std::optional<double> mean_hd95;
  double tcd = 0.0;
};

struct MetricsReport {
  std::vector<LabelReport> per_label;  // LV, LVM, LA
  double average_tcd = 0.0;

  double mean_dice() const;
  std::optional<double> mean_hd95() const;
};

MetricsReport evaluate(const MaskSequence& pred, const MaskSequence& gt);

const char* label_name(Label l);
nlohmann::json to_json(const MetricsReport& r);
std::string to_csv(const MetricsReport& r);

}  // namespace dyl
