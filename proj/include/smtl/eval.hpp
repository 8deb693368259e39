#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "smtl/stats.hpp"
#include "smtl/tensor.hpp"
#include "smtl/volume.hpp"

namespace smtl::eval {

struct Map2D {
  int h = 0, w = 0;
  std::vector<double> v;

  Map2D() = default;
  Map2D(int hh, int ww) : h(hh), w(ww), v(static_cast<size_t>(hh) * ww, 0.0) {}
  double& at(int i, int j) { return v[static_cast<size_t>(i) * w + j]; }
  double at(int i, int j) const { return v[static_cast<size_t>(i) * w + j]; }
};

struct Mask2D {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  Mask2D() = default;
  Mask2D(int hh, int ww) : h(hh), w(ww), v(static_cast<size_t>(hh) * ww, 0) {}
  uint8_t& at(int i, int j) { return v[static_cast<size_t>(i) * w + j]; }
  uint8_t at(int i, int j) const { return v[static_cast<size_t>(i) * w + j]; }
};

// Slice with the most tumor voxels; ties go to the smallest index.
int select_slice(const data::TumorMask& mask);

Map2D slice_map(const ag::Tensor& field3d, int slice);  // field [D,H,W]
Mask2D slice_mask(const data::TumorMask& mask, int slice);

// (a - min) / (max - min); all zeros when the map is constant.
Map2D normalize_attention(const Map2D& a);

// Dice overlap between the top-k% attention region and the ROI. The
// threshold is the nearest-rank (100-k)-th percentile over the whole
// slice; membership requires a strict  a > tau.
double dice_topk(const Map2D& a, const Mask2D& roi, double k_percent);

struct Profiles {
  std::vector<double> horizontal;  // length w, along the centroid row
  std::vector<double> vertical;    // length h, along the centroid column
  int cx = 0, cy = 0;              // rounded centroid, (column, row)
};
Profiles intensity_profiles(const Map2D& a, const Mask2D& roi);

struct AttentionStats {
  double mean_roi = 0.0;
  double mean_bg = 0.0;
  double ratio = 0.0;  // mean_roi / mean_bg
  double p = 1.0;      // two-sided rank-sum p-value
};
// `a` is the 3D attention at input resolution, [D,H,W].
AttentionStats attention_stats(const ag::Tensor& a, const data::TumorMask& mask);

// Nearest-neighbor upsampling of a [D',H',W'] map by an integer factor.
ag::Tensor upsample_nearest(const ag::Tensor& a, int factor);

// Binary PPM with a linear blue-to-red colormap: 0 -> (0,0,255),
// 1 -> (255,0,0), value v -> (round(255 v), 0, 255 - round(255 v)).
void export_heatmap(const Map2D& normalized, const std::filesystem::path& path);

struct CaseReport {
  std::string id;
  int slice = 0;
  double dice = 0.0;
  AttentionStats stats;
};
void write_attention_report_csv(const std::filesystem::path& path,
                                const std::vector<CaseReport>& rows);

std::string format_g12(double v);  // 12 significant digits, NaN -> "NA"

}  // namespace smtl::eval
