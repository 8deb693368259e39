#include "smtl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "smtl/errors.hpp"

namespace smtl::eval {

int select_slice(const data::TumorMask& mask) {
  if (mask.foreground_count() == 0)
    throw DataError("select_slice: empty tumor mask");
  int best = 0;
  int64_t best_count = -1;
  for (int k = 0; k < mask.dims.d; ++k) {
    int64_t count = 0;
    for (int i = 0; i < mask.dims.h; ++i)
      for (int j = 0; j < mask.dims.w; ++j) count += mask.at(i, j, k);
    if (count > best_count) {  // strict: ties keep the smallest index
      best_count = count;
      best = k;
    }
  }
  return best;
}

Map2D slice_map(const ag::Tensor& field3d, int slice) {
  if (field3d.shape.size() != 3)
    throw std::invalid_argument("slice_map: expected a [D,H,W] tensor, got " +
                                ag::shape_str(field3d.shape));
  const int d = static_cast<int>(field3d.shape[0]);
  const int h = static_cast<int>(field3d.shape[1]);
  const int w = static_cast<int>(field3d.shape[2]);
  if (slice < 0 || slice >= d)
    throw std::invalid_argument("slice_map: slice out of range");
  Map2D out(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      out.at(i, j) = field3d[(static_cast<int64_t>(slice) * h + i) * w + j];
  return out;
}

Mask2D slice_mask(const data::TumorMask& mask, int slice) {
  Mask2D out(mask.dims.h, mask.dims.w);
  for (int i = 0; i < mask.dims.h; ++i)
    for (int j = 0; j < mask.dims.w; ++j) out.at(i, j) = mask.at(i, j, slice);
  return out;
}

Map2D normalize_attention(const Map2D& a) {
  Map2D out = a;
  double lo = INFINITY, hi = -INFINITY;
  for (double v : a.v) {
    if (!std::isfinite(v))
      throw NumericError("normalize_attention: non-finite value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) {
    std::fill(out.v.begin(), out.v.end(), 0.0);
    return out;
  }
  for (double& v : out.v) v = (v - lo) / (hi - lo);
  return out;
}

double dice_topk(const Map2D& a, const Mask2D& roi, double k_percent) {
  if (a.h != roi.h || a.w != roi.w)
    throw std::invalid_argument("dice_topk: map " + std::to_string(a.h) + "x" +
                                std::to_string(a.w) + " vs roi " +
                                std::to_string(roi.h) + "x" +
                                std::to_string(roi.w));
  if (!(k_percent > 0.0 && k_percent <= 100.0))
    throw std::invalid_argument("dice_topk: k must be in (0, 100]");
  int64_t gt = 0;
  for (uint8_t b : roi.v) gt += b;
  if (gt == 0) throw DataError("dice_topk: empty ROI");

  // Nearest-rank percentile over the whole slice; rank 0 (k = 100) admits
  // every pixel.
  const double pct = 100.0 - k_percent;
  const int64_t n = static_cast<int64_t>(a.v.size());
  const int64_t rank = static_cast<int64_t>(
      std::ceil(pct / 100.0 * static_cast<double>(n)));
  double tau;
  if (rank <= 0) {
    tau = -INFINITY;
  } else {
    std::vector<double> sorted = a.v;
    std::sort(sorted.begin(), sorted.end());
    tau = sorted[static_cast<size_t>(std::min(rank, n) - 1)];
  }

  int64_t rk = 0, inter = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    if (a.v[i] > tau) {
      ++rk;
      if (roi.v[i]) ++inter;
    }
  }
  if (rk + gt == 0) return 0.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(rk + gt);
}

Profiles intensity_profiles(const Map2D& a, const Mask2D& roi) {
  if (a.h != roi.h || a.w != roi.w)
    throw std::invalid_argument("intensity_profiles: dims mismatch");
  double si = 0.0, sj = 0.0;
  int64_t count = 0;
  for (int i = 0; i < roi.h; ++i)
    for (int j = 0; j < roi.w; ++j)
      if (roi.at(i, j)) {
        si += i;
        sj += j;
        ++count;
      }
  if (count == 0) throw DataError("intensity_profiles: empty ROI");

  Profiles out;
  // Round half up per coordinate.
  out.cy = static_cast<int>(std::floor(si / static_cast<double>(count) + 0.5));
  out.cx = static_cast<int>(std::floor(sj / static_cast<double>(count) + 0.5));
  out.horizontal.resize(static_cast<size_t>(a.w));
  out.vertical.resize(static_cast<size_t>(a.h));
  for (int j = 0; j < a.w; ++j)
    out.horizontal[static_cast<size_t>(j)] = a.at(out.cy, j);
  for (int i = 0; i < a.h; ++i)
    out.vertical[static_cast<size_t>(i)] = a.at(i, out.cx);
  return out;
}

AttentionStats attention_stats(const ag::Tensor& a,
                               const data::TumorMask& mask) {
  if (a.shape.size() != 3 || a.shape[0] != mask.dims.d ||
      a.shape[1] != mask.dims.h || a.shape[2] != mask.dims.w)
    throw std::invalid_argument("attention_stats: attention " +
                                ag::shape_str(a.shape) + " vs mask " +
                                mask.dims.str());
  std::vector<double> roi, bg;
  for (size_t i = 0; i < mask.bits.size(); ++i)
    (mask.bits[i] ? roi : bg).push_back(a.data[i]);
  if (roi.empty() || bg.empty())
    throw DataError("attention_stats: both ROI and background must be nonempty");

  AttentionStats out;
  for (double v : roi) out.mean_roi += v;
  out.mean_roi /= static_cast<double>(roi.size());
  for (double v : bg) out.mean_bg += v;
  out.mean_bg /= static_cast<double>(bg.size());
  out.ratio = out.mean_bg > 0.0 ? out.mean_roi / out.mean_bg : INFINITY;
  out.p = stats::wilcoxon_ranksum(roi, bg).p;
  return out;
}

ag::Tensor upsample_nearest(const ag::Tensor& a, int factor) {
  if (a.shape.size() != 3)
    throw std::invalid_argument("upsample_nearest: expected [D,H,W], got " +
                                ag::shape_str(a.shape));
  if (factor < 1)
    throw std::invalid_argument("upsample_nearest: factor must be >= 1");
  const int64_t d = a.shape[0], h = a.shape[1], w = a.shape[2];
  ag::Tensor out({d * factor, h * factor, w * factor});
  for (int64_t k = 0; k < d * factor; ++k)
    for (int64_t i = 0; i < h * factor; ++i)
      for (int64_t j = 0; j < w * factor; ++j)
        out[(k * h * factor + i) * w * factor + j] =
            a[((k / factor) * h + i / factor) * w + j / factor];
  return out;
}

void export_heatmap(const Map2D& normalized,
                    const std::filesystem::path& path) {
  std::string bytes = "P6\n" + std::to_string(normalized.w) + " " +
                      std::to_string(normalized.h) + "\n255\n";
  bytes.reserve(bytes.size() + normalized.v.size() * 3);
  for (int i = 0; i < normalized.h; ++i)
    for (int j = 0; j < normalized.w; ++j) {
      const double v = std::clamp(normalized.at(i, j), 0.0, 1.0);
      const int r = static_cast<int>(std::lround(v * 255.0));
      bytes.push_back(static_cast<char>(r));
      bytes.push_back(static_cast<char>(0));
      bytes.push_back(static_cast<char>(255 - r));
    }
  data::write_file_atomic(path, bytes);
}

std::string format_g12(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void write_attention_report_csv(const std::filesystem::path& path,
                                const std::vector<CaseReport>& rows) {
  std::string text = "case_id,slice,dice,mean_roi,mean_bg,ratio,p_value\n";
  for (const CaseReport& r : rows) {
    text += r.id + "," + std::to_string(r.slice) + "," + format_g12(r.dice) +
            "," + format_g12(r.stats.mean_roi) + "," +
            format_g12(r.stats.mean_bg) + "," + format_g12(r.stats.ratio) +
            "," + format_g12(r.stats.p) + "\n";
  }
  data::write_file_atomic(path, text);
}

}  // namespace smtl::eval
