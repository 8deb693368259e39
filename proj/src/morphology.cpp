#include "smtl/morphology.hpp"

#include <algorithm>
#include <stdexcept>

#include "smtl/errors.hpp"

namespace smtl::morph {

using data::Dims;
using data::TumorMask;

StructuringElement StructuringElement::ball(int r) {
  if (r < 1)
    throw std::invalid_argument("structuring element radius must be >= 1");
  StructuringElement se;
  se.radius = r;
  for (int di = -r; di <= r; ++di)
    for (int dj = -r; dj <= r; ++dj)
      for (int dk = -r; dk <= r; ++dk)
        if (di * di + dj * dj + dk * dk <= r * r)
          se.offsets.push_back({di, dj, dk});
  return se;
}

namespace {

struct Box {
  int ilo, ihi, jlo, jhi, klo, khi;  // inclusive
  bool empty = true;
};

Box bounding_box(const TumorMask& m) {
  Box b{m.dims.h, -1, m.dims.w, -1, m.dims.d, -1, true};
  for (int k = 0; k < m.dims.d; ++k)
    for (int i = 0; i < m.dims.h; ++i)
      for (int j = 0; j < m.dims.w; ++j)
        if (m.at(i, j, k)) {
          b.empty = false;
          b.ilo = std::min(b.ilo, i);
          b.ihi = std::max(b.ihi, i);
          b.jlo = std::min(b.jlo, j);
          b.jhi = std::max(b.jhi, j);
          b.klo = std::min(b.klo, k);
          b.khi = std::max(b.khi, k);
        }
  return b;
}

}  // namespace

TumorMask erode(const TumorMask& mask, const StructuringElement& se) {
  TumorMask out(mask.dims, 0);
  const Box b = bounding_box(mask);
  if (b.empty) return out;
  // Output foreground is confined to the input foreground (the ball
  // contains the origin), so only the bounding box needs scanning.
  for (int k = b.klo; k <= b.khi; ++k)
    for (int i = b.ilo; i <= b.ihi; ++i)
      for (int j = b.jlo; j <= b.jhi; ++j) {
        if (!mask.at(i, j, k)) continue;
        bool keep = true;
        for (const auto& o : se.offsets) {
          const int ii = i + o[0], jj = j + o[1], kk = k + o[2];
          if (!mask.dims.inside(ii, jj, kk) || !mask.at(ii, jj, kk)) {
            keep = false;
            break;
          }
        }
        out.at(i, j, k) = keep ? 1 : 0;
      }
  return out;
}

TumorMask dilate(const TumorMask& mask, const StructuringElement& se) {
  TumorMask out(mask.dims, 0);
  const Box b = bounding_box(mask);
  if (b.empty) return out;
  const int r = se.radius;
  const int ilo = std::max(0, b.ilo - r), ihi = std::min(mask.dims.h - 1, b.ihi + r);
  const int jlo = std::max(0, b.jlo - r), jhi = std::min(mask.dims.w - 1, b.jhi + r);
  const int klo = std::max(0, b.klo - r), khi = std::min(mask.dims.d - 1, b.khi + r);
  for (int k = klo; k <= khi; ++k)
    for (int i = ilo; i <= ihi; ++i)
      for (int j = jlo; j <= jhi; ++j) {
        bool hit = false;
        for (const auto& o : se.offsets) {
          const int ii = i + o[0], jj = j + o[1], kk = k + o[2];
          if (mask.dims.inside(ii, jj, kk) && mask.at(ii, jj, kk)) {
            hit = true;
            break;
          }
        }
        out.at(i, j, k) = hit ? 1 : 0;
      }
  return out;
}

RoiZones make_zones(const TumorMask& mask) {
  if (mask.foreground_count() == 0)
    throw DataError("make_zones: empty tumor mask");

  static const StructuringElement b3 = StructuringElement::ball(3);
  static const StructuringElement b5 = StructuringElement::ball(5);

  RoiZones z;
  z.core = erode(mask, b3);
  if (z.core.foreground_count() == 0) {
    // Tumor thinner than the erosion ball: keep the whole mask as core so
    // small tumors still produce predictions, and flag the substitution.
    z.core = mask;
    z.rim = TumorMask(mask.dims, 0);
    z.core_fallback = true;
  } else {
    z.rim = TumorMask(mask.dims, 0);
    for (size_t i = 0; i < mask.bits.size(); ++i)
      z.rim.bits[i] = static_cast<uint8_t>(mask.bits[i] && !z.core.bits[i]);
  }

  TumorMask grown = dilate(mask, b5);
  z.peri = TumorMask(mask.dims, 0);
  for (size_t i = 0; i < mask.bits.size(); ++i)
    z.peri.bits[i] = static_cast<uint8_t>(grown.bits[i] && !mask.bits[i]);
  return z;
}

TumorMask downsample_mask(const TumorMask& mask, int factor) {
  if (factor < 1)
    throw std::invalid_argument("downsample_mask: factor must be >= 1");
  const Dims dm = mask.dims;
  if (dm.h % factor || dm.w % factor || dm.d % factor)
    throw std::invalid_argument("downsample_mask: dims " + dm.str() +
                                " not divisible by factor " +
                                std::to_string(factor));
  TumorMask out(Dims{dm.h / factor, dm.w / factor, dm.d / factor}, 0);
  for (int k = 0; k < dm.d; ++k)
    for (int i = 0; i < dm.h; ++i)
      for (int j = 0; j < dm.w; ++j)
        if (mask.at(i, j, k))
          out.at(i / factor, j / factor, k / factor) = 1;
  return out;
}

}  // namespace smtl::morph
