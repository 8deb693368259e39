#include "smtl/augment.hpp"

#include <cmath>
#include <numbers>

#include "smtl/rng.hpp"

namespace smtl::data {

namespace {

constexpr double kMaxRotationDeg = 15.0;

struct InverseMap {
  double cx, cy, cz;
  double cos_t, sin_t;
  double inv_scale;
  bool flip_x, flip_y, flip_z;
  int w, h, d;

  // Maps an output voxel to continuous input coordinates.
  void operator()(int i, int j, int k, double& yi, double& xj,
                  double& zk) const {
    double x = flip_x ? (w - 1.0) - j : j;
    double y = flip_y ? (h - 1.0) - i : i;
    double z = flip_z ? (d - 1.0) - k : k;
    // Undo rotation then scale about the center, in-plane.
    const double dx = x - cx, dy = y - cy;
    xj = cx + (cos_t * dx + sin_t * dy) * inv_scale;
    yi = cy + (-sin_t * dx + cos_t * dy) * inv_scale;
    zk = z;
  }
};

InverseMap make_inverse(const Dims& dm, const AugmentParams& p) {
  const double theta = p.angle_deg * std::numbers::pi / 180.0;
  InverseMap m;
  m.cx = (dm.w - 1.0) / 2.0;
  m.cy = (dm.h - 1.0) / 2.0;
  m.cz = (dm.d - 1.0) / 2.0;
  m.cos_t = std::cos(theta);
  m.sin_t = std::sin(theta);
  m.inv_scale = 1.0 / p.scale;
  m.flip_x = p.flip_x;
  m.flip_y = p.flip_y;
  m.flip_z = p.flip_z;
  m.w = dm.w;
  m.h = dm.h;
  m.d = dm.d;
  return m;
}

double sample_trilinear(const Volume& v, double yi, double xj, double zk) {
  const Dims& dm = v.dims;
  const int i0 = static_cast<int>(std::floor(yi));
  const int j0 = static_cast<int>(std::floor(xj));
  const int k0 = static_cast<int>(std::floor(zk));
  const double fi = yi - i0, fj = xj - j0, fk = zk - k0;
  double acc = 0.0;
  for (int di = 0; di <= 1; ++di)
    for (int dj = 0; dj <= 1; ++dj)
      for (int dk = 0; dk <= 1; ++dk) {
        const int i = i0 + di, j = j0 + dj, k = k0 + dk;
        if (!dm.inside(i, j, k)) continue;  // zero padding
        const double wgt = (di ? fi : 1.0 - fi) * (dj ? fj : 1.0 - fj) *
                           (dk ? fk : 1.0 - fk);
        acc += wgt * v.at(i, j, k);
      }
  return acc;
}

uint8_t sample_nearest(const TumorMask& m, double yi, double xj, double zk) {
  const int i = static_cast<int>(std::lround(yi));
  const int j = static_cast<int>(std::lround(xj));
  const int k = static_cast<int>(std::lround(zk));
  if (!m.dims.inside(i, j, k)) return 0;
  return m.at(i, j, k);
}

AugmentParams draw_params(rng::Stream& s) {
  AugmentParams p;
  if (s.bernoulli(0.5)) p.angle_deg = s.uniform(-kMaxRotationDeg, kMaxRotationDeg);
  if (s.bernoulli(0.5)) p.scale = s.uniform(0.9, 1.1);
  p.flip_x = s.bernoulli(0.5);
  p.flip_y = s.bernoulli(0.5);
  p.flip_z = s.bernoulli(0.5);
  return p;
}

}  // namespace

LabeledCase apply_transform(const LabeledCase& c, const AugmentParams& p) {
  const Dims dm = c.volume.dims;
  const InverseMap inv = make_inverse(dm, p);

  LabeledCase out;
  out.id = c.id;
  out.labels = c.labels;
  out.volume = Volume(dm);
  out.mask = TumorMask(dm, 0);
  for (int k = 0; k < dm.d; ++k)
    for (int i = 0; i < dm.h; ++i)
      for (int j = 0; j < dm.w; ++j) {
        double yi, xj, zk;
        inv(i, j, k, yi, xj, zk);
        out.volume.at(i, j, k) =
            static_cast<float>(sample_trilinear(c.volume, yi, xj, zk));
        out.mask.at(i, j, k) = sample_nearest(c.mask, yi, xj, zk) ? 1 : 0;
      }
  return out;
}

LabeledCase augment(const LabeledCase& c, uint64_t seed) {
  for (uint64_t attempt = 0; attempt < 5; ++attempt) {
    rng::Stream s(rng::mix(seed, attempt));
    LabeledCase out = apply_transform(c, draw_params(s));
    if (out.mask.foreground_count() > 0) return out;
  }
  return c;
}

}  // namespace smtl::data
