#include "smtl/phantom.hpp"

#include <cmath>
#include <string>

#include "smtl/errors.hpp"
#include "smtl/morphology.hpp"
#include "smtl/rng.hpp"

namespace smtl::data {

namespace {

constexpr int kPeriMargin = 5;

// Zero-mean parity pattern, +1/-1 on alternating voxels.
double checker(int i, int j, int k) {
  return ((i + j + k) & 1) ? 1.0 : -1.0;
}

// Period-4 triangle wave sampled at integers: 1, 0, -1, 0, ...
// Unit slope, so the planted gradient magnitude is amplitude-controlled.
double triangle_wave(int u) {
  switch (((u % 4) + 4) % 4) {
    case 0: return 1.0;
    case 1: return 0.0;
    case 2: return -1.0;
    default: return 0.0;
  }
}

LabeledCase generate_impl(const PhantomConfig& cfg, uint64_t seed,
                          const BiomarkerLabels* forced) {
  cfg.validate();

  rng::Stream geom(rng::mix(seed, 0xA11CE));
  rng::Stream label_stream(rng::mix(seed, 0xB0B));
  rng::Stream noise(rng::mix(seed, 0xCAFE));

  LabeledCase c;
  c.id = [&] {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "case_%08llu",
                  static_cast<unsigned long long>(seed));
    return std::string(buf);
  }();

  const Dims dm = cfg.dims;
  const double ra = geom.uniform(cfg.radius_min, cfg.radius_max);  // y
  const double rb = geom.uniform(cfg.radius_min, cfg.radius_max);  // x
  const double rc = geom.uniform(cfg.radius_min, cfg.radius_max);  // z

  auto center_range = [&](double r, int extent) {
    const int lo = static_cast<int>(std::ceil(r)) + kPeriMargin;
    const int hi = extent - 1 - lo;
    return std::pair<int, int>(lo, hi);
  };
  const auto [ylo, yhi] = center_range(ra, dm.h);
  const auto [xlo, xhi] = center_range(rb, dm.w);
  const auto [zlo, zhi] = center_range(rc, dm.d);
  const int cy = static_cast<int>(geom.uniform_int(ylo, yhi));
  const int cx = static_cast<int>(geom.uniform_int(xlo, xhi));
  const int cz = static_cast<int>(geom.uniform_int(zlo, zhi));

  c.mask = TumorMask(dm, 0);
  for (int k = 0; k < dm.d; ++k)
    for (int i = 0; i < dm.h; ++i)
      for (int j = 0; j < dm.w; ++j) {
        const double fy = (i - cy) / ra, fx = (j - cx) / rb, fz = (k - cz) / rc;
        if (fy * fy + fx * fx + fz * fz <= 1.0) c.mask.at(i, j, k) = 1;
      }

  // Labels are drawn from their own stream even when forced, so the other
  // streams see the same state either way.
  BiomarkerLabels drawn;
  drawn.er = label_stream.bernoulli(0.5) ? 1 : 0;
  drawn.pr = label_stream.bernoulli(cfg.rho)
                 ? drawn.er
                 : (label_stream.bernoulli(0.5) ? 1 : 0);
  drawn.her2 = label_stream.bernoulli(0.5) ? 1 : 0;
  drawn.ki67 = label_stream.uniform(0.05, 0.6);
  c.labels = forced ? *forced : drawn;
  validate_labels(c.labels);

  const morph::RoiZones zones = morph::make_zones(c.mask);

  std::vector<double> intensity(static_cast<size_t>(dm.numel()), 0.0);
  for (int k = 0; k < dm.d; ++k)
    for (int i = 0; i < dm.h; ++i)
      for (int j = 0; j < dm.w; ++j) {
        const int64_t idx = dm.index(i, j, k);
        double v = 0.0;
        if (c.mask.at(i, j, k)) v += 1.0;
        if (zones.core.at(i, j, k)) {
          v += cfg.amp_er * c.labels.er;
          v += cfg.amp_pr * c.labels.pr * checker(i, j, k);
        }
        if (zones.rim.at(i, j, k)) v += cfg.amp_her2 * c.labels.her2;
        if (zones.peri.at(i, j, k))
          v += cfg.amp_ki67 * c.labels.ki67 * triangle_wave(i + j + k);
        intensity[static_cast<size_t>(idx)] = v;
      }

  // Noise is drawn for every voxel in storage order, independent of labels.
  if (cfg.noise_sigma > 0.0) {
    for (auto& v : intensity) v += cfg.noise_sigma * noise.normal();
  } else {
    for (size_t i = 0; i < intensity.size(); ++i) noise.normal();
  }

  c.volume = Volume(dm);
  for (size_t i = 0; i < intensity.size(); ++i)
    c.volume.voxels[i] = static_cast<float>(intensity[i]);
  return c;
}

}  // namespace

void PhantomConfig::validate() const {
  if (dims.h < 8 || dims.w < 8 || dims.d < 8)
    throw DataError("phantom dims must be at least 8x8x8, got " + dims.str());
  if (!(radius_min >= 1.0) || !(radius_max >= radius_min))
    throw DataError("phantom radius range invalid: [" +
                    std::to_string(radius_min) + ", " +
                    std::to_string(radius_max) + "]");
  if (!(noise_sigma >= 0.0))
    throw DataError("phantom noise sigma must be >= 0");
  if (!(rho >= 0.0 && rho <= 1.0))
    throw DataError("phantom rho must be in [0,1]");
  const int lo = static_cast<int>(std::ceil(radius_max)) + kPeriMargin;
  const int m = std::min(dims.h, std::min(dims.w, dims.d));
  if (2 * lo > m - 1)
    throw DataError("tumor does not fit: radius " +
                    std::to_string(radius_max) + " plus " +
                    std::to_string(kPeriMargin) +
                    "-voxel peritumoral margin exceeds dims " + dims.str());
}

LabeledCase generate_phantom(const PhantomConfig& config, uint64_t seed) {
  return generate_impl(config, seed, nullptr);
}

LabeledCase generate_phantom_with_labels(const PhantomConfig& config,
                                         uint64_t seed,
                                         const BiomarkerLabels& labels) {
  return generate_impl(config, seed, &labels);
}

}  // namespace smtl::data
