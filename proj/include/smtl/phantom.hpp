#pragma once

#include <cstdint>
#include <optional>

#include "smtl/volume.hpp"

namespace smtl::data {

// Synthetic case generator. Each biomarker label is planted as a signal in
// the anatomical zone that is supposed to carry it:
//   ER    shifts the mean core intensity,
//   PR    modulates the core intensity variance (zero-mean parity pattern),
//   HER2  brightens the rim shell,
//   Ki-67 scales the peritumoral intensity gradient magnitude
//         (unit-slope triangle wave along x+y+z).
struct PhantomConfig {
  Dims dims{32, 32, 32};
  double radius_min = 5.0;  // ellipsoid semi-axes, voxels
  double radius_max = 8.0;
  double noise_sigma = 0.1;
  double amp_er = 0.7;
  double amp_pr = 0.85;
  double amp_her2 = 0.85;
  double amp_ki67 = 0.9;
  double rho = 0.8;  // probability that PR copies ER

  // The largest tumor plus the 5-voxel peritumoral margin must fit inside
  // the volume.
  void validate() const;
};

// Deterministic in (config, seed). Geometry, labels and noise come from
// independent substreams, so forcing labels leaves the image geometry and
// noise unchanged.
LabeledCase generate_phantom(const PhantomConfig& config, uint64_t seed);

// Test hook: same construction with the labels pinned.
LabeledCase generate_phantom_with_labels(const PhantomConfig& config,
                                         uint64_t seed,
                                         const BiomarkerLabels& labels);

}  // namespace smtl::data
