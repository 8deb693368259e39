#pragma once

#include <cstdint>

#include "smtl/volume.hpp"

namespace smtl::data {

// In-plane transform about the volume center plus per-axis flips. Rotation
// and scaling act on the (x, y) plane only; the slice axis just flips.
struct AugmentParams {
  double angle_deg = 0.0;
  double scale = 1.0;
  bool flip_x = false;
  bool flip_y = false;
  bool flip_z = false;
};

// Resamples the volume trilinearly and the mask nearest-neighbor; output
// dims equal input dims (implicit zero padding), labels are unchanged.
LabeledCase apply_transform(const LabeledCase& c, const AugmentParams& p);

// Draws a transform with independent coin flips: rotation uniform in
// [-15, +15] degrees, isotropic in-plane scale uniform in [0.9, 1.1], and
// per-axis flips. If the transform empties the mask it retries with a new
// internal seed up to 5 times, then returns the case unaugmented.
LabeledCase augment(const LabeledCase& c, uint64_t seed);

}  // namespace smtl::data
