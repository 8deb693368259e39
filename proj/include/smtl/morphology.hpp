#pragma once

#include <array>
#include <vector>

#include "smtl/volume.hpp"

namespace smtl::morph {

// Discrete Euclidean ball: all integer offsets o with |o|^2 <= r^2.
// Contains the origin and is symmetric under negation.
struct StructuringElement {
  int radius = 1;
  std::vector<std::array<int, 3>> offsets;  // (di, dj, dk)

  static StructuringElement ball(int r);
};

// The three anatomical zones derived from a tumor mask. By construction
// core and rim partition the mask and peri is disjoint from it.
struct RoiZones {
  data::TumorMask core;
  data::TumorMask rim;
  data::TumorMask peri;
  // Set when the mask was thinner than the core erosion ball and the
  // fallback core := mask, rim := empty was applied.
  bool core_fallback = false;
};

// Voxels outside the volume count as background for both operations: the
// erosion shrinks at borders, the dilation does not wrap.
data::TumorMask erode(const data::TumorMask& mask,
                      const StructuringElement& se);
data::TumorMask dilate(const data::TumorMask& mask,
                       const StructuringElement& se);

// core = mask eroded by a radius-3 ball, rim = mask minus core,
// peri = (mask dilated by a radius-5 ball) minus mask.
RoiZones make_zones(const data::TumorMask& mask);

// Block max-pooling: an output voxel is 1 iff any voxel of its
// factor^3 source block is 1. Dims must be divisible by factor.
data::TumorMask downsample_mask(const data::TumorMask& mask, int factor);

}  // namespace smtl::morph
