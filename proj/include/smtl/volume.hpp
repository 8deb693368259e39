#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace smtl::data {

// Voxel extents. Storage order is slice-major: slice index k is slowest,
// then row i (y), then column j (x), so x varies fastest.
struct Dims {
  int h = 0, w = 0, d = 0;

  bool operator==(const Dims&) const = default;
  int64_t numel() const {
    return static_cast<int64_t>(h) * w * d;
  }
  int64_t index(int i, int j, int k) const {
    return (static_cast<int64_t>(k) * h + i) * w + j;
  }
  bool inside(int i, int j, int k) const {
    return i >= 0 && i < h && j >= 0 && j < w && k >= 0 && k < d;
  }
  std::string str() const {
    return std::to_string(h) + "x" + std::to_string(w) + "x" +
           std::to_string(d);
  }
};

// Single-channel 3D scalar field. Voxels are stored as 32-bit floats, the
// on-disk precision, so a save/load round trip is bit-exact.
struct Volume {
  Dims dims;
  std::vector<float> voxels;

  Volume() = default;
  explicit Volume(Dims dm, float fill = 0.0f)
      : dims(dm), voxels(static_cast<size_t>(dm.numel()), fill) {}
  float& at(int i, int j, int k) {
    return voxels[static_cast<size_t>(dims.index(i, j, k))];
  }
  float at(int i, int j, int k) const {
    return voxels[static_cast<size_t>(dims.index(i, j, k))];
  }
};

struct TumorMask {
  Dims dims;
  std::vector<uint8_t> bits;

  TumorMask() = default;
  explicit TumorMask(Dims dm, uint8_t fill = 0)
      : dims(dm), bits(static_cast<size_t>(dm.numel()), fill) {}
  uint8_t& at(int i, int j, int k) {
    return bits[static_cast<size_t>(dims.index(i, j, k))];
  }
  uint8_t at(int i, int j, int k) const {
    return bits[static_cast<size_t>(dims.index(i, j, k))];
  }
  int64_t foreground_count() const {
    int64_t n = 0;
    for (uint8_t b : bits) n += b;
    return n;
  }
};

struct BiomarkerLabels {
  int er = 0;
  int pr = 0;
  int her2 = 0;
  double ki67 = 0.0;  // fraction in [0, 1]
};

void validate_labels(const BiomarkerLabels& labels);

struct LabeledCase {
  std::string id;
  Volume volume;
  TumorMask mask;
  BiomarkerLabels labels;
};

// On-disk layout per case, all in one directory:
//   <id>.meta.json  dims, labels, format version
//   <id>.vol.raw    little-endian float32, slice-major, x fastest
//   <id>.mask.raw   one byte per voxel, values 0 or 1
void save_case(const LabeledCase& c, const std::filesystem::path& dir);
LabeledCase load_case(const std::filesystem::path& dir, const std::string& id);

// index.json lists the case ids of a dataset directory.
void write_index(const std::filesystem::path& dir,
                 const std::vector<std::string>& ids);
std::vector<std::string> read_index(const std::filesystem::path& dir);
std::vector<LabeledCase> load_dataset(const std::filesystem::path& dir);

// Writes bytes to a temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& bytes);

}  // namespace smtl::data
