#include "smtl/volume.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "smtl/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "raw volume format is little-endian");

namespace smtl::data {

namespace fs = std::filesystem;
using nlohmann::json;

void validate_labels(const BiomarkerLabels& labels) {
  auto binary = [](int v) { return v == 0 || v == 1; };
  if (!binary(labels.er) || !binary(labels.pr) || !binary(labels.her2))
    throw DataError("labels out of domain: er/pr/her2 must be 0 or 1");
  if (!(labels.ki67 >= 0.0 && labels.ki67 <= 1.0))
    throw DataError("labels out of domain: ki67 must be in [0,1], got " +
                    std::to_string(labels.ki67));
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("rename failed for " + path.string() + ": " +
                          ec.message());
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

void save_case(const LabeledCase& c, const fs::path& dir) {
  if (c.volume.dims != c.mask.dims)
    throw DataError("case " + c.id + ": volume dims " + c.volume.dims.str() +
                    " differ from mask dims " + c.mask.dims.str());
  validate_labels(c.labels);

  json meta;
  meta["format_version"] = 1;
  meta["id"] = c.id;
  meta["dims"] = {c.volume.dims.h, c.volume.dims.w, c.volume.dims.d};
  meta["labels"] = {{"er", c.labels.er},
                    {"pr", c.labels.pr},
                    {"her2", c.labels.her2},
                    {"ki67", c.labels.ki67}};
  write_file_atomic(dir / (c.id + ".meta.json"), meta.dump(2) + "\n");

  std::string vol(c.volume.voxels.size() * sizeof(float), '\0');
  std::memcpy(vol.data(), c.volume.voxels.data(), vol.size());
  write_file_atomic(dir / (c.id + ".vol.raw"), vol);

  std::string mask(c.mask.bits.begin(), c.mask.bits.end());
  write_file_atomic(dir / (c.id + ".mask.raw"), mask);
}

LabeledCase load_case(const fs::path& dir, const std::string& id) {
  const std::string meta_text = read_file(dir / (id + ".meta.json"));
  json meta;
  try {
    meta = json::parse(meta_text);
  } catch (const json::exception& e) {
    throw DataError("bad meta file for case " + id + ": " + e.what());
  }

  LabeledCase c;
  c.id = id;
  try {
    auto dims = meta.at("dims");
    c.volume.dims = {dims.at(0).get<int>(), dims.at(1).get<int>(),
                     dims.at(2).get<int>()};
    const auto& lab = meta.at("labels");
    c.labels.er = lab.at("er").get<int>();
    c.labels.pr = lab.at("pr").get<int>();
    c.labels.her2 = lab.at("her2").get<int>();
    c.labels.ki67 = lab.at("ki67").get<double>();
  } catch (const json::exception& e) {
    throw DataError("bad meta file for case " + id + ": " + e.what());
  }
  if (c.volume.dims.h < 1 || c.volume.dims.w < 1 || c.volume.dims.d < 1)
    throw DataError("case " + id + ": invalid dims " + c.volume.dims.str());
  validate_labels(c.labels);

  const int64_t n = c.volume.dims.numel();

  const std::string vol = read_file(dir / (id + ".vol.raw"));
  if (vol.size() != static_cast<size_t>(n) * sizeof(float))
    throw DataError("case " + id + ": volume payload is " +
                    std::to_string(vol.size()) + " bytes but dims " +
                    c.volume.dims.str() + " require " +
                    std::to_string(n * sizeof(float)));
  c.volume.voxels.resize(static_cast<size_t>(n));
  std::memcpy(c.volume.voxels.data(), vol.data(), vol.size());

  const std::string mask = read_file(dir / (id + ".mask.raw"));
  if (mask.size() != static_cast<size_t>(n))
    throw DataError("case " + id + ": mask payload is " +
                    std::to_string(mask.size()) + " bytes but dims " +
                    c.volume.dims.str() + " require " + std::to_string(n));
  c.mask.dims = c.volume.dims;
  c.mask.bits.resize(static_cast<size_t>(n));
  for (size_t i = 0; i < mask.size(); ++i) {
    const uint8_t b = static_cast<uint8_t>(mask[i]);
    if (b > 1)
      throw DataError("case " + id + ": invalid mask byte " +
                      std::to_string(int(b)) + " at voxel " +
                      std::to_string(i));
    c.mask.bits[i] = b;
  }
  if (c.mask.foreground_count() == 0)
    throw DataError("case " + id + ": mask has no foreground voxels");

  return c;
}

void write_index(const fs::path& dir, const std::vector<std::string>& ids) {
  json idx;
  idx["format_version"] = 1;
  idx["ids"] = ids;
  write_file_atomic(dir / "index.json", idx.dump(2) + "\n");
}

std::vector<std::string> read_index(const fs::path& dir) {
  const std::string text = read_file(dir / "index.json");
  json idx;
  try {
    idx = json::parse(text);
    return idx.at("ids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError("bad index.json in " + dir.string() + ": " + e.what());
  }
}

std::vector<LabeledCase> load_dataset(const fs::path& dir) {
  std::vector<LabeledCase> cases;
  for (const std::string& id : read_index(dir))
    cases.push_back(load_case(dir, id));
  return cases;
}

}  // namespace smtl::data
