#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smtl/volume.hpp"

namespace smtl::data {

struct Split {
  std::vector<LabeledCase> train, val, test;
};

// Deterministic 70/10/20 split: round(0.7 n) train, round(0.1 n) val,
// remainder test. Cases are ordered by id before the seeded shuffle, so
// the partition depends only on the id set, not on input order.
Split split_dataset(const std::vector<LabeledCase>& cases, uint64_t seed);

// Id-level variant used by both split_dataset and the commands.
struct IdSplit {
  std::vector<std::string> train, val, test;
};
IdSplit split_ids(std::vector<std::string> ids, uint64_t seed,
                  double train_frac = 0.7, double val_frac = 0.1);

struct Fold {
  std::vector<LabeledCase> train, test;
};

// k folds whose test parts partition the input; sizes differ by at most 1.
std::vector<Fold> kfold(const std::vector<LabeledCase>& cases, int k,
                        uint64_t seed);

}  // namespace smtl::data
