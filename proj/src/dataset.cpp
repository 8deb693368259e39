#include "smtl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "smtl/errors.hpp"
#include "smtl/rng.hpp"

namespace smtl::data {

IdSplit split_ids(std::vector<std::string> ids, uint64_t seed,
                  double train_frac, double val_frac) {
  const size_t n = ids.size();
  if (n < 10) throw DataError("split_dataset: need at least 10 cases, got " +
                              std::to_string(n));
  std::sort(ids.begin(), ids.end());
  rng::Stream s(rng::mix(seed, 0x5B117));
  s.shuffle(ids);

  const size_t n_train =
      static_cast<size_t>(std::llround(train_frac * static_cast<double>(n)));
  const size_t n_val =
      static_cast<size_t>(std::llround(val_frac * static_cast<double>(n)));
  if (n_train + n_val > n)
    throw DataError("split_dataset: fractions exceed the dataset size");

  IdSplit out;
  out.train.assign(ids.begin(), ids.begin() + n_train);
  out.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  out.test.assign(ids.begin() + n_train + n_val, ids.end());
  return out;
}

namespace {

std::unordered_map<std::string, const LabeledCase*> by_id(
    const std::vector<LabeledCase>& cases) {
  std::unordered_map<std::string, const LabeledCase*> m;
  for (const auto& c : cases) {
    if (!m.emplace(c.id, &c).second)
      throw DataError("duplicate case id: " + c.id);
  }
  return m;
}

std::vector<LabeledCase> pick(
    const std::unordered_map<std::string, const LabeledCase*>& m,
    const std::vector<std::string>& ids) {
  std::vector<LabeledCase> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(*m.at(id));
  return out;
}

}  // namespace

Split split_dataset(const std::vector<LabeledCase>& cases, uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(cases.size());
  for (const auto& c : cases) ids.push_back(c.id);
  const IdSplit s = split_ids(std::move(ids), seed);
  const auto m = by_id(cases);
  return Split{pick(m, s.train), pick(m, s.val), pick(m, s.test)};
}

std::vector<Fold> kfold(const std::vector<LabeledCase>& cases, int k,
                        uint64_t seed) {
  const int n = static_cast<int>(cases.size());
  if (k < 2) throw DataError("kfold: k must be >= 2");
  if (k > n)
    throw DataError("kfold: k = " + std::to_string(k) + " exceeds n = " +
                    std::to_string(n));

  std::vector<std::string> ids;
  ids.reserve(cases.size());
  for (const auto& c : cases) ids.push_back(c.id);
  std::sort(ids.begin(), ids.end());
  rng::Stream s(rng::mix(seed, 0xF01D));
  s.shuffle(ids);

  const auto m = by_id(cases);
  std::vector<Fold> folds(static_cast<size_t>(k));
  // The first n % k folds take one extra case.
  int pos = 0;
  for (int f = 0; f < k; ++f) {
    const int size = n / k + (f < n % k ? 1 : 0);
    std::vector<std::string> test_ids(ids.begin() + pos,
                                      ids.begin() + pos + size);
    pos += size;
    std::vector<std::string> train_ids;
    for (const auto& id : ids)
      if (std::find(test_ids.begin(), test_ids.end(), id) == test_ids.end())
        train_ids.push_back(id);
    folds[static_cast<size_t>(f)] =
        Fold{pick(m, train_ids), pick(m, test_ids)};
  }
  return folds;
}

}  // namespace smtl::data
