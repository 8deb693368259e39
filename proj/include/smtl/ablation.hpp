#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "smtl/trainer.hpp"

namespace smtl::train {

enum class Variant {
  Full,
  NoMultitask,         // four independently trained single-task models
  NoAttention,         // attention map identically 1
  NoPeritumoral,       // peritumoral weight forced to 0, gate renormalized
  NoSharedExtractor,   // per-task feature extractor copies
  SingleScaleAttention,
  TumorCoreOnly,       // rim and peritumoral both forced off
};

constexpr std::array<Variant, 7> kAllVariants{
    Variant::Full,          Variant::NoMultitask,
    Variant::NoAttention,   Variant::NoPeritumoral,
    Variant::NoSharedExtractor, Variant::SingleScaleAttention,
    Variant::TumorCoreOnly};

const char* variant_name(Variant v);
std::optional<Variant> parse_variant(const std::string& name);
std::string variant_names_joined();

// Applies the variant's structural switches to a base model config.
model::ModelConfig apply_variant(const model::ModelConfig& base, Variant v);

struct AblationRow {
  std::string variant;
  double auc_er = 0.0, auc_pr = 0.0, auc_her2 = 0.0, auc_avg = 0.0;
  double ki67_mae_pp = 0.0;
  double train_seconds = 0.0;  // logged, not part of the result table
};

// Splits the dataset, trains the full model plus the six variants, and
// evaluates each on the held-out test fold. The multi-task-off row trains
// four single-task models and merges their per-task predictions.
std::vector<AblationRow> run_ablation(const std::vector<data::LabeledCase>& cases,
                                      const TrainConfig& tcfg,
                                      const model::ModelConfig& mcfg,
                                      uint64_t split_seed);

void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<AblationRow>& rows);

}  // namespace smtl::train
