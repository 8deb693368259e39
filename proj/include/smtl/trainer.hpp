#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "smtl/model.hpp"
#include "smtl/optimizer.hpp"

namespace smtl::train {

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 4;
  int epochs = 200;
  double l2 = 1e-5;
  double dropout_keep = 0.5;
  bool augment = true;
  uint64_t seed = 1;
  std::optional<model::Task> single_task;  // single-task loss when set

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_auc_er = 0.0, val_auc_pr = 0.0, val_auc_her2 = 0.0;  // NaN if undefined
  double val_ki67_mae_pp = 0.0;
};

struct TrainResult {
  model::ParamSet params;  // best validation loss epoch
  int best_epoch = 0;
  std::vector<EpochStats> history;
};

// Seeded shuffle per epoch, optional augmentation per case, mini-batch
// loss = mean joint loss over the batch, one Adam step per batch. Batch
// members are evaluated in parallel; gradients are accumulated in case
// order, so the result does not depend on the worker count.
TrainResult train(const std::vector<data::LabeledCase>& train_set,
                  const std::vector<data::LabeledCase>& val_set,
                  const TrainConfig& tcfg, const model::ModelConfig& mcfg);

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochStats>& history);

// Shared by the trainer, evaluator and the ablation harness.
struct EvalOutput {
  std::vector<model::Prediction> predictions;  // case order
  std::vector<data::BiomarkerLabels> labels;
  double mean_loss = 0.0;
  // NaN when the subset has a single class for the task.
  double auc_er = 0.0, auc_pr = 0.0, auc_her2 = 0.0;
  double ki67_mae_pp = 0.0, ki67_mae_sd_pp = 0.0;
};
EvalOutput evaluate(const std::vector<data::LabeledCase>& cases,
                    const model::ParamSet& params,
                    const model::ModelConfig& mcfg);

}  // namespace smtl::train
