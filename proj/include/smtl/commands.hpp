#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "smtl/volume.hpp"

namespace smtl::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

struct SynthOptions {
  std::filesystem::path out;
  int n = 16;
  data::Dims dims{32, 32, 32};
  double noise = 0.1;
  double rho = 0.8;
  uint64_t seed = 1;
  double radius_min = 5.0;
  double radius_max = 8.0;
  double amp_er = 0.7, amp_pr = 0.85, amp_her2 = 0.85, amp_ki67 = 0.9;
};

struct TrainOptions {
  std::filesystem::path data;
  std::filesystem::path out;
  int epochs = 200;
  double lr = 1e-4;
  int batch = 4;
  uint64_t seed = 1;
  double l2 = 1e-5;
  double dropout_keep = 0.5;
  bool augment = true;
  std::string ablate;  // empty = full model, else a variant name
  double train_frac = 0.7;
  double val_frac = 0.1;
  uint64_t split_seed = 42;
  std::vector<int> stage_channels{8, 16};
  std::vector<int> attention_radii{1, 2, 3};
  int head_hidden = 16;
  uint64_t model_seed = 1;
};

struct EvalOptions {
  std::filesystem::path data;
  std::filesystem::path ckpt;
  std::filesystem::path out;
  std::string subset = "test";  // test, val, train or all
  double train_frac = 0.7;
  double val_frac = 0.1;
  uint64_t split_seed = 42;
  double k_percent = 30.0;  // Dice@k reported per case
};

struct VisualizeOptions {
  std::filesystem::path data;
  std::string case_id;
  std::filesystem::path ckpt;
  std::filesystem::path out;
  double k_percent = 30.0;
};

struct GradCheckOptions {
  data::Dims dims{16, 16, 16};
  uint64_t seed = 1;
  double h = 1e-5;
  double tolerance = 1e-4;
};

int cmd_synth(const SynthOptions& opt);
int cmd_train(const TrainOptions& opt);
int cmd_eval(const EvalOptions& opt);
int cmd_visualize(const VisualizeOptions& opt);
int cmd_gradcheck(const GradCheckOptions& opt);

}  // namespace smtl::cli
