#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "smtl/tensor.hpp"
#include "smtl/volume.hpp"

namespace smtl::model {

enum class Task : int { Er = 0, Pr = 1, Her2 = 2, Ki67 = 3 };
constexpr std::array<Task, 4> kAllTasks{Task::Er, Task::Pr, Task::Her2,
                                        Task::Ki67};
const char* task_name(Task t);
std::optional<Task> parse_task(const std::string& name);

// Structural switches used by the ablation harness. The default is the
// full model.
struct AblationSpec {
  bool attention = true;         // false: the attention map is identically 1
  bool multiscale = true;        // false: keep only the largest kernel radius
  bool use_rim = true;           // false: rim feature zeroed, gate renormalized
  bool use_peri = true;          // false: peritumoral feature zeroed, ditto
  bool shared_backbone = true;   // false: per-task feature extractor copies
  std::optional<Task> single_task;  // set: single-task model (loss uses one term)

  bool operator==(const AblationSpec&) const = default;
};

struct ModelConfig {
  data::Dims dims{32, 32, 32};
  std::vector<int> stage_channels{8, 16};  // one stride-2 stage per entry
  std::vector<int> attention_radii{1, 2, 3};
  int head_hidden = 16;
  double dropout_keep = 0.5;
  uint64_t seed = 1;
  AblationSpec ablation;

  int downsample() const { return 1 << stage_channels.size(); }
  int feature_channels() const { return stage_channels.back(); }
  std::vector<int> active_radii() const;
  void validate() const;
};

// Named parameters in a fixed, documented order; the checkpoint writes the
// raw buffers in exactly this order.
struct ParamSet {
  std::vector<std::pair<std::string, ag::Tensor>> entries;

  int64_t total_size() const;
  ag::Tensor* find(const std::string& name);
  const ag::Tensor* find(const std::string& name) const;
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& flat);
};

// Fan-in-scaled uniform weights, zero biases; deterministic in config.seed.
ParamSet init_model(const ModelConfig& cfg);

// Parameters registered as leaves of one graph.
struct BoundParams {
  const ParamSet* set = nullptr;
  std::vector<ag::Tensor> leaves;  // aligned with set->entries
  std::unordered_map<std::string, size_t> index;

  const ag::Tensor& operator[](const std::string& name) const;
};
BoundParams bind_params(ag::Graph& g, const ParamSet& params);

// Zone masks downsampled to feature resolution, as 0/1 tensors.
struct ZoneMasks {
  ag::Tensor core, rim, peri;  // [D', H', W']
  double core_count = 0, rim_count = 0, peri_count = 0;
  bool core_fallback = false;
};
ZoneMasks prepare_zones(const data::TumorMask& mask, int factor);

struct Prediction {
  double p_er = 0, p_pr = 0, p_her2 = 0;
  double ki67 = 0;      // clamped to [0, 1] for reporting
  double ki67_raw = 0;  // head output; the loss consumes this value
  ag::Tensor attention;  // [D', H', W'], weights in [0, 1]
  std::array<std::array<double, 3>, 4> gates{};  // per task: core, rim, peri
  bool zone_fallback = false;
};

// Graph handles needed to assemble the training loss.
struct ForwardNodes {
  ag::Tensor p_er, p_pr, p_her2, ki67_raw;
};

struct ForwardResult {
  Prediction pred;
  ForwardNodes nodes;
};

// Individual pipeline stages, exposed for the oracle tests. `owner` names
// the per-task parameter copy ("" when the extractor is shared).
ag::Tensor backbone_forward(ag::Graph& g, const BoundParams& P,
                            const ModelConfig& cfg, const ag::Tensor& volume,
                            const std::string& owner);
struct AttentionOut {
  ag::Tensor map;        // [1, D', H', W'] in [0, 1]
  ag::Tensor modulated;  // feat * map, broadcast over channels
};
AttentionOut attention_forward(ag::Graph& g, const BoundParams& P,
                               const ModelConfig& cfg, const ag::Tensor& feat,
                               const std::string& owner);
// Mean of the feature map restricted to the zone; the zone must be
// nonempty at feature resolution.
ag::Tensor masked_pool(ag::Graph& g, const ag::Tensor& f_spatial,
                       const ag::Tensor& zone, double count);
ag::Tensor gate_logits(ag::Graph& g, const BoundParams& P, Task t,
                       const ag::Tensor& zone_concat);
// Softmax over the three zone logits.
ag::Tensor gate_weights(ag::Graph& g, const BoundParams& P, Task t,
                        const ag::Tensor& zone_concat);
// w[0]*core + w[1]*rim + w[2]*peri.
ag::Tensor roi_weighted(ag::Graph& g,
                        const std::array<ag::Tensor, 3>& zone_feats,
                        const ag::Tensor& weights);
// Two-layer task head W2 relu(W1 f), dropout on the hidden layer at train
// time; returns the raw output (the sigmoid/clamp belongs to the task).
ag::Tensor head_raw(ag::Graph& g, const BoundParams& P,
                    const ModelConfig& cfg, Task t, const ag::Tensor& fused,
                    bool train_mode, uint64_t dropout_seed);

ag::Tensor volume_to_tensor(const data::Volume& v);  // [1, D, H, W]
ag::Tensor mask_to_tensor(const data::TumorMask& m);  // [D, H, W]

// Full pipeline: features -> attention -> zone pooling -> per-task gating
// and heads. Deterministic in eval mode; train mode differs only in
// dropout. A precomputed ZoneMasks may be passed to skip the morphology.
ForwardResult forward(ag::Graph& g, const data::LabeledCase& c,
                      const BoundParams& P, const ModelConfig& cfg,
                      bool train_mode, uint64_t dropout_seed,
                      const ZoneMasks* zones = nullptr);

// Convenience wrapper building a throwaway graph in eval mode.
Prediction forward_eval(const data::LabeledCase& c, const ParamSet& params,
                        const ModelConfig& cfg,
                        const ZoneMasks* zones = nullptr);

// Sum of per-task cross-entropies plus 0.1 * squared Ki-67 error, as a
// graph node (for training) and as a plain value (for reporting).
ag::Tensor joint_loss_node(ag::Graph& g, const ForwardNodes& nodes,
                           const data::BiomarkerLabels& labels,
                           std::optional<Task> single_task = std::nullopt);
double joint_loss(const Prediction& pred, const data::BiomarkerLabels& labels);

enum class Subtype { LuminalA, LuminalB, Her2Enriched, TripleNegative };
const char* subtype_name(Subtype s);
// HR+ = ER or PR; LuminalA if HR+, HER2-, Ki-67 < 0.20; LuminalB if HR+
// and (HER2+ or Ki-67 >= 0.20); HER2-enriched if HR- and HER2+; else
// triple-negative.
Subtype subtype_from_biomarkers(const data::BiomarkerLabels& labels);

// Checkpoint: one JSON header line (config, seed, epoch, parameter table),
// then the raw little-endian float64 buffers in entry order.
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params,
                     const ModelConfig& cfg, int epoch);
struct Checkpoint {
  ParamSet params;
  ModelConfig config;
  int epoch = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace smtl::model
