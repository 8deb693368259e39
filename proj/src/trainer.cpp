#include "smtl/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>

#include "smtl/augment.hpp"
#include "smtl/errors.hpp"
#include "smtl/parallel.hpp"
#include "smtl/rng.hpp"
#include "smtl/stats.hpp"
#include "smtl/volume.hpp"

namespace smtl::train {

using model::ModelConfig;
using model::ParamSet;

void TrainConfig::validate() const {
  // lr == 0 is the degenerate no-op run (checkpoint equals initialization).
  if (!(lr >= 0.0)) throw DataError("train: learning rate must be nonnegative");
  if (batch_size < 1) throw DataError("train: batch size must be >= 1");
  if (epochs < 1) throw DataError("train: epochs must be >= 1");
  if (l2 < 0.0) throw DataError("train: L2 coefficient must be >= 0");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0))
    throw DataError("train: dropout keep must be in (0, 1]");
}

namespace {

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

// AUC if both classes are present, NaN otherwise.
double auc_or_nan(const std::vector<double>& scores,
                  const std::vector<int>& labels) {
  bool has0 = false, has1 = false;
  for (int y : labels) (y ? has1 : has0) = true;
  if (!has0 || !has1) return nan_value();
  return stats::roc_auc(scores, labels).auc;
}

struct CaseGrads {
  double loss = 0.0;
  std::vector<ag::Tensor> grads;  // aligned with parameter entries
};

CaseGrads backprop_case(const data::LabeledCase& c, const ParamSet& params,
                        const ModelConfig& mcfg,
                        std::optional<model::Task> single_task,
                        uint64_t dropout_seed,
                        const model::ZoneMasks* zones) {
  ag::Graph g;
  const model::BoundParams P = model::bind_params(g, params);
  const model::ForwardResult fw =
      model::forward(g, c, P, mcfg, true, dropout_seed, zones);
  const ag::Tensor loss =
      model::joint_loss_node(g, fw.nodes, c.labels, single_task);
  const auto grad_map = g.backward(loss);

  CaseGrads out;
  out.loss = loss[0];
  out.grads.reserve(params.entries.size());
  for (size_t i = 0; i < params.entries.size(); ++i) {
    const int node = P.leaves[i].node;
    auto it = grad_map.find(node);
    if (it != grad_map.end())
      out.grads.push_back(it->second);
    else
      out.grads.push_back(ag::Tensor(params.entries[i].second.shape));
  }
  return out;
}

}  // namespace

EvalOutput evaluate(const std::vector<data::LabeledCase>& cases,
                    const ParamSet& params, const ModelConfig& mcfg) {
  EvalOutput out;
  out.predictions.resize(cases.size());
  out.labels.resize(cases.size());

  parallel_for(static_cast<int64_t>(cases.size()), [&](int64_t i) {
    const auto& c = cases[static_cast<size_t>(i)];
    out.predictions[static_cast<size_t>(i)] =
        model::forward_eval(c, params, mcfg);
    out.labels[static_cast<size_t>(i)] = c.labels;
  });

  std::vector<double> s_er, s_pr, s_her2, ki_pred, ki_true;
  std::vector<int> y_er, y_pr, y_her2;
  double loss_acc = 0.0;
  for (size_t i = 0; i < cases.size(); ++i) {
    const auto& p = out.predictions[i];
    const auto& y = out.labels[i];
    loss_acc += model::joint_loss(p, y);
    s_er.push_back(p.p_er);
    s_pr.push_back(p.p_pr);
    s_her2.push_back(p.p_her2);
    y_er.push_back(y.er);
    y_pr.push_back(y.pr);
    y_her2.push_back(y.her2);
    ki_pred.push_back(p.ki67);
    ki_true.push_back(y.ki67);
  }
  if (!cases.empty()) {
    out.mean_loss = loss_acc / static_cast<double>(cases.size());
    out.auc_er = auc_or_nan(s_er, y_er);
    out.auc_pr = auc_or_nan(s_pr, y_pr);
    out.auc_her2 = auc_or_nan(s_her2, y_her2);
    const stats::MaeResult m = stats::mae(ki_pred, ki_true);
    out.ki67_mae_pp = m.mean_pp;
    out.ki67_mae_sd_pp = m.sd_pp;
  }
  return out;
}

TrainResult train(const std::vector<data::LabeledCase>& train_set,
                  const std::vector<data::LabeledCase>& val_set,
                  const TrainConfig& tcfg, const ModelConfig& mcfg0) {
  tcfg.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  if (val_set.empty()) throw DataError("train: empty validation set");

  ModelConfig mcfg = mcfg0;
  mcfg.dropout_keep = tcfg.dropout_keep;
  mcfg.ablation.single_task = tcfg.single_task;
  mcfg.validate();

  ParamSet params = model::init_model(mcfg);
  AdamState adam;

  // Zone masks depend only on the mask, so they are reusable across epochs
  // unless augmentation rewrites the mask each time.
  std::vector<model::ZoneMasks> zone_cache;
  if (!tcfg.augment) {
    zone_cache.resize(train_set.size());
    parallel_for(static_cast<int64_t>(train_set.size()), [&](int64_t i) {
      zone_cache[static_cast<size_t>(i)] = model::prepare_zones(
          train_set[static_cast<size_t>(i)].mask, mcfg.downsample());
    });
  }

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();

  const size_t n = train_set.size();
  std::vector<size_t> order(n);

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), size_t{0});
    rng::Stream shuffler(rng::mix(tcfg.seed, 0x0D0E, static_cast<uint64_t>(epoch)));
    shuffler.shuffle(order);

    double epoch_loss = 0.0;
    for (size_t start = 0; start < n; start += static_cast<size_t>(tcfg.batch_size)) {
      const size_t stop = std::min(n, start + static_cast<size_t>(tcfg.batch_size));
      const size_t bsz = stop - start;

      std::vector<CaseGrads> results(bsz);
      parallel_for(static_cast<int64_t>(bsz), [&](int64_t bi) {
        const size_t pos = start + static_cast<size_t>(bi);
        const size_t idx = order[pos];
        const data::LabeledCase* c = &train_set[idx];
        data::LabeledCase augmented;
        const model::ZoneMasks* zones = nullptr;
        if (tcfg.augment) {
          augmented = data::augment(
              *c, rng::mix(tcfg.seed, 0xA06, static_cast<uint64_t>(epoch), idx));
          c = &augmented;
        } else {
          zones = &zone_cache[idx];
        }
        const uint64_t dropout_seed =
            rng::mix(tcfg.seed, 0xD20, static_cast<uint64_t>(epoch), pos);
        results[static_cast<size_t>(bi)] =
            backprop_case(*c, params, mcfg, tcfg.single_task, dropout_seed,
                          zones);
      });

      // Fixed-order accumulation keeps the update bit-deterministic.
      std::vector<ag::Tensor> acc;
      acc.reserve(params.entries.size());
      for (const auto& [name, t] : params.entries) acc.emplace_back(t.shape);
      double batch_loss = 0.0;
      for (size_t bi = 0; bi < bsz; ++bi) {
        const CaseGrads& cg = results[bi];
        if (!std::isfinite(cg.loss))
          throw NumericError("non-finite loss at epoch " +
                             std::to_string(epoch) + ", batch " +
                             std::to_string(start / tcfg.batch_size));
        batch_loss += cg.loss;
        for (size_t pi = 0; pi < acc.size(); ++pi)
          for (int64_t j = 0; j < acc[pi].numel(); ++j)
            acc[pi][j] += cg.grads[pi][j] / static_cast<double>(bsz);
      }
      epoch_loss += batch_loss;

      adam_step(params, acc, adam, tcfg.lr, tcfg.l2);
    }

    EpochStats es;
    es.epoch = epoch;
    es.train_loss = epoch_loss / static_cast<double>(n);

    const EvalOutput val = evaluate(val_set, params, mcfg);
    es.val_loss = val.mean_loss;
    es.val_auc_er = val.auc_er;
    es.val_auc_pr = val.auc_pr;
    es.val_auc_her2 = val.auc_her2;
    es.val_ki67_mae_pp = val.ki67_mae_pp;
    result.history.push_back(es);

    if (es.val_loss < best_val) {
      best_val = es.val_loss;
      result.params = params;
      result.best_epoch = epoch;
    }
  }
  return result;
}

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochStats>& history) {
  std::string text =
      "epoch,train_loss,val_loss,val_auc_er,val_auc_pr,val_auc_her2,"
      "val_ki67_mae_pp\n";
  char buf[256];
  auto cell = [&](double v) -> std::string {
    if (std::isnan(v)) return "NA";
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
  };
  for (const EpochStats& e : history) {
    text += std::to_string(e.epoch) + "," + cell(e.train_loss) + "," +
            cell(e.val_loss) + "," + cell(e.val_auc_er) + "," +
            cell(e.val_auc_pr) + "," + cell(e.val_auc_her2) + "," +
            cell(e.val_ki67_mae_pp) + "\n";
  }
  data::write_file_atomic(path, text);
}

}  // namespace smtl::train
