#include "smtl/ablation.hpp"

#include <chrono>
#include <cmath>

#include "smtl/dataset.hpp"
#include "smtl/errors.hpp"
#include "smtl/eval.hpp"
#include "smtl/volume.hpp"

namespace smtl::train {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoMultitask: return "no_multitask";
    case Variant::NoAttention: return "no_attention";
    case Variant::NoPeritumoral: return "no_peritumoral";
    case Variant::NoSharedExtractor: return "no_shared_extractor";
    case Variant::SingleScaleAttention: return "single_scale_attention";
    case Variant::TumorCoreOnly: return "core_only";
  }
  return "?";
}

std::optional<Variant> parse_variant(const std::string& name) {
  for (Variant v : kAllVariants)
    if (name == variant_name(v)) return v;
  return std::nullopt;
}

std::string variant_names_joined() {
  std::string out;
  for (Variant v : kAllVariants) {
    if (!out.empty()) out += ", ";
    out += variant_name(v);
  }
  return out;
}

model::ModelConfig apply_variant(const model::ModelConfig& base, Variant v) {
  model::ModelConfig cfg = base;
  switch (v) {
    case Variant::Full:
    case Variant::NoMultitask:
      break;
    case Variant::NoAttention:
      cfg.ablation.attention = false;
      break;
    case Variant::NoPeritumoral:
      cfg.ablation.use_peri = false;
      break;
    case Variant::NoSharedExtractor:
      cfg.ablation.shared_backbone = false;
      break;
    case Variant::SingleScaleAttention:
      cfg.ablation.multiscale = false;
      break;
    case Variant::TumorCoreOnly:
      cfg.ablation.use_rim = false;
      cfg.ablation.use_peri = false;
      break;
  }
  return cfg;
}

namespace {

double avg3(double a, double b, double c) {
  double sum = 0.0;
  int n = 0;
  for (double v : {a, b, c})
    if (!std::isnan(v)) {
      sum += v;
      ++n;
    }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

AblationRow row_from_eval(const std::string& name, const EvalOutput& ev,
                          double seconds) {
  AblationRow row;
  row.variant = name;
  row.auc_er = ev.auc_er;
  row.auc_pr = ev.auc_pr;
  row.auc_her2 = ev.auc_her2;
  row.auc_avg = avg3(ev.auc_er, ev.auc_pr, ev.auc_her2);
  row.ki67_mae_pp = ev.ki67_mae_pp;
  row.train_seconds = seconds;
  return row;
}

}  // namespace

std::vector<AblationRow> run_ablation(const std::vector<data::LabeledCase>& cases,
                                      const TrainConfig& tcfg,
                                      const model::ModelConfig& mcfg,
                                      uint64_t split_seed) {
  const data::Split split = data::split_dataset(cases, split_seed);
  using clock = std::chrono::steady_clock;

  std::vector<AblationRow> rows;
  for (Variant v : kAllVariants) {
    const model::ModelConfig vcfg = apply_variant(mcfg, v);
    const auto t0 = clock::now();

    if (v == Variant::NoMultitask) {
      // Four independent single-task trainings; each model answers for its
      // own task at evaluation time.
      EvalOutput merged;
      for (model::Task task : model::kAllTasks) {
        TrainConfig st = tcfg;
        st.single_task = task;
        const TrainResult tr = train(split.train, split.val, st, vcfg);
        model::ModelConfig eval_cfg = vcfg;
        eval_cfg.ablation.single_task = task;
        const EvalOutput ev = evaluate(split.test, tr.params, eval_cfg);
        switch (task) {
          case model::Task::Er: merged.auc_er = ev.auc_er; break;
          case model::Task::Pr: merged.auc_pr = ev.auc_pr; break;
          case model::Task::Her2: merged.auc_her2 = ev.auc_her2; break;
          case model::Task::Ki67:
            merged.ki67_mae_pp = ev.ki67_mae_pp;
            merged.ki67_mae_sd_pp = ev.ki67_mae_sd_pp;
            break;
        }
      }
      const double secs =
          std::chrono::duration<double>(clock::now() - t0).count();
      rows.push_back(row_from_eval(variant_name(v), merged, secs));
      continue;
    }

    const TrainResult tr = train(split.train, split.val, tcfg, vcfg);
    const EvalOutput ev = evaluate(split.test, tr.params, vcfg);
    const double secs =
        std::chrono::duration<double>(clock::now() - t0).count();
    rows.push_back(row_from_eval(variant_name(v), ev, secs));
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<AblationRow>& rows) {
  std::string text = "variant,auc_er,auc_pr,auc_her2,auc_avg,ki67_mae_pp\n";
  for (const AblationRow& r : rows) {
    text += r.variant + "," + eval::format_g12(r.auc_er) + "," +
            eval::format_g12(r.auc_pr) + "," + eval::format_g12(r.auc_her2) +
            "," + eval::format_g12(r.auc_avg) + "," +
            eval::format_g12(r.ki67_mae_pp) + "\n";
  }
  data::write_file_atomic(path, text);
}

}  // namespace smtl::train
