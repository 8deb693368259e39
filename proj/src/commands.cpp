#include "smtl/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>

#include <json.hpp>

#include "smtl/ablation.hpp"
#include "smtl/dataset.hpp"
#include "smtl/errors.hpp"
#include "smtl/eval.hpp"
#include "smtl/gradcheck.hpp"
#include "smtl/morphology.hpp"
#include "smtl/parallel.hpp"
#include "smtl/phantom.hpp"
#include "smtl/rng.hpp"
#include "smtl/trainer.hpp"

namespace smtl::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using clock_type = std::chrono::steady_clock;

namespace {

void ensure_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw DataError("cannot create output directory: " + dir.string());
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const json& config, const clock_type::time_point& t0,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  json m;
  m["command"] = command;
  m["version"] = kToolVersion;
  m["config"] = config;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["duration_seconds"] =
      std::chrono::duration<double>(clock_type::now() - t0).count();
  data::write_file_atomic(out_dir / "manifest.json", m.dump(2) + "\n");
}

json split_json(double train_frac, double val_frac, uint64_t split_seed) {
  json j;
  j["train_frac"] = train_frac;
  j["val_frac"] = val_frac;
  j["split_seed"] = split_seed;
  return j;
}

std::vector<data::LabeledCase> select_subset(
    const std::vector<data::LabeledCase>& cases, const std::string& subset,
    double train_frac, double val_frac, uint64_t split_seed) {
  if (subset == "all") return cases;
  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.id);
  const data::IdSplit s =
      data::split_ids(ids, split_seed, train_frac, val_frac);
  const std::vector<std::string>* pick = nullptr;
  if (subset == "train") pick = &s.train;
  else if (subset == "val") pick = &s.val;
  else if (subset == "test") pick = &s.test;
  else
    throw DataError("unknown subset '" + subset +
                    "' (expected train, val, test or all)");
  std::vector<data::LabeledCase> out;
  for (const auto& c : cases)
    if (std::find(pick->begin(), pick->end(), c.id) != pick->end())
      out.push_back(c);
  return out;
}

model::ModelConfig model_config_from(const TrainOptions& opt,
                                     const data::Dims& dims) {
  model::ModelConfig mcfg;
  mcfg.dims = dims;
  mcfg.stage_channels = opt.stage_channels;
  mcfg.attention_radii = opt.attention_radii;
  mcfg.head_hidden = opt.head_hidden;
  mcfg.dropout_keep = opt.dropout_keep;
  mcfg.seed = opt.model_seed;
  return mcfg;
}

json train_options_json(const TrainOptions& opt) {
  json j;
  j["data"] = opt.data.string();
  j["out"] = opt.out.string();
  j["epochs"] = opt.epochs;
  j["lr"] = opt.lr;
  j["batch"] = opt.batch;
  j["seed"] = opt.seed;
  j["l2"] = opt.l2;
  j["dropout_keep"] = opt.dropout_keep;
  j["augment"] = opt.augment;
  j["ablate"] = opt.ablate;
  j["split"] = split_json(opt.train_frac, opt.val_frac, opt.split_seed);
  j["stage_channels"] = opt.stage_channels;
  j["attention_radii"] = opt.attention_radii;
  j["head_hidden"] = opt.head_hidden;
  j["model_seed"] = opt.model_seed;
  return j;
}

}  // namespace

int cmd_synth(const SynthOptions& opt) {
  const auto t0 = clock_type::now();
  if (opt.n < 1) throw DataError("synth: need at least one case");

  data::PhantomConfig cfg;
  cfg.dims = opt.dims;
  cfg.noise_sigma = opt.noise;
  cfg.rho = opt.rho;
  cfg.radius_min = opt.radius_min;
  cfg.radius_max = opt.radius_max;
  cfg.amp_er = opt.amp_er;
  cfg.amp_pr = opt.amp_pr;
  cfg.amp_her2 = opt.amp_her2;
  cfg.amp_ki67 = opt.amp_ki67;
  cfg.validate();

  ensure_out_dir(opt.out);
  std::vector<data::LabeledCase> cases(static_cast<size_t>(opt.n));
  parallel_for(opt.n, [&](int64_t i) {
    cases[static_cast<size_t>(i)] =
        data::generate_phantom(cfg, opt.seed + static_cast<uint64_t>(i));
  });
  std::vector<std::string> ids;
  for (const auto& c : cases) {
    data::save_case(c, opt.out);
    ids.push_back(c.id);
  }
  data::write_index(opt.out, ids);

  json config;
  config["n"] = opt.n;
  config["dims"] = {opt.dims.h, opt.dims.w, opt.dims.d};
  config["noise"] = opt.noise;
  config["rho"] = opt.rho;
  config["seed"] = opt.seed;
  config["radius_min"] = opt.radius_min;
  config["radius_max"] = opt.radius_max;
  config["amp_er"] = opt.amp_er;
  config["amp_pr"] = opt.amp_pr;
  config["amp_her2"] = opt.amp_her2;
  config["amp_ki67"] = opt.amp_ki67;
  write_manifest(opt.out, "synth", config, t0, {},
                 {"index.json", "<id>.meta.json", "<id>.vol.raw",
                  "<id>.mask.raw"});
  std::cout << "synth: wrote " << opt.n << " cases to " << opt.out.string()
            << "\n";
  return kExitOk;
}

int cmd_train(const TrainOptions& opt) {
  const auto t0 = clock_type::now();
  const std::vector<data::LabeledCase> cases = data::load_dataset(opt.data);
  if (cases.empty()) throw DataError("train: dataset is empty");
  const data::Dims dims = cases.front().volume.dims;
  for (const auto& c : cases)
    if (c.volume.dims != dims)
      throw DataError("train: case " + c.id + " has dims " +
                      c.volume.dims.str() + ", expected " + dims.str());

  std::optional<train::Variant> variant;
  if (!opt.ablate.empty()) {
    variant = train::parse_variant(opt.ablate);
    if (!variant)
      throw DataError("unknown ablation variant '" + opt.ablate +
                      "'; valid names: " + train::variant_names_joined());
  }

  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.id);
  const data::IdSplit s =
      data::split_ids(ids, opt.split_seed, opt.train_frac, opt.val_frac);
  auto pick = [&](const std::vector<std::string>& want) {
    std::vector<data::LabeledCase> out;
    for (const auto& c : cases)
      if (std::find(want.begin(), want.end(), c.id) != want.end())
        out.push_back(c);
    return out;
  };
  const std::vector<data::LabeledCase> train_set = pick(s.train);
  const std::vector<data::LabeledCase> val_set = pick(s.val);

  train::TrainConfig tcfg;
  tcfg.lr = opt.lr;
  tcfg.batch_size = opt.batch;
  tcfg.epochs = opt.epochs;
  tcfg.l2 = opt.l2;
  tcfg.dropout_keep = opt.dropout_keep;
  tcfg.augment = opt.augment;
  tcfg.seed = opt.seed;

  model::ModelConfig mcfg = model_config_from(opt, dims);
  if (variant) mcfg = train::apply_variant(mcfg, *variant);

  ensure_out_dir(opt.out);
  std::vector<std::string> outputs;

  if (variant && *variant == train::Variant::NoMultitask) {
    for (model::Task task : model::kAllTasks) {
      train::TrainConfig st = tcfg;
      st.single_task = task;
      const train::TrainResult tr = train::train(train_set, val_set, st, mcfg);
      model::ModelConfig saved_cfg = mcfg;
      saved_cfg.ablation.single_task = task;
      const std::string name = std::string("checkpoint_") +
                               model::task_name(task) + ".bin";
      model::save_checkpoint(opt.out / name, tr.params, saved_cfg,
                             tr.best_epoch);
      train::write_history_csv(
          opt.out / (std::string("history_") + model::task_name(task) + ".csv"),
          tr.history);
      outputs.push_back(name);
    }
  } else {
    const train::TrainResult tr = train::train(train_set, val_set, tcfg, mcfg);
    model::save_checkpoint(opt.out / "checkpoint.bin", tr.params, mcfg,
                           tr.best_epoch);
    train::write_history_csv(opt.out / "history.csv", tr.history);
    outputs = {"checkpoint.bin", "history.csv"};
  }

  write_manifest(opt.out, "train", train_options_json(opt), t0,
                 {opt.data.string()}, outputs);
  std::cout << "train: finished " << opt.epochs << " epochs, outputs in "
            << opt.out.string() << "\n";
  return kExitOk;
}

int cmd_eval(const EvalOptions& opt) {
  const auto t0 = clock_type::now();
  const model::Checkpoint ck = model::load_checkpoint(opt.ckpt);
  const std::vector<data::LabeledCase> all = data::load_dataset(opt.data);
  if (all.empty()) throw DataError("eval: dataset is empty");
  if (all.front().volume.dims != ck.config.dims)
    throw DataError("eval: dataset dims " + all.front().volume.dims.str() +
                    " do not match checkpoint dims " + ck.config.dims.str());

  const std::vector<data::LabeledCase> cases = select_subset(
      all, opt.subset, opt.train_frac, opt.val_frac, opt.split_seed);
  if (cases.empty()) throw DataError("eval: selected subset is empty");

  const train::EvalOutput ev = train::evaluate(cases, ck.params, ck.config);

  ensure_out_dir(opt.out);

  // Per-case attention statistics at input resolution.
  const int factor = ck.config.downsample();
  std::vector<eval::CaseReport> reports(cases.size());
  parallel_for(static_cast<int64_t>(cases.size()), [&](int64_t i) {
    const auto& c = cases[static_cast<size_t>(i)];
    const auto& pred = ev.predictions[static_cast<size_t>(i)];
    eval::CaseReport r;
    r.id = c.id;
    const ag::Tensor up = eval::upsample_nearest(pred.attention, factor);
    r.stats = eval::attention_stats(up, c.mask);
    r.slice = eval::select_slice(c.mask);
    const eval::Map2D norm =
        eval::normalize_attention(eval::slice_map(up, r.slice));
    r.dice = eval::dice_topk(norm, eval::slice_mask(c.mask, r.slice),
                             opt.k_percent);
    reports[static_cast<size_t>(i)] = r;
  });
  eval::write_attention_report_csv(opt.out / "attention_report.csv", reports);

  // Headline metrics.
  {
    auto cell = [](double v) { return eval::format_g12(v); };
    const double avg = [&] {
      double sum = 0.0;
      int n = 0;
      for (double v : {ev.auc_er, ev.auc_pr, ev.auc_her2})
        if (!std::isnan(v)) {
          sum += v;
          ++n;
        }
      return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
    }();
    std::string text =
        "auc_er,auc_pr,auc_her2,auc_avg,ki67_mae_pp,ki67_mae_sd_pp,n_cases\n";
    text += cell(ev.auc_er) + "," + cell(ev.auc_pr) + "," +
            cell(ev.auc_her2) + "," + cell(avg) + "," +
            cell(ev.ki67_mae_pp) + "," + cell(ev.ki67_mae_sd_pp) + "," +
            std::to_string(cases.size()) + "\n";
    data::write_file_atomic(opt.out / "metrics.csv", text);
  }

  // ROC curve sidecars, one per task with a defined AUC.
  {
    auto write_curve = [&](const char* task, auto score_of, auto label_of) {
      std::vector<double> scores;
      std::vector<int> labels;
      bool has0 = false, has1 = false;
      for (size_t i = 0; i < cases.size(); ++i) {
        scores.push_back(score_of(ev.predictions[i]));
        labels.push_back(label_of(ev.labels[i]));
        (labels.back() ? has1 : has0) = true;
      }
      if (!has0 || !has1) return;
      const stats::RocResult roc = stats::roc_auc(scores, labels);
      std::string text = "fpr,tpr\n";
      for (const auto& [fpr, tpr] : roc.points)
        text += eval::format_g12(fpr) + "," + eval::format_g12(tpr) + "\n";
      data::write_file_atomic(opt.out / (std::string("roc_") + task + ".csv"),
                              text);
    };
    write_curve("er", [](const auto& p) { return p.p_er; },
                [](const auto& y) { return y.er; });
    write_curve("pr", [](const auto& p) { return p.p_pr; },
                [](const auto& y) { return y.pr; });
    write_curve("her2", [](const auto& p) { return p.p_her2; },
                [](const auto& y) { return y.her2; });
  }

  // Four-class subtype confusion matrix from thresholded predictions.
  {
    constexpr std::array<model::Subtype, 4> kSubtypes{
        model::Subtype::LuminalA, model::Subtype::LuminalB,
        model::Subtype::Her2Enriched, model::Subtype::TripleNegative};
    int counts[4][4] = {};
    for (size_t i = 0; i < cases.size(); ++i) {
      const auto& p = ev.predictions[i];
      data::BiomarkerLabels predicted;
      predicted.er = p.p_er >= 0.5 ? 1 : 0;
      predicted.pr = p.p_pr >= 0.5 ? 1 : 0;
      predicted.her2 = p.p_her2 >= 0.5 ? 1 : 0;
      predicted.ki67 = p.ki67;
      const auto t = model::subtype_from_biomarkers(ev.labels[i]);
      const auto q = model::subtype_from_biomarkers(predicted);
      ++counts[static_cast<int>(t)][static_cast<int>(q)];
    }
    std::string text = "true\\predicted";
    for (auto s : kSubtypes) text += std::string(",") + model::subtype_name(s);
    text += "\n";
    for (int r = 0; r < 4; ++r) {
      text += model::subtype_name(kSubtypes[static_cast<size_t>(r)]);
      for (int c = 0; c < 4; ++c) text += "," + std::to_string(counts[r][c]);
      text += "\n";
    }
    data::write_file_atomic(opt.out / "confusion.csv", text);
  }

  json config;
  config["data"] = opt.data.string();
  config["ckpt"] = opt.ckpt.string();
  config["subset"] = opt.subset;
  config["split"] = split_json(opt.train_frac, opt.val_frac, opt.split_seed);
  config["k_percent"] = opt.k_percent;
  write_manifest(opt.out, "eval", config, t0,
                 {opt.data.string(), opt.ckpt.string()},
                 {"metrics.csv", "attention_report.csv", "confusion.csv"});
  std::cout << "eval: wrote metrics for " << cases.size() << " cases to "
            << opt.out.string() << "\n";
  return kExitOk;
}

int cmd_visualize(const VisualizeOptions& opt) {
  const auto t0 = clock_type::now();
  const model::Checkpoint ck = model::load_checkpoint(opt.ckpt);
  const std::vector<std::string> ids = data::read_index(opt.data);
  if (std::find(ids.begin(), ids.end(), opt.case_id) == ids.end()) {
    std::string available;
    for (const auto& id : ids) available += (available.empty() ? "" : ", ") + id;
    throw DataError("case '" + opt.case_id +
                    "' not found; available ids: " + available);
  }
  const data::LabeledCase c = data::load_case(opt.data, opt.case_id);
  if (c.volume.dims != ck.config.dims)
    throw DataError("visualize: case dims " + c.volume.dims.str() +
                    " do not match checkpoint dims " + ck.config.dims.str());

  const model::Prediction pred = model::forward_eval(c, ck.params, ck.config);
  const ag::Tensor up =
      eval::upsample_nearest(pred.attention, ck.config.downsample());
  const int slice = eval::select_slice(c.mask);
  const eval::Map2D norm =
      eval::normalize_attention(eval::slice_map(up, slice));
  const eval::Mask2D roi = eval::slice_mask(c.mask, slice);
  const double dice = eval::dice_topk(norm, roi, opt.k_percent);
  const eval::Profiles prof = eval::intensity_profiles(norm, roi);
  const eval::AttentionStats stats = eval::attention_stats(up, c.mask);

  ensure_out_dir(opt.out);
  eval::export_heatmap(norm, opt.out / "heatmap.ppm");

  // Overlay: grayscale slice blended with the attention colormap, ROI
  // boundary burned in white.
  {
    eval::Map2D gray(norm.h, norm.w);
    for (int i = 0; i < norm.h; ++i)
      for (int j = 0; j < norm.w; ++j)
        gray.at(i, j) = static_cast<double>(c.volume.at(i, j, slice));
    gray = eval::normalize_attention(gray);
    std::string bytes = "P6\n" + std::to_string(norm.w) + " " +
                        std::to_string(norm.h) + "\n255\n";
    auto boundary = [&](int i, int j) {
      if (!roi.at(i, j)) return false;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const int ii = i + di, jj = j + dj;
          if (ii < 0 || ii >= roi.h || jj < 0 || jj >= roi.w ||
              !roi.at(ii, jj))
            return true;
        }
      return false;
    };
    for (int i = 0; i < norm.h; ++i)
      for (int j = 0; j < norm.w; ++j) {
        int r, g, b;
        if (boundary(i, j)) {
          r = g = b = 255;
        } else {
          const double base = 0.5 * gray.at(i, j) * 255.0;
          const int heat = static_cast<int>(std::lround(norm.at(i, j) * 255.0));
          r = static_cast<int>(std::lround(base + 0.5 * heat));
          g = static_cast<int>(std::lround(base));
          b = static_cast<int>(std::lround(base + 0.5 * (255 - heat)));
        }
        bytes.push_back(static_cast<char>(std::clamp(r, 0, 255)));
        bytes.push_back(static_cast<char>(std::clamp(g, 0, 255)));
        bytes.push_back(static_cast<char>(std::clamp(b, 0, 255)));
      }
    data::write_file_atomic(opt.out / "overlay.ppm", bytes);
  }

  {
    std::string text = "axis,index,value\n";
    for (size_t j = 0; j < prof.horizontal.size(); ++j)
      text += "horizontal," + std::to_string(j) + "," +
              eval::format_g12(prof.horizontal[j]) + "\n";
    for (size_t i = 0; i < prof.vertical.size(); ++i)
      text += "vertical," + std::to_string(i) + "," +
              eval::format_g12(prof.vertical[i]) + "\n";
    data::write_file_atomic(opt.out / "profiles.csv", text);
  }

  {
    std::string text =
        "case_id,slice,centroid_x,centroid_y,dice,mean_roi,mean_bg,ratio,"
        "p_value\n";
    text += c.id + "," + std::to_string(slice) + "," +
            std::to_string(prof.cx) + "," + std::to_string(prof.cy) + "," +
            eval::format_g12(dice) + "," + eval::format_g12(stats.mean_roi) +
            "," + eval::format_g12(stats.mean_bg) + "," +
            eval::format_g12(stats.ratio) + "," + eval::format_g12(stats.p) +
            "\n";
    data::write_file_atomic(opt.out / "stats.csv", text);
  }

  json config;
  config["data"] = opt.data.string();
  config["case"] = opt.case_id;
  config["ckpt"] = opt.ckpt.string();
  config["k_percent"] = opt.k_percent;
  write_manifest(opt.out, "visualize", config, t0,
                 {opt.data.string(), opt.ckpt.string()},
                 {"heatmap.ppm", "overlay.ppm", "profiles.csv", "stats.csv"});
  std::cout << "visualize: case " << c.id << ", slice " << slice << ", Dice@"
            << opt.k_percent << " = " << dice << "\n";
  return kExitOk;
}

namespace {

// Small fixed case for the end-to-end derivative check. The phantom
// margin rule would reject a tumor this large relative to the volume, so
// the mask is built directly; the morphology clips at the borders.
data::LabeledCase make_gradcheck_case(const data::Dims& dims, uint64_t seed) {
  data::LabeledCase c;
  c.id = "gradcheck";
  c.labels = {1, 0, 1, 0.35};
  c.volume = data::Volume(dims);
  c.mask = data::TumorMask(dims, 0);
  const double cy = (dims.h - 1) / 2.0, cx = (dims.w - 1) / 2.0,
               cz = (dims.d - 1) / 2.0;
  const double ry = 0.28 * dims.h, rx = 0.24 * dims.w, rz = 0.26 * dims.d;
  rng::Stream noise(rng::mix(seed, 0x6C));
  for (int k = 0; k < dims.d; ++k)
    for (int i = 0; i < dims.h; ++i)
      for (int j = 0; j < dims.w; ++j) {
        const double fy = (i - cy) / ry, fx = (j - cx) / rx,
                     fz = (k - cz) / rz;
        const bool inside = fy * fy + fx * fx + fz * fz <= 1.0;
        if (inside) c.mask.at(i, j, k) = 1;
        const double texture = 0.3 * std::sin(0.9 * i + 0.4 * j + 0.7 * k);
        c.volume.at(i, j, k) = static_cast<float>(
            (inside ? 1.0 : 0.0) + texture + 0.1 * noise.normal());
      }
  return c;
}

}  // namespace

int cmd_gradcheck(const GradCheckOptions& opt) {
  model::ModelConfig cfg;
  cfg.dims = opt.dims;
  cfg.stage_channels = {4, 8};
  cfg.attention_radii = {1, 2};
  cfg.head_hidden = 4;
  cfg.dropout_keep = 1.0;
  cfg.seed = opt.seed;
  cfg.validate();

  const data::LabeledCase c = make_gradcheck_case(opt.dims, opt.seed);
  const model::ZoneMasks zones = model::prepare_zones(c.mask, cfg.downsample());
  model::ParamSet params = model::init_model(cfg);

  auto loss_of = [&](const model::ParamSet& p) {
    ag::Graph g;
    const model::BoundParams bound = model::bind_params(g, p);
    const model::ForwardResult fw =
        model::forward(g, c, bound, cfg, true, 0, &zones);
    return model::joint_loss_node(g, fw.nodes, c.labels)[0];
  };

  // Analytic gradient, flattened in parameter order.
  ag::Tensor analytic({params.total_size()});
  {
    ag::Graph g;
    const model::BoundParams bound = model::bind_params(g, params);
    const model::ForwardResult fw =
        model::forward(g, c, bound, cfg, true, 0, &zones);
    const ag::Tensor loss = model::joint_loss_node(g, fw.nodes, c.labels);
    const auto grads = g.backward(loss);
    int64_t off = 0;
    for (size_t i = 0; i < params.entries.size(); ++i) {
      const int node = bound.leaves[i].node;
      const int64_t n = params.entries[i].second.numel();
      auto it = grads.find(node);
      for (int64_t j = 0; j < n; ++j)
        analytic[off + j] = it != grads.end() ? it->second[j] : 0.0;
      off += n;
    }
  }

  const ag::Tensor flat({params.total_size()}, params.flatten());
  model::ParamSet scratch = params;
  auto f = [&](const ag::Tensor& theta) {
    scratch.unflatten(theta.data);
    return loss_of(scratch);
  };
  const ag::GradCheckResult res = ag::grad_check(f, analytic, flat, opt.h);

  // Map the worst coordinate back to a parameter path.
  std::string worst = "-";
  if (res.worst_index >= 0) {
    int64_t off = 0;
    for (const auto& [name, t] : params.entries) {
      if (res.worst_index < off + t.numel()) {
        worst = name + "[" + std::to_string(res.worst_index - off) + "]";
        break;
      }
      off += t.numel();
    }
  }

  std::cout << "gradcheck: dims " << opt.dims.str() << ", "
            << params.total_size() << " parameters, h = " << opt.h << "\n";
  if (!res.finite) {
    std::cout << "gradcheck: FAIL (" << res.note << ", parameter " << worst
              << ")\n";
    return kExitNumeric;
  }
  std::cout << "gradcheck: max relative error " << res.max_rel_err
            << " at parameter " << worst << "\n";
  if (res.max_rel_err < opt.tolerance) {
    std::cout << "gradcheck: PASS (tolerance " << opt.tolerance << ")\n";
    return kExitOk;
  }
  std::cout << "gradcheck: FAIL (tolerance " << opt.tolerance << ")\n";
  return kExitNumeric;
}

}  // namespace smtl::cli
