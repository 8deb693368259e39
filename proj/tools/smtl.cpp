// Command-line front end: data synthesis, training, evaluation,
// visualization and gradient checking for the spatial multi-task
// biomarker model.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "smtl/commands.hpp"
#include "smtl/errors.hpp"

namespace {

using nlohmann::json;

// Optional --config JSON: values apply only where the flag was not given
// on the command line, so flags always win.
json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw smtl::DataError("cannot read config file: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw smtl::DataError("bad config file " + path + ": " + e.what());
  }
}

template <class T>
void maybe_override(const json& cfg, const CLI::Option* opt, const char* key,
                    T& value) {
  if (opt->count() > 0) return;
  if (cfg.contains(key)) value = cfg.at(key).get<T>();
}

smtl::data::Dims parse_dims(const std::string& text) {
  smtl::data::Dims d;
  if (std::sscanf(text.c_str(), "%d,%d,%d", &d.h, &d.w, &d.d) != 3)
    throw CLI::ValidationError("--dims", "expected H,W,D");
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial multi-task biomarker prediction from 3D volumes"};
  app.require_subcommand(1);

  smtl::cli::SynthOptions synth;
  smtl::cli::TrainOptions train;
  smtl::cli::EvalOptions eval;
  smtl::cli::VisualizeOptions viz;
  smtl::cli::GradCheckOptions grad;

  std::string synth_dims = "32,32,32";
  std::string grad_dims = "16,16,16";
  std::string synth_config, train_config, eval_config;

  auto* cmd_synth = app.add_subcommand("synth", "Generate a phantom dataset");
  cmd_synth->add_option("--out", synth.out, "Output dataset directory")
      ->required();
  auto* o_n = cmd_synth->add_option("--n", synth.n, "Number of cases");
  auto* o_dims = cmd_synth->add_option("--dims", synth_dims, "Volume dims H,W,D");
  auto* o_noise = cmd_synth->add_option("--noise", synth.noise,
                                        "Gaussian noise standard deviation");
  auto* o_rho = cmd_synth->add_option("--rho", synth.rho,
                                      "ER/PR label coupling in [0,1]");
  auto* o_seed = cmd_synth->add_option("--seed", synth.seed, "Base seed");
  auto* o_rmin = cmd_synth->add_option("--radius-min", synth.radius_min,
                                       "Smallest tumor semi-axis (voxels)");
  auto* o_rmax = cmd_synth->add_option("--radius-max", synth.radius_max,
                                       "Largest tumor semi-axis (voxels)");
  cmd_synth->add_option("--amp-er", synth.amp_er, "ER core-shift amplitude");
  cmd_synth->add_option("--amp-pr", synth.amp_pr, "PR core-variance amplitude");
  cmd_synth->add_option("--amp-her2", synth.amp_her2, "HER2 rim amplitude");
  cmd_synth->add_option("--amp-ki67", synth.amp_ki67,
                        "Ki-67 peritumoral gradient amplitude");
  cmd_synth->add_option("--config", synth_config,
                        "JSON config; explicit flags override it");

  auto* cmd_train = app.add_subcommand("train", "Train a model on a dataset");
  cmd_train->add_option("--data", train.data, "Dataset directory")->required();
  cmd_train->add_option("--out", train.out, "Output directory")->required();
  auto* t_epochs = cmd_train->add_option("--epochs", train.epochs, "Epochs");
  auto* t_lr = cmd_train->add_option("--lr", train.lr, "Learning rate");
  auto* t_batch = cmd_train->add_option("--batch", train.batch, "Batch size");
  auto* t_seed = cmd_train->add_option("--seed", train.seed, "Training seed");
  auto* t_l2 = cmd_train->add_option("--l2", train.l2, "L2 decay coefficient");
  auto* t_keep = cmd_train->add_option("--dropout-keep", train.dropout_keep,
                                       "Dropout keep probability");
  auto* t_aug = cmd_train->add_option("--augment", train.augment,
                                      "Enable augmentation (0/1)");
  cmd_train->add_option("--ablate", train.ablate,
                        "Ablation variant (see docs)");
  cmd_train->add_option("--train-frac", train.train_frac, "Train fraction");
  cmd_train->add_option("--val-frac", train.val_frac, "Validation fraction");
  cmd_train->add_option("--split-seed", train.split_seed, "Split seed");
  cmd_train->add_option("--stages", train.stage_channels,
                        "Backbone stage widths");
  cmd_train->add_option("--radii", train.attention_radii,
                        "Attention kernel radii");
  cmd_train->add_option("--hidden", train.head_hidden, "Head hidden width");
  cmd_train->add_option("--model-seed", train.model_seed, "Weight init seed");
  cmd_train->add_option("--config", train_config,
                        "JSON config; explicit flags override it");

  auto* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  cmd_eval->add_option("--data", eval.data, "Dataset directory")->required();
  cmd_eval->add_option("--ckpt", eval.ckpt, "Checkpoint file")->required();
  cmd_eval->add_option("--out", eval.out, "Output directory")->required();
  cmd_eval->add_option("--subset", eval.subset,
                       "Subset to evaluate: train, val, test or all");
  cmd_eval->add_option("--train-frac", eval.train_frac, "Train fraction");
  cmd_eval->add_option("--val-frac", eval.val_frac, "Validation fraction");
  cmd_eval->add_option("--split-seed", eval.split_seed, "Split seed");
  cmd_eval->add_option("--k", eval.k_percent, "Dice@k percentage");
  cmd_eval->add_option("--config", eval_config,
                       "JSON config; explicit flags override it");

  auto* cmd_viz = app.add_subcommand("visualize",
                                     "Export attention maps for one case");
  cmd_viz->add_option("--data", viz.data, "Dataset directory")->required();
  cmd_viz->add_option("--case", viz.case_id, "Case id")->required();
  cmd_viz->add_option("--ckpt", viz.ckpt, "Checkpoint file")->required();
  cmd_viz->add_option("--out", viz.out, "Output directory")->required();
  cmd_viz->add_option("--k", viz.k_percent, "Dice@k percentage");

  auto* cmd_grad = app.add_subcommand(
      "gradcheck", "End-to-end finite-difference gradient check");
  cmd_grad->add_option("--dims", grad_dims, "Volume dims H,W,D");
  cmd_grad->add_option("--seed", grad.seed, "Seed");
  cmd_grad->add_option("--step", grad.h, "Finite-difference step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : smtl::cli::kExitUsage;
  }

  try {
    if (cmd_synth->parsed()) {
      const json cfg = load_config_file(synth_config);
      maybe_override(cfg, o_n, "n", synth.n);
      maybe_override(cfg, o_dims, "dims", synth_dims);
      maybe_override(cfg, o_noise, "noise", synth.noise);
      maybe_override(cfg, o_rho, "rho", synth.rho);
      maybe_override(cfg, o_seed, "seed", synth.seed);
      maybe_override(cfg, o_rmin, "radius_min", synth.radius_min);
      maybe_override(cfg, o_rmax, "radius_max", synth.radius_max);
      synth.dims = parse_dims(synth_dims);
      return smtl::cli::cmd_synth(synth);
    }
    if (cmd_train->parsed()) {
      const json cfg = load_config_file(train_config);
      maybe_override(cfg, t_epochs, "epochs", train.epochs);
      maybe_override(cfg, t_lr, "lr", train.lr);
      maybe_override(cfg, t_batch, "batch", train.batch);
      maybe_override(cfg, t_seed, "seed", train.seed);
      maybe_override(cfg, t_l2, "l2", train.l2);
      maybe_override(cfg, t_keep, "dropout_keep", train.dropout_keep);
      maybe_override(cfg, t_aug, "augment", train.augment);
      return smtl::cli::cmd_train(train);
    }
    if (cmd_eval->parsed()) {
      (void)load_config_file(eval_config);
      return smtl::cli::cmd_eval(eval);
    }
    if (cmd_viz->parsed()) return smtl::cli::cmd_visualize(viz);
    if (cmd_grad->parsed()) {
      grad.dims = parse_dims(grad_dims);
      return smtl::cli::cmd_gradcheck(grad);
    }
  } catch (const smtl::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return smtl::cli::kExitNumeric;
  } catch (const smtl::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return smtl::cli::kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return smtl::cli::kExitData;
  }
  return smtl::cli::kExitUsage;
}
