#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "smtl/commands.hpp"
#include "smtl/errors.hpp"
#include "smtl/model.hpp"
#include "smtl/phantom.hpp"
#include "smtl/volume.hpp"

using namespace smtl;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("smtl_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

// One small pipeline shared by the surface checks below.
struct Pipeline {
  fs::path data, train_out;

  Pipeline() {
    data = fresh_dir("data");
    train_out = fresh_dir("train");

    cli::SynthOptions synth;
    synth.out = data;
    synth.n = 12;
    synth.dims = {24, 24, 24};
    synth.seed = 21;
    synth.radius_min = 5.0;
    synth.radius_max = 6.0;
    REQUIRE(cli::cmd_synth(synth) == 0);

    cli::TrainOptions train;
    train.data = data;
    train.out = train_out;
    train.epochs = 2;
    train.lr = 1e-3;
    train.batch = 4;
    train.augment = false;
    train.stage_channels = {4, 8};
    train.attention_radii = {1, 2};
    train.head_hidden = 4;
    REQUIRE(cli::cmd_train(train) == 0);
  }
};

Pipeline& pipeline() {
  static Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("reference training recipe is the flag default") {
  const cli::TrainOptions opt;
  CHECK(opt.lr == 1e-4);
  CHECK(opt.batch == 4);
  CHECK(opt.epochs == 200);
  CHECK(opt.l2 == 1e-5);
  CHECK(opt.dropout_keep == 0.5);
  CHECK(opt.augment);
  const cli::VisualizeOptions viz;
  CHECK(viz.k_percent == 30.0);
}

TEST_CASE("synth writes an index, phantoms and a manifest") {
  const Pipeline& p = pipeline();
  const auto ids = data::read_index(p.data);
  CHECK(ids.size() == 12);
  for (const auto& id : ids) {
    CHECK(fs::exists(p.data / (id + ".meta.json")));
    CHECK(fs::exists(p.data / (id + ".vol.raw")));
    CHECK(fs::exists(p.data / (id + ".mask.raw")));
  }
  const json manifest = json::parse(read_text(p.data / "manifest.json"));
  CHECK(manifest.at("command") == "synth");
  CHECK(manifest.at("config").at("n") == 12);
  CHECK(manifest.contains("duration_seconds"));
}

TEST_CASE("synth rejects a tumor that cannot fit the volume") {
  cli::SynthOptions synth;
  synth.out = fresh_dir("toosmall");
  synth.n = 2;
  synth.dims = {8, 8, 8};
  CHECK_THROWS_WITH_AS(cli::cmd_synth(synth), doctest::Contains("does not fit"),
                       DataError);
}

TEST_CASE("train manifest records the resolved configuration") {
  const Pipeline& p = pipeline();
  const json manifest = json::parse(read_text(p.train_out / "manifest.json"));
  CHECK(manifest.at("command") == "train");
  CHECK(manifest.at("config").at("epochs") == 2);
  CHECK(manifest.at("config").at("lr") == 1e-3);
  CHECK(manifest.at("config").at("batch") == 4);
  CHECK(fs::exists(p.train_out / "checkpoint.bin"));
  CHECK(fs::exists(p.train_out / "history.csv"));
}

TEST_CASE("train rejects unknown ablation variants, listing valid names") {
  const Pipeline& p = pipeline();
  cli::TrainOptions train;
  train.data = p.data;
  train.out = fresh_dir("badablate");
  train.ablate = "nonsense";
  CHECK_THROWS_WITH_AS(cli::cmd_train(train),
                       doctest::Contains("no_multitask"), DataError);
}

TEST_CASE("train --ablate no_multitask emits one checkpoint per task") {
  const Pipeline& p = pipeline();
  cli::TrainOptions train;
  train.data = p.data;
  train.out = fresh_dir("multitask_off");
  train.epochs = 1;
  train.lr = 1e-3;
  train.batch = 4;
  train.augment = false;
  train.stage_channels = {4, 8};
  train.attention_radii = {1, 2};
  train.head_hidden = 4;
  train.ablate = "no_multitask";
  REQUIRE(cli::cmd_train(train) == 0);
  for (const char* task : {"er", "pr", "her2", "ki67"}) {
    CHECK(fs::exists(train.out / (std::string("checkpoint_") + task + ".bin")));
    CHECK(fs::exists(train.out / (std::string("history_") + task + ".csv")));
    const auto ck = model::load_checkpoint(
        train.out / (std::string("checkpoint_") + task + ".bin"));
    REQUIRE(ck.config.ablation.single_task.has_value());
    CHECK(model::task_name(*ck.config.ablation.single_task) ==
          std::string(task));
  }
}

TEST_CASE("eval writes metrics, attention report, curves and confusion") {
  const Pipeline& p = pipeline();
  cli::EvalOptions eval;
  eval.data = p.data;
  eval.ckpt = p.train_out / "checkpoint.bin";
  eval.out = fresh_dir("eval");
  eval.subset = "test";
  REQUIRE(cli::cmd_eval(eval) == 0);

  const std::string metrics = read_text(eval.out / "metrics.csv");
  CHECK(metrics.starts_with(
      "auc_er,auc_pr,auc_her2,auc_avg,ki67_mae_pp,ki67_mae_sd_pp,n_cases"));
  CHECK(fs::exists(eval.out / "attention_report.csv"));
  CHECK(fs::exists(eval.out / "confusion.csv"));
  CHECK(fs::exists(eval.out / "manifest.json"));

  SUBCASE("repeat runs produce identical CSV bytes") {
    cli::EvalOptions again = eval;
    again.out = fresh_dir("eval_again");
    REQUIRE(cli::cmd_eval(again) == 0);
    CHECK(read_text(eval.out / "metrics.csv") ==
          read_text(again.out / "metrics.csv"));
    CHECK(read_text(eval.out / "attention_report.csv") ==
          read_text(again.out / "attention_report.csv"));
  }

  SUBCASE("dimension mismatch is rejected with both shapes") {
    cli::SynthOptions other;
    other.out = fresh_dir("otherdims");
    other.n = 10;
    other.dims = {32, 32, 32};
    other.radius_min = 5.0;
    other.radius_max = 6.0;
    REQUIRE(cli::cmd_synth(other) == 0);
    cli::EvalOptions bad = eval;
    bad.data = other.out;
    bad.out = fresh_dir("evalbad");
    try {
      cli::cmd_eval(bad);
      CHECK(false);
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("32x32x32") != std::string::npos);
      CHECK(msg.find("24x24x24") != std::string::npos);
    }
  }
}

TEST_CASE("eval reports NA for a single-class task") {
  // Dataset with ER positive everywhere.
  const fs::path dir = fresh_dir("oneclass");
  data::PhantomConfig pcfg;
  pcfg.dims = {24, 24, 24};
  pcfg.radius_min = 5.0;
  pcfg.radius_max = 6.0;
  std::vector<std::string> ids;
  for (int i = 0; i < 12; ++i) {
    const data::BiomarkerLabels labels{1, i % 2, (i / 2) % 2,
                                       0.05 + 0.04 * i};
    const auto c = data::generate_phantom_with_labels(
        pcfg, 600 + static_cast<uint64_t>(i), labels);
    data::save_case(c, dir);
    ids.push_back(c.id);
  }
  data::write_index(dir, ids);

  cli::EvalOptions eval;
  eval.data = dir;
  eval.ckpt = pipeline().train_out / "checkpoint.bin";
  eval.out = fresh_dir("oneclass_eval");
  eval.subset = "all";
  REQUIRE(cli::cmd_eval(eval) == 0);
  const std::string metrics = read_text(eval.out / "metrics.csv");
  CHECK(metrics.find("NA") != std::string::npos);
}

TEST_CASE("visualize emits heatmap, overlay, profiles and stats") {
  const Pipeline& p = pipeline();
  const auto ids = data::read_index(p.data);

  cli::VisualizeOptions viz;
  viz.data = p.data;
  viz.case_id = ids.front();
  viz.ckpt = p.train_out / "checkpoint.bin";
  viz.out = fresh_dir("viz");
  REQUIRE(cli::cmd_visualize(viz) == 0);

  // Heatmap dimensions equal the slice dimensions.
  const std::string ppm = read_text(viz.out / "heatmap.ppm");
  CHECK(ppm.starts_with("P6\n24 24\n255\n"));
  CHECK(ppm.size() == std::string("P6\n24 24\n255\n").size() + 24 * 24 * 3);
  CHECK(fs::exists(viz.out / "overlay.ppm"));

  // One profile row per column plus one per row.
  std::ifstream prof(viz.out / "profiles.csv");
  std::string line;
  int horizontal = 0, vertical = 0, other = 0;
  std::getline(prof, line);  // header
  while (std::getline(prof, line)) {
    if (line.starts_with("horizontal,")) ++horizontal;
    else if (line.starts_with("vertical,")) ++vertical;
    else ++other;
  }
  CHECK(horizontal == 24);
  CHECK(vertical == 24);
  CHECK(other == 0);

  const json manifest = json::parse(read_text(viz.out / "manifest.json"));
  CHECK(manifest.at("config").at("k_percent") == 30.0);

  SUBCASE("missing case ids are listed") {
    cli::VisualizeOptions bad = viz;
    bad.case_id = "missing_case";
    bad.out = fresh_dir("vizbad");
    CHECK_THROWS_WITH_AS(cli::cmd_visualize(bad),
                         doctest::Contains(ids.front().c_str()), DataError);
  }
}

TEST_CASE("commands never mutate their input directory") {
  const Pipeline& p = pipeline();
  auto snapshot = [&] {
    std::map<fs::path, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(p.data))
      if (e.is_regular_file()) files[e.path()] = read_text(e.path());
    return files;
  };
  const auto before = snapshot();

  cli::EvalOptions eval;
  eval.data = p.data;
  eval.ckpt = p.train_out / "checkpoint.bin";
  eval.out = fresh_dir("nomutate");
  REQUIRE(cli::cmd_eval(eval) == 0);
  CHECK(snapshot() == before);
}
