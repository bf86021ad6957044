#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "vmfcil/checkpoint.hpp"
#include "vmfcil/errors.hpp"
#include "vmfcil/harness.hpp"

using namespace vmfcil;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("vmfcil_h_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json tiny_json(const fs::path& out) {
  return json{{"name", "tiny"},
              {"seed", 3},
              {"output_dir", out.string()},
              {"benchmark", {{"protocol", "B0"}, {"total_classes", 4}, {"steps", 2}, {"memory", {{"policy", "total"}, {"amount", 8}}}}},
              {"dataset", {{"kind", "synthetic"}, {"height", 8}, {"width", 8}, {"train_per_class", 6}, {"test_per_class", 4}}},
              {"model", {{"widths", {4, 4, 6}}, {"feature_dim", 6}}},
              {"train", {{"epochs", 2}, {"batch_size", 8}, {"lr", 0.05}, {"grad_clip", 1.0}, {"decay_epochs", json::array()}, {"warmup_epochs", 1}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(VMFCIL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Harness : public ::testing::Test {
 protected:
  void SetUp() override {
    ::unsetenv("VMFCIL_OUTPUT_ROOT");
    dir = scratch(::testing::UnitTest::GetInstance()->current_test_info()->name());
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
};

}  // namespace

TEST_F(Harness, ParsesDeskConfig) {
  const ExperimentConfig c = load_config(fs::path(VMFCIL_SOURCE_DIR) / "configs" / "synthetic_b0.json");
  EXPECT_EQ(c.benchmark.total_classes, 10);
  EXPECT_EQ(c.benchmark.steps, 5);
  EXPECT_EQ(c.model.extractor.feature_dim, 32);
  EXPECT_EQ(c.train.mix.method, MixMethod::McMix);
  EXPECT_EQ(c.train.grad_clip, 1.0);
  EXPECT_NO_THROW(resolve(c).validate());
}

TEST_F(Harness, UnknownKeysAndTypesAreConfigErrors) {
  json j = tiny_json(dir);
  j["train"]["learning_rate"] = 0.1;
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = tiny_json(dir);
  j["seed"] = "three";
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = tiny_json(dir);
  j["components"] = {{"vmf", false}, {"matching", true}};
  EXPECT_THROW(resolve(config_from_json(j)).validate(), ConfigError);
  j = tiny_json(dir);
  j["benchmark"]["steps"] = 3;
  try {
    resolve(config_from_json(j)).validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("C=4, T=3"), std::string::npos);
  }
  EXPECT_THROW(load_config(dir / "missing.json"), Error);
}

TEST_F(Harness, HashIsCanonical) {
  const ExperimentConfig a = config_from_json(tiny_json(dir));
  json j = tiny_json(dir);
  j["train"]["momentum"] = 0.9;     // the default, spelled out
  j["components"]["vmf"] = true;    // likewise
  const ExperimentConfig b = config_from_json(json::parse(j.dump()));
  EXPECT_EQ(config_hash(resolve(a)), config_hash(resolve(b)));
  EXPECT_EQ(config_hash(resolve(a)).size(), 16u);

  const std::string base = config_hash(resolve(a));
  std::vector<ExperimentConfig> changed(6, a);
  changed[0].seed = 4;
  changed[1].train.lr = 0.051;
  changed[2].components.aux = false;
  changed[3].train.mix.schedule.tau = 0.5;
  changed[4].benchmark.memory.amount = 9;
  changed[5].model.extractor.widths[2] = 7;
  for (const auto& c : changed) EXPECT_NE(config_hash(resolve(c)), base);
}

TEST_F(Harness, ResolveFillsSeededFields) {
  const ExperimentConfig r = resolve(config_from_json(tiny_json(dir)));
  EXPECT_EQ(r.benchmark.class_order, seeded_class_order(4, 3));
  EXPECT_EQ(r.train.seed, 3u);
  EXPECT_EQ(r.dataset.synthetic.num_classes, 4);
  EXPECT_EQ(r.dataset.synthetic.seed, 3u);
  EXPECT_EQ(r.train.mix.schedule.total_epochs, 2);
  EXPECT_EQ(config_from_json(config_to_json(r)).train.lr, r.train.lr);
  EXPECT_EQ(config_hash(resolve(config_from_json(config_to_json(r)))), config_hash(r));
}

TEST_F(Harness, RerunIsIdenticalExceptWallTime) {
  const ExperimentConfig c = config_from_json(tiny_json(dir));
  const ResultRecord a = run(c);
  const fs::path run_dir = dir / ("tiny-" + a.config_hash);
  const std::string steps_a = slurp(run_dir / "steps.csv");
  const std::string epochs_a = slurp(run_dir / "epochs.jsonl");
  const ResultRecord b = run(c);
  EXPECT_EQ(a.to_json(false), b.to_json(false));
  EXPECT_EQ(steps_a, slurp(run_dir / "steps.csv"));
  EXPECT_EQ(epochs_a, slurp(run_dir / "epochs.jsonl"));
  EXPECT_TRUE(fs::exists(run_dir / "config.json"));
  EXPECT_TRUE(fs::exists(run_dir / "checkpoints" / "task_1" / "manifest.json"));
  const auto records = load_records({dir / "results.jsonl"});
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].to_json(false), a.to_json(false));
  EXPECT_EQ(ResultRecord::from_json(a.to_json()).to_json(), a.to_json());
  EXPECT_EQ(a.status, "ok");
  EXPECT_EQ(a.steps.size(), 2u);
}

TEST_F(Harness, B50ProducesOnePlusTSteps) {
  json j = tiny_json(dir);
  j["benchmark"]["protocol"] = "B50";
  j["benchmark"]["total_classes"] = 20;
  j["benchmark"]["steps"] = 5;
  j["benchmark"]["memory"]["amount"] = 40;
  j["dataset"]["train_per_class"] = 4;
  j["dataset"]["test_per_class"] = 2;
  j["save_checkpoints"] = false;
  j["train"]["epochs"] = 1;
  j["train"]["warmup_epochs"] = 0;
  const ResultRecord r = run(config_from_json(j));
  ASSERT_EQ(r.steps.size(), 6u);
  EXPECT_EQ(r.steps.front().seen_classes, 10);
  EXPECT_EQ(r.steps.back().seen_classes, 20);
  EXPECT_EQ(read_csv(dir / ("tiny-" + r.config_hash) / "steps.csv").size(), 7u);
}

TEST_F(Harness, FailedRunIsRecorded) {
  json j = tiny_json(dir);
  j["dataset"] = {{"kind", "manifest"}, {"path", (dir / "nope.csv").string()}};
  EXPECT_THROW(run(config_from_json(j)), IoError);
  const auto records = load_records({dir / "results.jsonl"});
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].status, "failed");
  EXPECT_FALSE(records[0].error.empty());
}

TEST_F(Harness, AblationCellCounts) {
  const ExperimentConfig c = config_from_json(tiny_json(dir));
  EXPECT_EQ(ablation_cells(c, "gamma_tau").size(), 20u);
  EXPECT_EQ(ablation_cells(c, "eta_ma").size(), 8u);
  EXPECT_EQ(ablation_cells(c, "schedule").size(), 3u);
  EXPECT_EQ(ablation_cells(c, "components").size(), 5u);
  EXPECT_EQ(ablation_cells(c, "mix").size(), 5u);
  EXPECT_EQ(ablation_cells(c, "paired_seeds").size(), 6u);
  EXPECT_THROW(ablation_cells(c, "depth"), UsageError);
  std::set<std::string> hashes;
  for (const auto& [label, cfg] : ablation_cells(c, "gamma_tau")) hashes.insert(config_hash(resolve(cfg)));
  EXPECT_EQ(hashes.size(), 20u);
}

TEST_F(Harness, AblateWritesSummary) {
  const ExperimentConfig c = config_from_json(tiny_json(dir));
  const auto records = ablate(c, "schedule");
  ASSERT_EQ(records.size(), 3u);
  const auto rows = read_csv(dir / "tiny-schedule-summary.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1][0], "sigmoid");
  EXPECT_EQ(rows[1][8], "0");
}

TEST_F(Harness, PlotRecords) {
  EXPECT_THROW(plot_records({}, dir / "plots"), UsageError);
  const ResultRecord r = run(config_from_json(tiny_json(dir)));
  plot_records({r}, dir / "plots");
  const auto rows = read_csv(dir / "plots" / "accuracy.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"record", "cell", "config_hash", "step", "seen_classes", "cnn", "nme"}));
  EXPECT_GT(fs::file_size(dir / "plots" / "accuracy.png"), 0u);
}

TEST_F(Harness, PlotScheduleTransitions) {
  SchedulePlotSpec spec;
  plot_schedule(spec, dir);
  const auto rows = read_csv(dir / "schedule.csv");
  ASSERT_EQ(rows.size(), 242u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"epoch", "sigma", "mu_hat_w0.5", "mu_hat_w-0.5"}));
  auto val = [&](int epoch, int col) { return std::stod(rows[static_cast<std::size_t>(epoch + 1)][static_cast<std::size_t>(col)]); };
  EXPECT_NEAR(val(0, 2), 0.5, 1e-9);
  EXPECT_NEAR(val(0, 3), 0.5, 1e-9);
  EXPECT_NEAR(val(144, 1), 0.5, 1e-12);
  EXPECT_NEAR(val(144, 2), 0.625, 1e-12);
  EXPECT_NEAR(val(240, 2), 0.75, 1e-9);
  EXPECT_NEAR(val(240, 3), 0.25, 1e-9);
  EXPECT_EQ(read_csv(dir / "schedule_samples.csv").size(), 1u + 241u * 2u * 4u);
  EXPECT_GT(fs::file_size(dir / "schedule.png"), 0u);
}

TEST_F(Harness, OutputRootFromEnvironment) {
  const ExperimentConfig c = config_from_json(tiny_json(dir / "ignored"));
  ::setenv("VMFCIL_OUTPUT_ROOT", (dir / "env").c_str(), 1);
  EXPECT_EQ(output_root(c), dir / "env");
  const ResultRecord r = run(c);
  ::unsetenv("VMFCIL_OUTPUT_ROOT");
  EXPECT_TRUE(fs::exists(dir / "env" / ("tiny-" + r.config_hash) / "record.json"));
  EXPECT_FALSE(fs::exists(dir / "ignored"));
}

TEST_F(Harness, CheckpointRoundTrip) {
  const ExperimentConfig c = resolve(config_from_json(tiny_json(dir)));
  auto [train, test] = make_synthetic_dataset(c.dataset.synthetic);
  const TaskStream s = build_task_stream(std::make_shared<DatasetSource>(std::move(train)), std::make_shared<DatasetSource>(std::move(test)),
                                         c.benchmark);
  const StreamRun r = run_stream(s, c.benchmark.memory, c.model, c.train, c.components);
  const fs::path task_dir = save_checkpoint(dir, 1, r.state);
  EXPECT_EQ(task_dir, dir / "task_1");
  const LearnerState back = load_checkpoint(task_dir);
  ASSERT_EQ(back.model.backbone.num_extractors(), 2);
  for (int k = 0; k < 2; ++k)
    EXPECT_EQ(back.model.backbone.extractors()[static_cast<std::size_t>(k)].checksum(),
              r.state.model.backbone.extractors()[static_cast<std::size_t>(k)].checksum());
  EXPECT_EQ(back.model.main.weights.value, r.state.model.main.weights.value);
  EXPECT_EQ(back.model.main.kappa(), r.state.model.main.kappa());
  ASSERT_TRUE(back.model.aux.has_value());
  EXPECT_EQ(back.model.aux->weights.value, r.state.model.aux->weights.value);
  EXPECT_EQ(back.memory.per_class, r.state.memory.per_class);
  EXPECT_EQ(back.tasks_done, 2);
  std::vector<Image> imgs;
  for (int i = 0; i < 8; ++i) imgs.push_back(s.test->samples[static_cast<std::size_t>(i)].image);
  EXPECT_EQ(predict_cnn(back.model, imgs), predict_cnn(r.state.model, imgs));
  EXPECT_THROW(load_checkpoint(dir / "task_9"), IoError);
}

TEST_F(Harness, CliExitCodes) {
  const fs::path cfg = dir / "tiny.json";
  std::ofstream(cfg) << tiny_json(dir).dump();
  EXPECT_EQ(cli("run --config " + cfg.string()), 0);
  EXPECT_EQ(cli(""), 1);
  EXPECT_EQ(cli("frobnicate"), 1);
  EXPECT_EQ(cli("run --config " + (dir / "missing.json").string()), 1);
  EXPECT_EQ(cli("ablate --config " + cfg.string() + " --axis depth"), 1);
  EXPECT_EQ(cli("plot --out " + (dir / "p").string()), 1);
  EXPECT_EQ(cli("plot --schedule --out " + (dir / "p").string()), 0);

  json bad = tiny_json(dir);
  bad["model"]["depth"] = 3;
  std::ofstream(dir / "bad.json") << bad.dump();
  EXPECT_EQ(cli("run --config " + (dir / "bad.json").string()), 1);

  json diverge = tiny_json(dir);
  diverge["train"]["lr"] = 1e12;
  diverge["train"]["grad_clip"] = 0.0;
  diverge["train"]["warmup_epochs"] = 0;
  std::ofstream(dir / "diverge.json") << diverge.dump();
  EXPECT_EQ(cli("run --config " + (dir / "diverge.json").string()), 2);
}
