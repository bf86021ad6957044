#ifndef VMFCIL_HARNESS_HPP_
#define VMFCIL_HARNESS_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vmfcil/data_stream.hpp"
#include "vmfcil/training.hpp"

namespace vmfcil {

struct DatasetConfig {
  enum class Kind { Synthetic, Manifest };
  Kind kind = Kind::Synthetic;
  SyntheticSpec synthetic;  // its seed is replaced by the experiment seed
  std::string manifest;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  BenchmarkSpec benchmark;  // empty class_order: drawn from the seed
  DatasetConfig dataset;
  ModelOptions model;
  TrainConfig train;  // train.seed mirrors `seed`
  ComponentFlags components;
  std::string output_dir = "runs";
  bool save_checkpoints = true;

  void validate() const;
};

/// Strict parse: unknown keys and wrong types are ConfigError. Missing keys
/// take their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every field, defaults included, in a fixed key order.
nlohmann::json config_to_json(const ExperimentConfig& config);
/// 16 hex digits of FNV-1a over the canonical JSON of the resolved config.
std::string config_hash(const ExperimentConfig& config);

/// Fills the class order from the seed when empty and copies the seed into
/// the training and dataset settings.
ExperimentConfig resolve(ExperimentConfig config);

struct ResultRecord {
  std::string name;
  std::string cell;  // ablation cell label, empty for a plain run
  std::string config_hash;
  std::string status = "ok";
  std::string error;
  std::uint64_t seed = 0;
  std::vector<int> class_order;
  std::vector<StepResult> steps;
  double average_cnn = 0.0;
  double last_cnn = 0.0;
  double average_nme = 0.0;
  double last_nme = 0.0;
  double final_alignment = 0.0;
  double wall_time = 0.0;
  ComponentFlags components;
  nlohmann::json config;

  nlohmann::json to_json(bool include_wall_time = true) const;
  static ResultRecord from_json(const nlohmann::json& j);
};

/// VMFCIL_OUTPUT_ROOT when set, otherwise the config's output_dir.
std::filesystem::path output_root(const ExperimentConfig& config);

/// Trains and evaluates the whole stream. Writes into
/// `<root>/<name>-<hash>/`: record.json, steps.csv, epochs.jsonl and
/// checkpoints/task_<t>/; appends the record to `<root>/results.jsonl`. On
/// failure the partial record is flushed with status "failed" and the error
/// is rethrown.
ResultRecord run(const ExperimentConfig& config, const std::string& cell = {});

/// Axis names accepted by ablate().
std::vector<std::string> ablation_axes();

/// One config per cell of the axis, everything else held fixed. Each cell
/// gets its own name suffix and therefore its own output directory.
std::vector<std::pair<std::string, ExperimentConfig>> ablation_cells(const ExperimentConfig& base, const std::string& axis);

/// Runs every cell and writes `<root>/<name>-<axis>-summary.csv` with deltas
/// against the first cell of the same seed. Unknown axis: UsageError.
std::vector<ResultRecord> ablate(const ExperimentConfig& base, const std::string& axis);

/// Reads records from .json (one record) or .jsonl (one per line) files.
std::vector<ResultRecord> load_records(const std::vector<std::filesystem::path>& files);
std::vector<std::filesystem::path> expand_glob(const std::string& pattern);

/// `<out>/accuracy.csv` (record,cell,config_hash,step,seen_classes,cnn,nme)
/// and `<out>/accuracy.png`. UsageError on an empty record list.
void plot_records(const std::vector<ResultRecord>& records, const std::filesystem::path& out);

struct SchedulePlotSpec {
  MixSchedule schedule;  // total_epochs sets the x range
  std::vector<double> weights{0.5, -0.5};
  double alpha = 1.0;
  int samples_per_epoch = 4;
  std::uint64_t seed = 0;
};

/// `<out>/schedule.csv` (epoch,sigma,mu_hat_w<k>...), `<out>/schedule_samples.csv`
/// (epoch,weight,lambda,lambda_hat) and `<out>/schedule.png`.
void plot_schedule(const SchedulePlotSpec& spec, const std::filesystem::path& out);

}  // namespace vmfcil

#endif  // VMFCIL_HARNESS_HPP_
