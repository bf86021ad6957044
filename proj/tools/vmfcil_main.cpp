#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "vmfcil/checks.hpp"
#include "vmfcil/errors.hpp"
#include "vmfcil/harness.hpp"

namespace fs = std::filesystem;
using namespace vmfcil;

namespace {

void print_record(const ResultRecord& r) {
  std::cout << r.name << (r.cell.empty() ? "" : " [" + r.cell + "]") << "  hash=" << r.config_hash
            << "  avg_cnn=" << r.average_cnn << "  last_cnn=" << r.last_cnn << "  avg_nme=" << r.average_nme
            << "  last_nme=" << r.last_nme << "  align=" << r.final_alignment << "  time=" << r.wall_time << "s\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vmfcil: class-incremental learning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run_cmd = app.add_subcommand("run", "train and evaluate one task stream");
  run_cmd->add_option("--config", config_path, "experiment JSON")->required()->check(CLI::ExistingFile);

  std::string axis;
  auto* ablate_cmd = app.add_subcommand("ablate", "sweep one axis of a base config");
  ablate_cmd->add_option("--config", config_path, "base experiment JSON")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--axis", axis, "components | mix | gamma_tau | eta_ma | schedule | paired_seeds")->required();

  std::string records_glob, out_dir;
  bool schedule_plot = false;
  SchedulePlotSpec schedule;
  auto* plot_cmd = app.add_subcommand("plot", "accuracy curves from records, or schedule mean functions");
  auto* rec_opt = plot_cmd->add_option("--records", records_glob, "glob of record.json / results.jsonl files");
  auto* sch_flag = plot_cmd->add_flag("--schedule", schedule_plot, "plot the mixing schedule instead");
  rec_opt->excludes(sch_flag);
  plot_cmd->add_option("--out", out_dir, "output directory (default <output root>/plots)");
  plot_cmd->add_option("--gamma", schedule.schedule.gamma, "schedule steepness")->capture_default_str();
  plot_cmd->add_option("--tau", schedule.schedule.tau, "schedule center as a fraction of the epochs")->capture_default_str();
  plot_cmd->add_option("--epochs", schedule.schedule.total_epochs, "epochs on the x axis")->capture_default_str();
  std::string kind = "sigmoid";
  plot_cmd->add_option("--kind", kind, "sigmoid | linear | step | constant")->capture_default_str();
  plot_cmd->add_option("--weights", schedule.weights, "class weights w_y to draw")->capture_default_str();
  plot_cmd->add_option("--seed", schedule.seed, "seed for the lambda scatter")->capture_default_str();

  std::uint64_t check_seed = 0;
  std::string report_path;
  auto* check_cmd = app.add_subcommand("vmf-check", "Monte-Carlo and finite-difference verification suite");
  check_cmd->add_option("--seed", check_seed, "seed")->capture_default_str();
  check_cmd->add_option("--report", report_path, "also write the JSON report to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const char* env = std::getenv("VMFCIL_OUTPUT_ROOT");
    const fs::path default_root = env && *env ? fs::path(env) : fs::path("runs");
    if (*run_cmd) {
      print_record(run(load_config(config_path)));
    } else if (*ablate_cmd) {
      for (const auto& r : ablate(load_config(config_path), axis)) print_record(r);
    } else if (*plot_cmd) {
      const fs::path out = out_dir.empty() ? default_root / "plots" : fs::path(out_dir);
      if (schedule_plot) {
        schedule.schedule.kind = parse_schedule_kind(kind);
        plot_schedule(schedule, out);
        std::cout << "wrote " << (out / "schedule.csv").string() << " and " << (out / "schedule.png").string() << '\n';
      } else {
        if (records_glob.empty()) throw UsageError("plot needs --records <glob> or --schedule");
        plot_records(load_records(expand_glob(records_glob)), out);
        std::cout << "wrote " << (out / "accuracy.csv").string() << " and " << (out / "accuracy.png").string() << '\n';
      }
    } else if (*check_cmd) {
      const checks::Report report = checks::run_all(check_seed);
      std::cout << report.to_json() << '\n';
      if (!report_path.empty()) {
        std::ofstream f(report_path);
        f << report.to_json() << '\n';
      }
      return report.passed() ? 0 : 2;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
