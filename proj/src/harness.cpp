#include "vmfcil/harness.hpp"

#include <glob.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "vmfcil/checkpoint.hpp"
#include "vmfcil/errors.hpp"
#include "vmfcil/raster.hpp"

namespace vmfcil {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads known keys from one JSON object and rejects everything else.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + " has the wrong type");
    }
  }

  std::optional<Section> sub(const char* key) {
    if (!j_.contains(key)) return std::nullopt;
    seen_.insert(key);
    return Section(j_.at(key), where_ + "." + key);
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown config key " + where_ + "." + item.key());
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <class E>
E pick(const std::string& value, std::initializer_list<std::pair<const char*, E>> options, const std::string& what) {
  for (const auto& [name, e] : options)
    if (value == name) return e;
  throw ConfigError("unknown " + what + " '" + value + "'");
}

std::string protocol_name(Protocol p) { return p == Protocol::B0 ? "B0" : "B50"; }
std::string policy_name(MemoryBudget::Policy p) { return p == MemoryBudget::Policy::Total ? "total" : "per_class"; }

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') ? c : '_';
  return out.empty() ? "run" : out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

json step_json(const StepResult& s) {
  return {{"task", s.task},
          {"seen_classes", s.seen_classes},
          {"cnn_accuracy", s.cnn_accuracy},
          {"nme_accuracy", s.nme_accuracy},
          {"agreement", s.agreement},
          {"final_alignment", s.final_alignment},
          {"flagged_classes", s.flagged_classes}};
}

json flags_json(const ComponentFlags& f) {
  return {{"mcmix", f.mcmix}, {"vmf", f.vmf}, {"matching", f.matching}, {"aux", f.aux}, {"weight_align", f.weight_align}};
}

ComponentFlags flags_from(const json& j) {
  ComponentFlags f;
  Section s(j, "components");
  s.get("mcmix", f.mcmix);
  s.get("vmf", f.vmf);
  s.get("matching", f.matching);
  s.get("aux", f.aux);
  s.get("weight_align", f.weight_align);
  s.finish();
  return f;
}

void summarize(ResultRecord& rec) {
  StepMetrics m;
  m.steps = rec.steps;
  rec.average_cnn = m.average_cnn();
  rec.last_cnn = m.last_cnn();
  rec.average_nme = m.average_nme();
  rec.last_nme = m.last_nme();
  rec.final_alignment = rec.steps.empty() ? 0.0 : rec.steps.back().final_alignment;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  out << line << '\n';
  if (!out) throw IoError("cannot append to " + path.string());
}

}  // namespace

void ExperimentConfig::validate() const {
  components.validate();
  train.validate();
  benchmark.validate();
  if (benchmark.memory.amount < 0) throw ConfigError("memory amount must be nonnegative");
  if (train.seed != seed) throw ConfigError("train seed must match the experiment seed; call resolve()");
  if (model.extractor.widths.size() != 3) throw ConfigError("model.widths needs exactly three conv widths");
  for (int w : model.extractor.widths)
    if (w <= 0) throw ConfigError("model.widths must be positive");
  if (model.extractor.feature_dim <= 0) throw ConfigError("model.feature_dim must be positive");
  if (!(model.initial_kappa > 0.0)) throw ConfigError("model.initial_kappa must be positive");
  if (dataset.kind == DatasetConfig::Kind::Synthetic) {
    const SyntheticSpec& s = dataset.synthetic;
    if (s.num_classes != benchmark.total_classes)
      throw ConfigError("synthetic dataset class count differs from benchmark.total_classes");
    if (s.height < 8 || s.width < 8) throw ConfigError("synthetic images must be at least 8x8");
    if (s.channels != 1 && s.channels != 3) throw ConfigError("synthetic images need 1 or 3 channels");
    if (s.train_per_class <= 0 || s.test_per_class <= 0) throw ConfigError("synthetic sample counts must be positive");
    if (s.noise < 0.0 || s.jitter < 0.0) throw ConfigError("synthetic noise and jitter must be nonnegative");
  } else if (dataset.manifest.empty()) {
    throw ConfigError("dataset.path is required for a manifest dataset");
  }
  if (name.empty()) throw ConfigError("name must not be empty");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.dataset.synthetic.num_classes = 0;
  Section top(j, "config");
  top.get("name", c.name);
  top.get("seed", c.seed);
  top.get("output_dir", c.output_dir);
  top.get("save_checkpoints", c.save_checkpoints);

  if (auto b = top.sub("benchmark")) {
    std::string protocol = protocol_name(c.benchmark.protocol);
    b->get("protocol", protocol);
    c.benchmark.protocol = pick<Protocol>(protocol, {{"B0", Protocol::B0}, {"B50", Protocol::B50}}, "protocol");
    b->get("total_classes", c.benchmark.total_classes);
    b->get("steps", c.benchmark.steps);
    b->get("class_order", c.benchmark.class_order);
    if (auto m = b->sub("memory")) {
      std::string policy = policy_name(c.benchmark.memory.policy);
      m->get("policy", policy);
      c.benchmark.memory.policy = pick<MemoryBudget::Policy>(
          policy, {{"total", MemoryBudget::Policy::Total}, {"per_class", MemoryBudget::Policy::PerClass}}, "memory policy");
      m->get("amount", c.benchmark.memory.amount);
      m->finish();
    }
    b->finish();
  }

  if (auto d = top.sub("dataset")) {
    std::string kind = "synthetic";
    d->get("kind", kind);
    c.dataset.kind = pick<DatasetConfig::Kind>(
        kind, {{"synthetic", DatasetConfig::Kind::Synthetic}, {"manifest", DatasetConfig::Kind::Manifest}}, "dataset kind");
    SyntheticSpec& s = c.dataset.synthetic;
    d->get("path", c.dataset.manifest);
    d->get("num_classes", s.num_classes);
    d->get("height", s.height);
    d->get("width", s.width);
    d->get("channels", s.channels);
    d->get("train_per_class", s.train_per_class);
    d->get("test_per_class", s.test_per_class);
    d->get("noise", s.noise);
    d->get("jitter", s.jitter);
    d->finish();
  }

  if (auto m = top.sub("model")) {
    m->get("widths", c.model.extractor.widths);
    m->get("feature_dim", c.model.extractor.feature_dim);
    m->get("initial_kappa", c.model.initial_kappa);
    m->finish();
  }

  if (auto t = top.sub("train")) {
    TrainConfig& tc = c.train;
    t->get("epochs", tc.epochs);
    t->get("batch_size", tc.batch_size);
    t->get("lr", tc.lr);
    t->get("momentum", tc.momentum);
    t->get("weight_decay", tc.weight_decay);
    t->get("decay_epochs", tc.decay_epochs);
    t->get("decay_factor", tc.decay_factor);
    t->get("warmup_epochs", tc.warmup_epochs);
    t->get("eta_aux", tc.eta_aux);
    t->get("eta_ma", tc.eta_ma);
    t->get("matching_stop_gradient", tc.matching_stop_gradient);
    t->get("matching_updates_kappa", tc.matching_updates_kappa);
    t->get("grad_clip", tc.grad_clip);
    std::string aux_labels = "dominant", selection = "herding";
    t->get("aux_labels", aux_labels);
    t->get("selection", selection);
    tc.aux_labels = pick<AuxLabelMode>(aux_labels, {{"dominant", AuxLabelMode::Dominant}, {"anchor", AuxLabelMode::Anchor}},
                                       "aux_labels");
    tc.selection = pick<SelectionStrategy>(
        selection, {{"herding", SelectionStrategy::Herding}, {"random", SelectionStrategy::Random}}, "selection");
    if (auto mix = t->sub("mix")) {
      std::string method = to_string(tc.mix.method);
      mix->get("method", method);
      tc.mix.method = parse_mix_method(method);
      mix->get("alpha", tc.mix.alpha);
      if (auto sch = mix->sub("schedule")) {
        std::string kind = to_string(tc.mix.schedule.kind);
        sch->get("kind", kind);
        tc.mix.schedule.kind = parse_schedule_kind(kind);
        sch->get("gamma", tc.mix.schedule.gamma);
        sch->get("tau", tc.mix.schedule.tau);
        sch->finish();
      }
      mix->finish();
    }
    t->finish();
  }

  if (top.sub("components")) c.components = flags_from(j.at("components"));
  top.finish();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

ExperimentConfig resolve(ExperimentConfig config) {
  if (config.benchmark.class_order.empty() && config.benchmark.total_classes > 0)
    config.benchmark.class_order = seeded_class_order(config.benchmark.total_classes, config.seed);
  if (config.dataset.synthetic.num_classes == 0) config.dataset.synthetic.num_classes = config.benchmark.total_classes;
  config.dataset.synthetic.seed = config.seed;
  config.train.seed = config.seed;
  config.train.mix.schedule.total_epochs = config.train.epochs;
  config.model.head = config.components.vmf ? HeadKind::Vmf : HeadKind::Linear;
  return config;
}

json config_to_json(const ExperimentConfig& c) {
  const TrainConfig& t = c.train;
  json dataset = {{"kind", c.dataset.kind == DatasetConfig::Kind::Synthetic ? "synthetic" : "manifest"}};
  if (c.dataset.kind == DatasetConfig::Kind::Synthetic) {
    const SyntheticSpec& s = c.dataset.synthetic;
    dataset.update({{"num_classes", s.num_classes}, {"height", s.height}, {"width", s.width}, {"channels", s.channels},
                    {"train_per_class", s.train_per_class}, {"test_per_class", s.test_per_class}, {"noise", s.noise},
                    {"jitter", s.jitter}});
  } else {
    dataset["path"] = c.dataset.manifest;
  }
  return {
      {"name", c.name},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"save_checkpoints", c.save_checkpoints},
      {"benchmark",
       {{"protocol", protocol_name(c.benchmark.protocol)},
        {"total_classes", c.benchmark.total_classes},
        {"steps", c.benchmark.steps},
        {"class_order", c.benchmark.class_order},
        {"memory", {{"policy", policy_name(c.benchmark.memory.policy)}, {"amount", c.benchmark.memory.amount}}}}},
      {"dataset", dataset},
      {"model",
       {{"widths", c.model.extractor.widths},
        {"feature_dim", c.model.extractor.feature_dim},
        {"initial_kappa", c.model.initial_kappa}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"lr", t.lr},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"decay_epochs", t.decay_epochs},
        {"decay_factor", t.decay_factor},
        {"warmup_epochs", t.warmup_epochs},
        {"eta_aux", t.eta_aux},
        {"eta_ma", t.eta_ma},
        {"matching_stop_gradient", t.matching_stop_gradient},
        {"matching_updates_kappa", t.matching_updates_kappa},
        {"grad_clip", t.grad_clip},
        {"aux_labels", t.aux_labels == AuxLabelMode::Dominant ? "dominant" : "anchor"},
        {"selection", t.selection == SelectionStrategy::Herding ? "herding" : "random"},
        {"mix",
         {{"method", to_string(t.mix.method)},
          {"alpha", t.mix.alpha},
          {"schedule",
           {{"kind", to_string(t.mix.schedule.kind)}, {"gamma", t.mix.schedule.gamma}, {"tau", t.mix.schedule.tau}}}}}}},
      {"components", flags_json(c.components)},
  };
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string canon = config_to_json(resolve(config)).dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canon.data(), canon.size())));
  return buf;
}

json ResultRecord::to_json(bool include_wall_time) const {
  json steps_j = json::array();
  for (const auto& s : steps) steps_j.push_back(step_json(s));
  json j = {{"name", name},
            {"cell", cell},
            {"config_hash", config_hash},
            {"status", status},
            {"error", error},
            {"seed", seed},
            {"class_order", class_order},
            {"steps", steps_j},
            {"average_cnn", average_cnn},
            {"last_cnn", last_cnn},
            {"average_nme", average_nme},
            {"last_nme", last_nme},
            {"final_alignment", final_alignment},
            {"components", flags_json(components)},
            {"config", config}};
  if (include_wall_time) j["wall_time"] = wall_time;
  return j;
}

ResultRecord ResultRecord::from_json(const json& j) {
  try {
    ResultRecord r;
    r.name = j.at("name").get<std::string>();
    r.cell = j.value("cell", std::string{});
    r.config_hash = j.at("config_hash").get<std::string>();
    r.status = j.value("status", std::string{"ok"});
    r.error = j.value("error", std::string{});
    r.seed = j.at("seed").get<std::uint64_t>();
    r.class_order = j.at("class_order").get<std::vector<int>>();
    for (const json& s : j.at("steps")) {
      StepResult step;
      step.task = s.at("task").get<int>();
      step.seen_classes = s.at("seen_classes").get<int>();
      step.cnn_accuracy = s.at("cnn_accuracy").get<double>();
      step.nme_accuracy = s.at("nme_accuracy").get<double>();
      step.agreement = s.value("agreement", 0.0);
      step.final_alignment = s.value("final_alignment", 0.0);
      step.flagged_classes = s.value("flagged_classes", std::vector<int>{});
      r.steps.push_back(step);
    }
    r.average_cnn = j.at("average_cnn").get<double>();
    r.last_cnn = j.at("last_cnn").get<double>();
    r.average_nme = j.at("average_nme").get<double>();
    r.last_nme = j.at("last_nme").get<double>();
    r.final_alignment = j.value("final_alignment", 0.0);
    r.wall_time = j.value("wall_time", 0.0);
    r.components = flags_from(j.at("components"));
    r.config = j.value("config", json::object());
    return r;
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed result record: ") + e.what());
  }
}

fs::path output_root(const ExperimentConfig& config) {
  if (const char* env = std::getenv("VMFCIL_OUTPUT_ROOT"); env && *env) return env;
  return config.output_dir;
}

ResultRecord run(const ExperimentConfig& input, const std::string& cell) {
  const auto start = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = resolve(input);
  cfg.validate();

  ResultRecord rec;
  rec.name = cfg.name;
  rec.cell = cell;
  rec.config_hash = config_hash(cfg);
  rec.seed = cfg.seed;
  rec.class_order = cfg.benchmark.class_order;
  rec.components = cfg.components;
  rec.config = config_to_json(cfg);

  const fs::path root = output_root(cfg);
  const fs::path dir = root / (sanitize(cfg.name) + "-" + rec.config_hash);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  write_text(dir / "config.json", rec.config.dump(2) + "\n");

  auto finish = [&] {
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    summarize(rec);
    write_text(dir / "record.json", rec.to_json().dump(2) + "\n");
    append_line(root / "results.jsonl", rec.to_json().dump());
  };

  std::ofstream epochs(dir / "epochs.jsonl");
  std::ofstream steps(dir / "steps.csv");
  steps << "task,seen_classes,cnn_accuracy,nme_accuracy,agreement,final_alignment\n";
  try {
    auto [train, test] = cfg.dataset.kind == DatasetConfig::Kind::Synthetic
                             ? make_synthetic_dataset(cfg.dataset.synthetic)
                             : load_manifest_dataset(cfg.dataset.manifest);
    if (train.num_classes != cfg.benchmark.total_classes)
      throw ConfigError("dataset has " + std::to_string(train.num_classes) + " classes but benchmark.total_classes is " +
                        std::to_string(cfg.benchmark.total_classes));
    if (train.samples.empty()) throw ConfigError("dataset has no training samples");
    ModelOptions model = cfg.model;
    model.extractor.in_channels = train.samples.front().image.channels;
    const TaskStream stream = build_task_stream(std::make_shared<const DatasetSource>(std::move(train)),
                                                std::make_shared<const DatasetSource>(std::move(test)), cfg.benchmark);

    StreamHooks hooks;
    hooks.on_epoch = [&](const EpochLog& e) {
      epochs << json{{"task", e.task},         {"epoch", e.epoch},       {"lr", e.lr},
                     {"loss", e.loss},         {"loss_nll", e.loss_nll}, {"loss_aux", e.loss_aux},
                     {"loss_ma", e.loss_ma},   {"kappa", e.kappa},       {"alignment", e.alignment}}
                    .dump()
             << '\n';
      epochs.flush();
    };
    hooks.on_task_end = [&](const LearnerState& state, const StepResult& s) {
      rec.steps.push_back(s);
      steps << s.task << ',' << s.seen_classes << ',' << fmt(s.cnn_accuracy) << ',' << fmt(s.nme_accuracy) << ','
            << fmt(s.agreement) << ',' << fmt(s.final_alignment) << '\n';
      steps.flush();
      if (cfg.save_checkpoints) save_checkpoint(dir / "checkpoints", s.task, state);
    };
    run_stream(stream, cfg.benchmark.memory, model, cfg.train, cfg.components, hooks);
  } catch (const std::exception& e) {
    rec.status = "failed";
    rec.error = e.what();
    finish();
    throw;
  }
  finish();
  return rec;
}

std::vector<std::string> ablation_axes() { return {"components", "mix", "gamma_tau", "eta_ma", "schedule", "paired_seeds"}; }

std::vector<std::pair<std::string, ExperimentConfig>> ablation_cells(const ExperimentConfig& base, const std::string& axis) {
  std::vector<std::pair<std::string, ExperimentConfig>> cells;
  auto add = [&](const std::string& label, ExperimentConfig c) {
    c.name = base.name + "-" + axis + "-" + label;
    cells.emplace_back(label, std::move(c));
  };
  if (axis == "components") {
    const std::pair<const char*, ComponentFlags> rows[] = {
        {"none", {false, false, false, false, false}},
        {"aux_wa", {false, false, false, true, true}},
        {"aux_wa_mcmix", {true, false, false, true, true}},
        {"aux_wa_mcmix_vmf", {true, true, false, true, true}},
        {"full", {true, true, true, true, true}},
    };
    for (const auto& [label, flags] : rows) {
      ExperimentConfig c = base;
      c.components = flags;
      add(label, c);
    }
  } else if (axis == "mix") {
    for (const char* m : {"none", "mixup", "cutmix", "cutmix-w", "mcmix"}) {
      ExperimentConfig c = base;
      c.components.mcmix = true;
      c.train.mix.method = parse_mix_method(m);
      add(m, c);
    }
  } else if (axis == "gamma_tau") {
    for (double g : {0.01, 0.1, 0.5, 1.0, 10.0})
      for (double t : {0.1, 0.5, 0.6, 1.0}) {
        ExperimentConfig c = base;
        c.train.mix.schedule.gamma = g;
        c.train.mix.schedule.tau = t;
        add("g" + fmt(g) + "_t" + fmt(t), c);
      }
  } else if (axis == "eta_ma") {
    for (double eta : {0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0}) {
      ExperimentConfig c = base;
      c.train.eta_ma = eta;
      add("eta" + fmt(eta), c);
    }
  } else if (axis == "schedule") {
    for (const char* k : {"sigmoid", "linear", "step"}) {
      ExperimentConfig c = base;
      c.train.mix.schedule.kind = parse_schedule_kind(k);
      add(k, c);
    }
  } else if (axis == "paired_seeds") {
    for (std::uint64_t k = 0; k < 3; ++k) {
      ExperimentConfig off = base, on = base;
      off.seed = on.seed = base.seed + k;
      off.benchmark.class_order.clear();
      on.benchmark.class_order.clear();
      off.components = {false, false, false, false, false};
      on.components = {true, true, true, true, true};
      add("off_s" + std::to_string(off.seed), off);
      add("full_s" + std::to_string(on.seed), on);
    }
  } else {
    std::string known;
    for (const auto& a : ablation_axes()) known += (known.empty() ? "" : ", ") + a;
    throw UsageError("unknown ablation axis '" + axis + "' (expected one of: " + known + ")");
  }
  return cells;
}

std::vector<ResultRecord> ablate(const ExperimentConfig& base, const std::string& axis) {
  const auto cells = ablation_cells(base, axis);
  std::vector<ResultRecord> records;
  for (const auto& [label, cfg] : cells) records.push_back(run(cfg, label));

  std::ostringstream csv;
  csv << "cell,seed,config_hash,average_cnn,last_cnn,average_nme,last_nme,final_alignment,delta_average_cnn,delta_last_cnn\n";
  for (const ResultRecord& r : records) {
    const ResultRecord* ref = &r;
    for (const ResultRecord& q : records)
      if (q.seed == r.seed) {
        ref = &q;
        break;
      }
    csv << r.cell << ',' << r.seed << ',' << r.config_hash << ',' << fmt(r.average_cnn) << ',' << fmt(r.last_cnn) << ','
        << fmt(r.average_nme) << ',' << fmt(r.last_nme) << ',' << fmt(r.final_alignment) << ','
        << fmt(r.average_cnn - ref->average_cnn) << ',' << fmt(r.last_cnn - ref->last_cnn) << '\n';
  }
  const fs::path root = output_root(resolve(base));
  fs::create_directories(root);
  write_text(root / (sanitize(base.name) + "-" + axis + "-summary.csv"), csv.str());
  return records;
}

std::vector<fs::path> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<fs::path> out;
  if (::glob(pattern.c_str(), 0, nullptr, &g) == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  globfree(&g);
  return out;
}

std::vector<ResultRecord> load_records(const std::vector<fs::path>& files) {
  std::vector<ResultRecord> out;
  for (const fs::path& f : files) {
    std::ifstream in(f);
    if (!in) throw IoError("cannot read " + f.string());
    try {
      if (f.extension() == ".jsonl") {
        std::string line;
        while (std::getline(in, line))
          if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(ResultRecord::from_json(json::parse(line)));
      } else {
        out.push_back(ResultRecord::from_json(json::parse(in)));
      }
    } catch (const json::parse_error& e) {
      throw UsageError("cannot parse records in " + f.string() + ": " + e.what());
    }
  }
  return out;
}

void plot_records(const std::vector<ResultRecord>& records, const fs::path& out) {
  if (records.empty()) throw UsageError("plot needs at least one result record");
  fs::create_directories(out);
  std::ostringstream csv;
  csv << "record,cell,config_hash,step,seen_classes,cnn,nme\n";
  int max_steps = 1;
  for (const auto& r : records) max_steps = std::max(max_steps, static_cast<int>(r.steps.size()));
  Chart chart(640, 400, 1.0, std::max(2.0, static_cast<double>(max_steps)), 0.0, 100.0);
  chart.grid(std::max(1, max_steps - 1), 10);
  for (std::size_t k = 0; k < records.size(); ++k) {
    const ResultRecord& r = records[k];
    std::vector<double> xs, cnn, nme;
    for (const StepResult& s : r.steps) {
      csv << r.name << ',' << r.cell << ',' << r.config_hash << ',' << s.task + 1 << ',' << s.seen_classes << ','
          << fmt(s.cnn_accuracy) << ',' << fmt(s.nme_accuracy) << '\n';
      xs.push_back(s.task + 1);
      cnn.push_back(s.cnn_accuracy);
      nme.push_back(s.nme_accuracy);
    }
    const Color color = Chart::palette(static_cast<int>(k));
    chart.line(xs, cnn, color, 2);
    chart.points(xs, nme, color, 2);
  }
  write_text(out / "accuracy.csv", csv.str());
  chart.save(out / "accuracy.png");
}

void plot_schedule(const SchedulePlotSpec& spec, const fs::path& out) {
  const MixSchedule& s = spec.schedule;
  if (s.total_epochs <= 0) throw UsageError("schedule plot needs a positive epoch count");
  if (spec.weights.empty()) throw UsageError("schedule plot needs at least one class weight");
  fs::create_directories(out);
  Rng rng = make_rng(spec.seed, 21);
  const int epochs = s.total_epochs;

  std::ostringstream curve, samples;
  curve << "epoch,sigma";
  for (std::size_t k = 0; k < spec.weights.size(); ++k) curve << ",mu_hat_w" << fmt(spec.weights[k]);
  curve << '\n';
  samples << "epoch,weight,lambda,lambda_hat\n";

  Chart chart(720, 420, 0.0, epochs, 0.0, 1.5);
  chart.grid(10, 6);
  chart.vline(s.center(), {0.6, 0.6, 0.6});
  std::vector<double> xs;
  std::vector<std::vector<double>> mu(spec.weights.size());
  std::vector<std::vector<double>> sx(spec.weights.size()), sy(spec.weights.size());
  for (int e = 0; e <= epochs; ++e) {
    const double sigma = schedule_value(s, e);
    xs.push_back(e);
    curve << e << ',' << fmt(sigma);
    for (std::size_t k = 0; k < spec.weights.size(); ++k) {
      // E[lambda] = 1/2 under a symmetric Beta, so the mean of lambda_hat is (w sigma + 1)/2.
      const double m = lambda_hat(0.5, spec.weights[k], sigma);
      mu[k].push_back(m);
      curve << ',' << fmt(m);
      for (int n = 0; n < spec.samples_per_epoch; ++n) {
        const double lam = sample_lambda(spec.alpha, rng);
        const double lh = lambda_hat(lam, spec.weights[k], sigma);
        samples << e << ',' << fmt(spec.weights[k]) << ',' << fmt(lam) << ',' << fmt(lh) << '\n';
        sx[k].push_back(e);
        sy[k].push_back(lh);
      }
    }
    curve << '\n';
  }
  for (std::size_t k = 0; k < spec.weights.size(); ++k) {
    Color c = Chart::palette(static_cast<int>(k));
    const Color faded{0.55 + 0.45 * c[0], 0.55 + 0.45 * c[1], 0.55 + 0.45 * c[2]};
    chart.points(sx[k], sy[k], faded, 1);
  }
  for (std::size_t k = 0; k < spec.weights.size(); ++k) chart.line(xs, mu[k], Chart::palette(static_cast<int>(k)), 3);
  write_text(out / "schedule.csv", curve.str());
  write_text(out / "schedule_samples.csv", samples.str());
  chart.save(out / "schedule.png");
}

}  // namespace vmfcil
