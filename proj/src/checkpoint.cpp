#include "vmfcil/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "vmfcil/errors.hpp"

namespace vmfcil {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

struct BlobWriter {
  std::vector<double> data;
  json tensors = json::array();

  void add(const Param& p) {
    tensors.push_back({{"name", p.name}, {"rows", p.rows}, {"cols", p.cols}, {"offset", data.size()}, {"decay", p.decay}});
    data.insert(data.end(), p.value.data(), p.value.data() + p.value.size());
  }
};

Param read_param(const json& entry, const std::vector<double>& blob) {
  Param p(entry.at("name").get<std::string>(), entry.at("rows").get<int>(), entry.at("cols").get<int>(),
          entry.at("decay").get<bool>());
  const auto offset = entry.at("offset").get<std::size_t>();
  const auto n = static_cast<std::size_t>(p.value.size());
  if (offset + n > blob.size()) throw IoError("checkpoint tensor '" + p.name + "' runs past the blob file");
  std::memcpy(p.value.data(), blob.data() + offset, n * sizeof(double));
  return p;
}

void assign(Param& dst, const Param& src) {
  if (dst.rows != src.rows || dst.cols != src.cols)
    throw IoError("checkpoint tensor '" + src.name + "' has an unexpected shape");
  dst.value = src.value;
}

}  // namespace

fs::path save_checkpoint(const fs::path& root, int task_index, const LearnerState& state) {
  const fs::path dir = root / ("task_" + std::to_string(task_index));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  const Model& model = state.model;
  const ExtractorConfig& ec_cfg = model.backbone.config();
  BlobWriter blobs;
  json extractors = json::array();
  for (const ConvExtractor& ex : model.backbone.extractors()) {
    const std::size_t first = blobs.tensors.size();
    for (const Param* p : ex.params()) blobs.add(*p);
    extractors.push_back({{"first_tensor", first}, {"num_tensors", blobs.tensors.size() - first}});
  }
  blobs.add(model.main.weights);
  json manifest = {
      {"format", "vmfcil-checkpoint"},
      {"version", 1},
      {"task", task_index},
      {"extractor", {{"in_channels", ec_cfg.in_channels}, {"widths", ec_cfg.widths}, {"feature_dim", ec_cfg.feature_dim}}},
      {"extractors", extractors},
      {"head", {{"kind", model.main.kind == HeadKind::Vmf ? "vmf" : "linear"},
                {"tensor", blobs.tensors.size() - 1},
                {"log_kappa", model.main.log_kappa.value[0]},
                {"kappa", model.main.kappa()}}},
  };
  if (model.aux) {
    blobs.add(model.aux->weights);
    blobs.add(model.aux->bias);
    manifest["aux"] = {{"weights", blobs.tensors.size() - 2}, {"bias", blobs.tensors.size() - 1}};
  }
  json triples = json::array();
  for (const auto& [cls, list] : state.memory.per_class)
    for (std::size_t r = 0; r < list.size(); ++r) triples.push_back({cls, list[r], r});
  manifest["memory"] = {
      {"policy", state.memory.budget.policy == MemoryBudget::Policy::Total ? "total" : "per_class"},
      {"amount", state.memory.budget.amount},
      {"exemplars", triples},
  };
  manifest["tasks_done"] = state.tasks_done;
  manifest["tensors"] = blobs.tensors;

  std::ofstream bin(dir / "blobs.bin", std::ios::binary);
  bin.write(reinterpret_cast<const char*>(blobs.data.data()), static_cast<std::streamsize>(blobs.data.size() * sizeof(double)));
  std::ofstream js(dir / "manifest.json");
  js << manifest.dump(2) << '\n';
  if (!bin || !js) throw IoError("failed writing checkpoint to " + dir.string());
  return dir;
}

LearnerState load_checkpoint(const fs::path& task_dir) {
  std::ifstream js(task_dir / "manifest.json");
  if (!js) throw IoError("missing checkpoint manifest in " + task_dir.string());
  json manifest;
  try {
    manifest = json::parse(js);
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  std::ifstream bin(task_dir / "blobs.bin", std::ios::binary | std::ios::ate);
  if (!bin) throw IoError("missing checkpoint blobs in " + task_dir.string());
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  if (bytes % sizeof(double) != 0) throw IoError("checkpoint blob size is not a multiple of 8");
  std::vector<double> blob(bytes / sizeof(double));
  bin.seekg(0);
  bin.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(bytes));

  try {
    const json& tensors = manifest.at("tensors");
    ExtractorConfig cfg;
    cfg.in_channels = manifest.at("extractor").at("in_channels").get<int>();
    cfg.widths = manifest.at("extractor").at("widths").get<std::vector<int>>();
    cfg.feature_dim = manifest.at("extractor").at("feature_dim").get<int>();

    Model model{DynamicBackbone(cfg), MainHead{}, std::nullopt, false};
    Rng scratch(0);
    for (const json& ex : manifest.at("extractors")) {
      ConvExtractor built(cfg, scratch);
      auto params = built.params();
      const auto first = ex.at("first_tensor").get<std::size_t>();
      if (ex.at("num_tensors").get<std::size_t>() != params.size()) throw IoError("extractor tensor count mismatch");
      for (std::size_t k = 0; k < params.size(); ++k) assign(*params[k], read_param(tensors.at(first + k), blob));
      model.backbone.append_extractor(std::move(built));
    }
    const json& head = manifest.at("head");
    model.main.kind = head.at("kind").get<std::string>() == "vmf" ? HeadKind::Vmf : HeadKind::Linear;
    model.main.weights = read_param(tensors.at(head.at("tensor").get<std::size_t>()), blob);
    model.main.log_kappa.value[0] = head.at("log_kappa").get<double>();
    if (manifest.contains("aux"))
      model.aux = AuxHead{read_param(tensors.at(manifest["aux"].at("weights").get<std::size_t>()), blob),
                          read_param(tensors.at(manifest["aux"].at("bias").get<std::size_t>()), blob)};

    const json& mem = manifest.at("memory");
    ExemplarMemory memory;
    memory.budget.policy = mem.at("policy").get<std::string>() == "total" ? MemoryBudget::Policy::Total
                                                                          : MemoryBudget::Policy::PerClass;
    memory.budget.amount = mem.at("amount").get<int>();
    for (const json& t : mem.at("exemplars")) {
      auto& list = memory.per_class[t.at(0).get<int>()];
      const auto rank = t.at(2).get<std::size_t>();
      if (list.size() <= rank) list.resize(rank + 1, -1);
      list[rank] = t.at(1).get<int>();
    }
    for (const auto& [cls, list] : memory.per_class)
      for (int idx : list)
        if (idx < 0) throw IoError("checkpoint memory ranks for class " + std::to_string(cls) + " have gaps");
    return LearnerState{std::move(model), std::move(memory), {}, manifest.at("tasks_done").get<int>()};
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint manifest: ") + e.what());
  }
}

}  // namespace vmfcil
