#include "vmfcil/data_stream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "vmfcil/errors.hpp"
#include "vmfcil/png_io.hpp"

namespace vmfcil {

void DatasetSource::validate() const {
  if (num_classes <= 0) throw ConfigError("dataset '" + name + "' has no classes");
  if (samples.empty()) throw ConfigError("dataset '" + name + "' is empty");
  const Image& first = samples.front().image;
  for (const Sample& s : samples) {
    if (s.label < 0 || s.label >= num_classes)
      throw ConfigError("dataset '" + name + "': label " + std::to_string(s.label) + " outside [0, C)");
    if (s.image.height < 8 || s.image.width < 8) throw ConfigError("dataset '" + name + "': images must be at least 8x8");
    if (s.image.height != first.height || s.image.width != first.width || s.image.channels != first.channels)
      throw ConfigError("dataset '" + name + "': inconsistent image shapes");
  }
}

int BenchmarkSpec::base_classes() const {
  return protocol == Protocol::B0 ? total_classes / steps : total_classes / 2;
}

int BenchmarkSpec::num_tasks() const { return protocol == Protocol::B0 ? steps : steps + 1; }

void BenchmarkSpec::validate() const {
  const std::string pair = "(C=" + std::to_string(total_classes) + ", T=" + std::to_string(steps) + ")";
  if (total_classes <= 0 || steps <= 0) throw ConfigError("benchmark needs positive C and T " + pair);
  if (protocol == Protocol::B0 && total_classes % steps != 0)
    throw ConfigError("B0 protocol requires C mod T = 0 " + pair);
  if (protocol == Protocol::B50 && (total_classes % 2 != 0 || (total_classes / 2) % steps != 0))
    throw ConfigError("B50 protocol requires (C/2) mod T = 0 " + pair);
  if (static_cast<int>(class_order.size()) != total_classes) throw ConfigError("class_order must list all C classes " + pair);
  std::vector<int> sorted = class_order;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < total_classes; ++i)
    if (sorted[static_cast<std::size_t>(i)] != i) throw ConfigError("class_order is not a permutation of [0, C)");
  if (memory.amount < 0) throw ConfigError("memory budget must be nonnegative");
}

TaskStream build_task_stream(std::shared_ptr<const DatasetSource> train, std::shared_ptr<const DatasetSource> test,
                             const BenchmarkSpec& spec) {
  spec.validate();
  if (!train || !test) throw ConfigError("task stream needs train and test sources");
  train->validate();
  test->validate();
  if (train->num_classes != spec.total_classes || test->num_classes != spec.total_classes)
    throw ConfigError("dataset class count does not match benchmark C");
  std::set<int> train_classes, test_classes;
  for (const auto& s : train->samples) train_classes.insert(s.label);
  for (const auto& s : test->samples) test_classes.insert(s.label);
  if (static_cast<int>(train_classes.size()) != spec.total_classes || train_classes != test_classes)
    throw ConfigError("train and test splits must cover the same C classes");

  TaskStream stream;
  stream.train = std::move(train);
  stream.test = std::move(test);
  stream.class_order = spec.class_order;
  stream.head_of_class.assign(static_cast<std::size_t>(spec.total_classes), -1);
  for (int k = 0; k < spec.total_classes; ++k) stream.head_of_class[static_cast<std::size_t>(spec.class_order[static_cast<std::size_t>(k)])] = k;

  std::vector<int> sizes;
  if (spec.protocol == Protocol::B0) {
    sizes.assign(static_cast<std::size_t>(spec.steps), spec.total_classes / spec.steps);
  } else {
    sizes.push_back(spec.total_classes / 2);
    sizes.insert(sizes.end(), static_cast<std::size_t>(spec.steps), (spec.total_classes / 2) / spec.steps);
  }

  std::vector<int> task_of_head(static_cast<std::size_t>(spec.total_classes));
  int next = 0;
  for (std::size_t t = 0; t < sizes.size(); ++t) {
    Task task;
    task.index = static_cast<int>(t);
    for (int k = 0; k < sizes[t]; ++k) {
      task_of_head[static_cast<std::size_t>(next)] = static_cast<int>(t);
      task.new_classes.push_back(spec.class_order[static_cast<std::size_t>(next++)]);
    }
    stream.tasks.push_back(std::move(task));
    stream.cumulative_classes.push_back(next);
  }
  for (std::size_t i = 0; i < stream.train->samples.size(); ++i) {
    const int head = stream.head_of_class[static_cast<std::size_t>(stream.train->samples[i].label)];
    stream.tasks[static_cast<std::size_t>(task_of_head[static_cast<std::size_t>(head)])].train_indices.push_back(static_cast<int>(i));
  }
  for (std::size_t i = 0; i < stream.test->samples.size(); ++i) {
    const int head = stream.head_of_class[static_cast<std::size_t>(stream.test->samples[i].label)];
    stream.tasks[static_cast<std::size_t>(task_of_head[static_cast<std::size_t>(head)])].test_indices.push_back(static_cast<int>(i));
  }
  return stream;
}

std::vector<int> remap_aux_labels(std::span<const int> labels, std::span<const int> old_classes,
                                  std::span<const int> new_classes) {
  if (old_classes.empty()) throw PreconditionError("auxiliary labels are undefined at the first task");
  std::vector<int> out;
  out.reserve(labels.size());
  for (int y : labels) {
    if (std::find(old_classes.begin(), old_classes.end(), y) != old_classes.end()) {
      out.push_back(0);
      continue;
    }
    const auto it = std::find(new_classes.begin(), new_classes.end(), y);
    if (it == new_classes.end()) throw InvariantViolation("label " + std::to_string(y) + " is not a seen class");
    out.push_back(1 + static_cast<int>(it - new_classes.begin()));
  }
  return out;
}

std::vector<int> seeded_class_order(int num_classes, std::uint64_t seed) {
  std::vector<int> order(static_cast<std::size_t>(num_classes));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 0xC1A55);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::pair<DatasetSource, DatasetSource> make_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.num_classes <= 0 || spec.height < 8 || spec.width < 8 || spec.channels <= 0)
    throw ConfigError("synthetic dataset needs C > 0 and images at least 8x8");
  Rng rng = make_rng(spec.seed, 0x5EED);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  struct Blob {
    double cy, cx, sigma;
    std::vector<double> color;
  };
  std::vector<Blob> blobs;
  const double side = std::min(spec.height, spec.width);
  for (int c = 0; c < spec.num_classes; ++c) {
    Blob b;
    b.cy = (0.2 + 0.6 * unit(rng)) * spec.height;
    b.cx = (0.2 + 0.6 * unit(rng)) * spec.width;
    b.sigma = (0.1 + 0.12 * unit(rng)) * side;
    for (int ch = 0; ch < spec.channels; ++ch) b.color.push_back(0.25 + 0.75 * unit(rng));
    blobs.push_back(std::move(b));
  }

  auto render = [&](const Blob& b) {
    Image img(spec.height, spec.width, spec.channels);
    const double cy = b.cy + spec.jitter * spec.height * gauss(rng);
    const double cx = b.cx + spec.jitter * spec.width * gauss(rng);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        const double g = std::exp(-r2 / (2.0 * b.sigma * b.sigma));
        for (int ch = 0; ch < spec.channels; ++ch)
          img.at(y, x, ch) = std::clamp(0.1 + b.color[static_cast<std::size_t>(ch)] * g + spec.noise * gauss(rng), 0.0, 1.0);
      }
    }
    return img;
  };

  DatasetSource train{"synthetic", spec.num_classes, Split::Train, {}};
  DatasetSource test{"synthetic", spec.num_classes, Split::Test, {}};
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int i = 0; i < spec.train_per_class; ++i) train.samples.push_back({render(blobs[static_cast<std::size_t>(c)]), c});
    for (int i = 0; i < spec.test_per_class; ++i) test.samples.push_back({render(blobs[static_cast<std::size_t>(c)]), c});
  }
  return {std::move(train), std::move(test)};
}

std::pair<DatasetSource, DatasetSource> load_manifest_dataset(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  const auto root = manifest.parent_path();
  const std::string name = root.filename().string();
  DatasetSource train{name, 0, Split::Train, {}};
  DatasetSource test{name, 0, Split::Test, {}};
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty manifest " + manifest.string());
  if (line.rfind("path,label,split", 0) != 0) throw ConfigError("manifest header must be path,label,split");
  int max_label = -1;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string path, label, split;
    if (!std::getline(ss, path, ',') || !std::getline(ss, label, ',') || !std::getline(ss, split, ','))
      throw ConfigError("manifest line " + std::to_string(line_no) + " needs three columns");
    Sample s;
    try {
      s.label = std::stoi(label);
    } catch (const std::exception&) {
      throw ConfigError("manifest line " + std::to_string(line_no) + ": bad label '" + label + "'");
    }
    s.image = read_png(root / path);
    max_label = std::max(max_label, s.label);
    if (split == "train") {
      train.samples.push_back(std::move(s));
    } else if (split == "test") {
      test.samples.push_back(std::move(s));
    } else {
      throw ConfigError("manifest line " + std::to_string(line_no) + ": split must be train or test");
    }
  }
  train.num_classes = test.num_classes = max_label + 1;
  train.validate();
  test.validate();
  return {std::move(train), std::move(test)};
}

}  // namespace vmfcil
