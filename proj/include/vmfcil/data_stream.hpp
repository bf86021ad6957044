#ifndef VMFCIL_DATA_STREAM_HPP_
#define VMFCIL_DATA_STREAM_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vmfcil/types.hpp"

namespace vmfcil {

enum class Split { Train, Test };
enum class Protocol { B0, B50 };

struct Sample {
  Image image;
  int label = 0;
};

struct DatasetSource {
  std::string name;
  int num_classes = 0;
  Split split = Split::Train;
  std::vector<Sample> samples;

  /// Labels in range, images at least 8x8 with a consistent shape.
  void validate() const;
};

struct MemoryBudget {
  enum class Policy { Total, PerClass };
  Policy policy = Policy::Total;
  int amount = 0;  // K for Total, m for PerClass
};

struct BenchmarkSpec {
  Protocol protocol = Protocol::B0;
  int total_classes = 0;
  int steps = 0;
  std::vector<int> class_order;
  MemoryBudget memory;

  /// Classes in the first task: C/T for B0, C/2 for B50.
  int base_classes() const;
  /// T for B0, 1 + T for B50.
  int num_tasks() const;
  /// Throws ConfigError naming (C, T) when the split does not divide evenly,
  /// or when class_order is not a permutation of [0, C).
  void validate() const;
};

struct Task {
  int index = 0;                   // 0-based; step t in 1-based numbering is index + 1
  std::vector<int> new_classes;    // in class-order sequence
  std::vector<int> train_indices;  // into TaskStream::train
  std::vector<int> test_indices;   // into TaskStream::test
};

/// Immutable after construction. Head index k of the classifier corresponds
/// to class_order[k], so classes seen up to task t occupy [0, cumulative_classes[t]).
struct TaskStream {
  std::shared_ptr<const DatasetSource> train;
  std::shared_ptr<const DatasetSource> test;
  std::vector<int> class_order;
  std::vector<Task> tasks;
  std::vector<int> cumulative_classes;
  std::vector<int> head_of_class;  // class id -> head index

  int head_index(int class_id) const { return head_of_class.at(static_cast<std::size_t>(class_id)); }
  int classes_before(int task) const { return task == 0 ? 0 : cumulative_classes[static_cast<std::size_t>(task) - 1]; }
};

TaskStream build_task_stream(std::shared_ptr<const DatasetSource> train, std::shared_ptr<const DatasetSource> test,
                             const BenchmarkSpec& spec);

/// Auxiliary-head targets: every old class maps to 0, the k-th new class (in
/// the given order) to k. Requires a nonempty old set; a label in neither set
/// is an InvariantViolation.
std::vector<int> remap_aux_labels(std::span<const int> labels, std::span<const int> old_classes,
                                  std::span<const int> new_classes);

/// Uniformly random permutation of [0, C) drawn from `seed`.
std::vector<int> seeded_class_order(int num_classes, std::uint64_t seed);

struct SyntheticSpec {
  int num_classes = 10;
  int height = 12;
  int width = 12;
  int channels = 3;
  int train_per_class = 40;
  int test_per_class = 20;
  double noise = 0.08;   // per-pixel Gaussian noise std
  double jitter = 0.12;  // blob-center jitter as a fraction of the image size
  std::uint64_t seed = 7;
};

/// Per-class Gaussian-blob images: each class owns a blob position, width
/// and color; samples jitter the blob and add pixel noise.
std::pair<DatasetSource, DatasetSource> make_synthetic_dataset(const SyntheticSpec& spec);

/// Reads `manifest.csv` (header path,label,split; paths relative to the
/// manifest's directory) and decodes the referenced PNG files.
std::pair<DatasetSource, DatasetSource> load_manifest_dataset(const std::filesystem::path& manifest);

}  // namespace vmfcil

#endif  // VMFCIL_DATA_STREAM_HPP_
