#ifndef VMFCIL_TRAINING_HPP_
#define VMFCIL_TRAINING_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vmfcil/backbone.hpp"
#include "vmfcil/data_stream.hpp"
#include "vmfcil/mcmix.hpp"
#include "vmfcil/memory.hpp"
#include "vmfcil/types.hpp"

namespace vmfcil {

/// Which parts of the method are active. `matching` requires `vmf`.
struct ComponentFlags {
  bool mcmix = true;
  bool vmf = true;
  bool matching = true;
  bool aux = true;
  bool weight_align = true;

  void validate() const;
  bool operator==(const ComponentFlags&) const = default;
};

/// Aux-head targets under mixing: the dominant pair member (larger
/// lambda_hat) or always the anchor sample x_i.
enum class AuxLabelMode { Dominant, Anchor };

struct TrainConfig {
  int epochs = 240;
  int batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  std::vector<int> decay_epochs{100, 170, 210};
  double decay_factor = 0.1;
  int warmup_epochs = 10;
  double eta_aux = 1.0;
  double eta_ma = 2.0;
  MixOptions mix;  // schedule.total_epochs is forced to `epochs`
  AuxLabelMode aux_labels = AuxLabelMode::Dominant;
  bool matching_stop_gradient = false;
  /// The matching term alone is minimized by kappa -> 0, so by default only
  /// the NLL moves kappa.
  bool matching_updates_kappa = false;
  /// Rescales the joint gradient to at most this L2 norm; 0 disables.
  double grad_clip = 0.0;
  SelectionStrategy selection = SelectionStrategy::Herding;
  std::uint64_t seed = 0;

  /// Decay epochs strictly increasing and < E; warmup < first decay epoch.
  void validate() const;
  /// Linear warm-up over the first `warmup_epochs` epochs, then step decay.
  double lr_at(int epoch) const;
};

struct EpochLog {
  int task = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double loss_nll = 0.0;
  double loss_aux = 0.0;
  double loss_ma = 0.0;
  double kappa = 0.0;
  double alignment = 0.0;  // mean <mu_i, mu~_i> over batches
};

struct StepResult {
  int task = 0;
  int seen_classes = 0;
  double cnn_accuracy = 0.0;  // percent
  double nme_accuracy = 0.0;  // percent
  double agreement = 0.0;     // percent of test samples where CNN and NME agree
  double final_alignment = 0.0;
  std::vector<int> flagged_classes;  // excluded from NME prototypes
};

struct StepMetrics {
  std::vector<StepResult> steps;
  std::vector<EpochLog> epochs;

  double average_cnn() const;
  double last_cnn() const;
  double average_nme() const;
  double last_nme() const;
};

/// Unit class-mean feature directions keyed by head index.
struct Prototypes {
  std::vector<int> heads;
  Mat directions;
  std::vector<int> flagged;
};

struct LearnerState {
  Model model;
  ExemplarMemory memory;
  Prototypes prototypes;
  int tasks_done = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains the current model on D_t u M_t for one task, then applies weight
/// alignment, updates the exemplar memory and refreshes the prototypes.
/// Expects expand() to have run already for t >= 2.
void train_task(LearnerState& state, const TaskStream& stream, int task_index, const TrainConfig& config,
                const ComponentFlags& flags, const EpochCallback& on_epoch = {}, std::vector<EpochLog>* log = nullptr);

/// Scales the raw new-class rows so their mean norm equals the old rows' mean
/// norm. Returns the applied factor.
double weight_align(MainHead& head, std::span<const int> old_rows, std::span<const int> new_rows);

/// Head index with the highest classifier score; ties to the lowest index.
std::vector<int> predict_cnn(const Model& model, std::span<const Image> images);
std::vector<int> predict_cnn(const Model& model, const Mat& features);

/// normalize(mean of unit features); NumericError when the mean vanishes.
RowVec class_prototype(const Mat& unit_features);

/// Prototypes of every class stored in memory, from exemplar features under
/// the current backbone. Empty or degenerate classes are skipped and flagged.
Prototypes compute_prototypes(const ExemplarMemory& memory, const DynamicBackbone& backbone, const TaskStream& stream);

/// Highest-cosine prototype per image. UsageError on an empty prototype set.
std::vector<int> predict_nme(const Prototypes& prototypes, std::span<const Image> images, const DynamicBackbone& backbone);
std::vector<int> predict_nme(const Prototypes& prototypes, const Mat& features);

double average_accuracy(std::span<const double> per_step);

/// Test accuracy over every class seen up to `task_index`.
StepResult evaluate(const LearnerState& state, const TaskStream& stream, int task_index);

struct StreamHooks {
  EpochCallback on_epoch;
  std::function<void(const LearnerState&, const StepResult&)> on_task_end;
};

struct StreamRun {
  LearnerState state;
  StepMetrics metrics;
};

/// Full class-incremental pass: expand, train, align, remember, evaluate for
/// every task of the stream.
StreamRun run_stream(const TaskStream& stream, const MemoryBudget& budget, const ModelOptions& model_options,
                     const TrainConfig& config, const ComponentFlags& flags, const StreamHooks& hooks = {});

}  // namespace vmfcil

#endif  // VMFCIL_TRAINING_HPP_
