#include "vmfcil/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "vmfcil/errors.hpp"
#include "vmfcil/vmf.hpp"

namespace vmfcil {

void ComponentFlags::validate() const {
  if (matching && !vmf) throw ConfigError("the matching loss requires the vMF classifier");
}

void TrainConfig::validate() const {
  if (epochs <= 0 || batch_size <= 0) throw ConfigError("epochs and batch_size must be positive");
  if (lr < 0.0 || momentum < 0.0 || weight_decay < 0.0) throw ConfigError("lr, momentum and weight decay must be nonnegative");
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] >= epochs) throw ConfigError("decay epochs must be < epochs");
    if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1]) throw ConfigError("decay epochs must be strictly increasing");
  }
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be nonnegative");
  if (!decay_epochs.empty() && warmup_epochs >= decay_epochs.front())
    throw ConfigError("warm-up must end before the first decay epoch");
  if (!(mix.alpha > 0.0)) throw ConfigError("mix alpha must be positive");
  if (!(mix.schedule.gamma > 0.0) || mix.schedule.tau < 0.0 || mix.schedule.tau > 1.0)
    throw ConfigError("schedule needs gamma > 0 and tau in [0, 1]");
  if (eta_aux < 0.0 || eta_ma < 0.0) throw ConfigError("loss weights must be nonnegative");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be nonnegative");
}

double TrainConfig::lr_at(int epoch) const {
  if (epoch < warmup_epochs) return lr * (epoch + 1) / static_cast<double>(warmup_epochs);
  double rate = lr;
  for (int d : decay_epochs)
    if (epoch >= d) rate *= decay_factor;
  return rate;
}

namespace {

double mean_of(const std::vector<StepResult>& steps, double StepResult::*field) {
  if (steps.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : steps) s += r.*field;
  return s / static_cast<double>(steps.size());
}

std::string where(int task, int epoch, int batch) {
  std::ostringstream os;
  os << "task " << task + 1 << ", epoch " << epoch << ", batch " << batch;
  return os.str();
}

void clip_gradients(const std::vector<Param*>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const Param* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm)
    for (Param* p : params) p->grad *= max_norm / norm;
}

void sgd_step(const std::vector<Param*>& params, double lr, double momentum, double weight_decay) {
  for (Param* p : params) {
    if (p->decay && weight_decay > 0.0) p->grad += weight_decay * p->value;
    p->velocity = momentum * p->velocity + p->grad;
    p->value -= lr * p->velocity;
  }
}

Mat softmax(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - mx).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

Mat head_scores(const MainHead& head, const Mat& features) {
  if (head.kind == HeadKind::Linear) return features * head.weights.mat().transpose();
  return head.kappa() * (vmf::normalize_rows(features) * vmf::normalize_rows(head.weights.mat()).transpose());
}

}  // namespace

double StepMetrics::average_cnn() const { return mean_of(steps, &StepResult::cnn_accuracy); }
double StepMetrics::last_cnn() const { return steps.empty() ? 0.0 : steps.back().cnn_accuracy; }
double StepMetrics::average_nme() const { return mean_of(steps, &StepResult::nme_accuracy); }
double StepMetrics::last_nme() const { return steps.empty() ? 0.0 : steps.back().nme_accuracy; }

double weight_align(MainHead& head, std::span<const int> old_rows, std::span<const int> new_rows) {
  if (old_rows.empty() || new_rows.empty()) throw PreconditionError("weight alignment needs old and new classes");
  auto w = head.weights.mat();
  double old_norm = 0.0, new_norm = 0.0;
  for (int r : old_rows) old_norm += w.row(r).norm();
  for (int r : new_rows) new_norm += w.row(r).norm();
  old_norm /= static_cast<double>(old_rows.size());
  new_norm /= static_cast<double>(new_rows.size());
  if (!(old_norm > 0.0) || !(new_norm > 0.0)) throw NumericError("weight alignment found a zero mean row norm");
  const double factor = old_norm / new_norm;
  for (int r : new_rows) w.row(r) *= factor;
  return factor;
}

std::vector<int> predict_cnn(const Model& model, const Mat& features) {
  return vmf::argmax_rows(head_scores(model.main, features));
}

std::vector<int> predict_cnn(const Model& model, std::span<const Image> images) {
  return predict_cnn(model, model.backbone.forward(images));
}

RowVec class_prototype(const Mat& unit_features) {
  if (unit_features.rows() == 0) throw UsageError("prototype of an empty class");
  const RowVec mean = unit_features.colwise().mean();
  const double n = mean.norm();
  if (!(n > 1e-12)) throw NumericError("class mean feature vanishes; prototype undefined");
  return mean / n;
}

Prototypes compute_prototypes(const ExemplarMemory& memory, const DynamicBackbone& backbone, const TaskStream& stream) {
  Prototypes out;
  std::vector<std::pair<int, RowVec>> rows;
  for (const auto& [cls, exemplars] : memory.per_class) {
    const int head = stream.head_index(cls);
    if (exemplars.empty()) {
      out.flagged.push_back(head);
      continue;
    }
    try {
      rows.emplace_back(head, class_prototype(unit_features_of(backbone, *stream.train, exemplars)));
    } catch (const NumericError&) {
      out.flagged.push_back(head);
    }
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  out.directions.resize(static_cast<Eigen::Index>(rows.size()), backbone.feature_dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.heads.push_back(rows[i].first);
    out.directions.row(static_cast<Eigen::Index>(i)) = rows[i].second;
  }
  std::sort(out.flagged.begin(), out.flagged.end());
  return out;
}

std::vector<int> predict_nme(const Prototypes& prototypes, const Mat& features) {
  if (prototypes.heads.empty()) throw UsageError("NME prediction needs at least one prototype");
  const Mat sims = vmf::normalize_rows(features) * prototypes.directions.transpose();
  std::vector<int> out;
  for (int k : vmf::argmax_rows(sims)) out.push_back(prototypes.heads[static_cast<std::size_t>(k)]);
  return out;
}

std::vector<int> predict_nme(const Prototypes& prototypes, std::span<const Image> images, const DynamicBackbone& backbone) {
  if (prototypes.heads.empty()) throw UsageError("NME prediction needs at least one prototype");
  return predict_nme(prototypes, backbone.forward(images));
}

double average_accuracy(std::span<const double> per_step) {
  if (per_step.empty()) throw UsageError("average accuracy of an empty run");
  return std::accumulate(per_step.begin(), per_step.end(), 0.0) / static_cast<double>(per_step.size());
}

void train_task(LearnerState& state, const TaskStream& stream, int task_index, const TrainConfig& config,
                const ComponentFlags& flags, const EpochCallback& on_epoch, std::vector<EpochLog>* log) {
  config.validate();
  flags.validate();
  Model& model = state.model;
  const Task& task = stream.tasks.at(static_cast<std::size_t>(task_index));
  const int n_old = stream.classes_before(task_index);
  const int n_seen = stream.cumulative_classes[static_cast<std::size_t>(task_index)];
  const bool incremental = task_index > 0;
  if (model.main.num_classes() != n_seen) throw UsageError("main head does not cover the seen classes; expand first");
  if (model.backbone.num_extractors() != task_index + 1) throw UsageError("backbone must hold one extractor per task");
  if (incremental && flags.aux && !model.aux) throw UsageError("aux head missing for an incremental task");

  // D_t u M_t as (sample index, head index).
  std::vector<std::pair<int, int>> pool;
  for (int idx : task.train_indices)
    pool.emplace_back(idx, stream.head_index(stream.train->samples[static_cast<std::size_t>(idx)].label));
  for (const auto& [cls, exemplars] : state.memory.per_class)
    for (int idx : exemplars) pool.emplace_back(idx, stream.head_index(cls));
  if (pool.empty()) throw UsageError("task has no training samples");

  std::map<int, int> counts;
  for (const auto& [idx, head] : pool) ++counts[head];
  const ClassWeights weights = class_weights(counts);

  MixOptions mix = config.mix;
  mix.schedule.total_epochs = config.epochs;
  if (!flags.mcmix) mix.method = MixMethod::None;

  std::vector<int> old_heads(static_cast<std::size_t>(n_old)), new_heads(static_cast<std::size_t>(n_seen - n_old));
  std::iota(old_heads.begin(), old_heads.end(), 0);
  std::iota(new_heads.begin(), new_heads.end(), n_old);

  const std::vector<Param*> params = trainable_params(model);
  for (Param* p : params) p->velocity.setZero();
  const std::vector<std::uint64_t> frozen = model.backbone.frozen_checksums();

  Rng shuffle_rng = make_rng(config.seed, 1000 + static_cast<std::uint64_t>(task_index));
  Rng mix_rng = make_rng(config.seed, 2000 + static_cast<std::uint64_t>(task_index));
  const bool use_aux = flags.aux && incremental && config.eta_aux > 0.0;
  const bool use_matching = flags.matching && flags.vmf && config.eta_ma > 0.0;

  model.task_active = true;
  std::vector<std::size_t> order(pool.size());
  std::vector<Image> images;
  std::vector<int> labels;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_at(epoch);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog entry;
    entry.task = task_index;
    entry.epoch = epoch;
    entry.lr = lr;
    int batches = 0;
    double seen_samples = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      images.clear();
      labels.clear();
      for (std::size_t k = start; k < stop; ++k) {
        const auto& [idx, head] = pool[order[k]];
        images.push_back(stream.train->samples[static_cast<std::size_t>(idx)].image);
        labels.push_back(head);
      }
      const MixBatch mb = mix_batch(images, labels, n_seen, static_cast<double>(epoch), weights, mix, incremental, mix_rng);
      const auto batch = static_cast<Eigen::Index>(mb.images.size());

      for (Param* p : params) p->zero_grad();
      ConvExtractor::Cache cache;
      const Mat z = model.backbone.forward(mb.images, &cache);

      Mat dz;
      double nll = 0.0;
      if (flags.vmf) {
        const vmf::LossGrad g = vmf::nll_soft_with_grad(z, model.main.weights.mat(), model.main.log_kappa.value[0], mb.soft_labels);
        nll = g.value;
        dz = g.d_features;
        model.main.weights.grad_mat() += g.d_weights;
        model.main.log_kappa.grad[0] += g.d_log_kappa;
      } else {
        const auto w = model.main.weights.mat();
        const Mat logits = z * w.transpose();
        nll = vmf::nll_soft(logits, mb.soft_labels);
        Mat g = softmax(logits).array().colwise() * mb.soft_labels.rowwise().sum().array();
        g = (g - mb.soft_labels) / static_cast<double>(batch);
        dz = g * w;
        model.main.weights.grad_mat() += g.transpose() * z;
      }

      double aux_loss = 0.0;
      if (use_aux) {
        const std::vector<int>& source = config.aux_labels == AuxLabelMode::Dominant ? mb.dominant_labels : labels;
        const std::vector<int> aux_targets = remap_aux_labels(source, old_heads, new_heads);
        AuxHead& aux = *model.aux;
        Mat logits = z * aux.weights.mat().transpose();
        logits.rowwise() += aux.bias.value.transpose();
        Mat g = softmax(logits);
        for (Eigen::Index r = 0; r < batch; ++r) {
          const int y = aux_targets[static_cast<std::size_t>(r)];
          aux_loss -= std::log(std::max(g(r, y), 1e-300));
          g(r, y) -= 1.0;
        }
        aux_loss /= static_cast<double>(batch);
        g *= config.eta_aux / static_cast<double>(batch);
        dz += g * aux.weights.mat();
        aux.weights.grad_mat() += g.transpose() * z;
        aux.bias.grad += g.colwise().sum().transpose();
      }

      double ma_loss = 0.0;
      if (use_matching) {
        const vmf::LossGrad g = vmf::matching_with_grad(z, mb.dominant_labels, model.main.weights.mat(),
                                                        model.main.log_kappa.value[0], config.matching_stop_gradient);
        ma_loss = g.value;
        dz += config.eta_ma * g.d_features;
        model.main.weights.grad_mat() += config.eta_ma * g.d_weights;
        if (config.matching_updates_kappa) model.main.log_kappa.grad[0] += config.eta_ma * g.d_log_kappa;
      }
      const double alignment = vmf::mean_alignment(z, mb.dominant_labels, model.main.weights.mat());

      const double loss = nll + config.eta_aux * (use_aux ? aux_loss : 0.0) + config.eta_ma * ma_loss;
      if (!std::isfinite(loss)) throw NumericError("non-finite loss at " + where(task_index, epoch, batches));

      model.backbone.backward_newest(cache, dz);
      clip_gradients(params, config.grad_clip);
      sgd_step(params, lr, config.momentum, config.weight_decay);

      const double bsz = static_cast<double>(batch);
      entry.loss += loss * bsz;
      entry.loss_nll += nll * bsz;
      entry.loss_aux += aux_loss * bsz;
      entry.loss_ma += ma_loss * bsz;
      entry.alignment += alignment * bsz;
      seen_samples += bsz;
      ++batches;
    }
    entry.loss /= seen_samples;
    entry.loss_nll /= seen_samples;
    entry.loss_aux /= seen_samples;
    entry.loss_ma /= seen_samples;
    entry.alignment /= seen_samples;
    entry.kappa = model.main.kappa();
    if (model.backbone.frozen_checksums() != frozen)
      throw InvariantViolation("frozen extractor parameters drifted during " + where(task_index, epoch, batches));
    if (log) log->push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  model.task_active = false;

  if (flags.weight_align && incremental) weight_align(model.main, old_heads, new_heads);
  Rng memory_rng = make_rng(config.seed, 4000 + static_cast<std::uint64_t>(task_index));
  update_memory(state.memory, model.backbone, stream, task_index, config.selection, &memory_rng);
  state.prototypes = compute_prototypes(state.memory, model.backbone, stream);
  state.tasks_done = task_index + 1;
}

StepResult evaluate(const LearnerState& state, const TaskStream& stream, int task_index) {
  StepResult out;
  out.task = task_index;
  out.seen_classes = stream.cumulative_classes.at(static_cast<std::size_t>(task_index));
  out.flagged_classes = state.prototypes.flagged;
  std::vector<int> indices;
  for (int t = 0; t <= task_index; ++t) {
    const auto& ti = stream.tasks[static_cast<std::size_t>(t)].test_indices;
    indices.insert(indices.end(), ti.begin(), ti.end());
  }
  if (indices.empty()) return out;
  constexpr std::size_t chunk = 256;
  const bool have_nme = !state.prototypes.heads.empty();
  int cnn_hits = 0, nme_hits = 0, agree = 0;
  std::vector<Image> batch;
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const std::size_t stop = std::min(indices.size(), start + chunk);
    batch.clear();
    for (std::size_t i = start; i < stop; ++i) batch.push_back(stream.test->samples[static_cast<std::size_t>(indices[i])].image);
    const Mat z = state.model.backbone.forward(batch);
    const std::vector<int> cnn = predict_cnn(state.model, z);
    std::vector<int> nme;
    if (have_nme) nme = predict_nme(state.prototypes, z);
    for (std::size_t i = start; i < stop; ++i) {
      const int truth = stream.head_index(stream.test->samples[static_cast<std::size_t>(indices[i])].label);
      const std::size_t k = i - start;
      cnn_hits += cnn[k] == truth;
      if (have_nme) {
        nme_hits += nme[k] == truth;
        agree += nme[k] == cnn[k];
      }
    }
  }
  const double total = static_cast<double>(indices.size());
  out.cnn_accuracy = 100.0 * cnn_hits / total;
  out.nme_accuracy = 100.0 * nme_hits / total;
  out.agreement = 100.0 * agree / total;
  return out;
}

StreamRun run_stream(const TaskStream& stream, const MemoryBudget& budget, const ModelOptions& model_options,
                     const TrainConfig& config, const ComponentFlags& flags, const StreamHooks& hooks) {
  config.validate();
  flags.validate();
  ModelOptions options = model_options;
  options.head = flags.vmf ? HeadKind::Vmf : HeadKind::Linear;
  Rng init_rng = make_rng(config.seed, 3000);
  StreamRun run{LearnerState{make_model(options, stream.cumulative_classes.front(), init_rng), ExemplarMemory{budget, {}}, {}, 0},
                {}};
  for (int t = 0; t < static_cast<int>(stream.tasks.size()); ++t) {
    if (t > 0) {
      Rng grow_rng = make_rng(config.seed, 3000 + static_cast<std::uint64_t>(t));
      expand(run.state.model, static_cast<int>(stream.tasks[static_cast<std::size_t>(t)].new_classes.size()), grow_rng);
    }
    const std::size_t first_log = run.metrics.epochs.size();
    train_task(run.state, stream, t, config, flags, hooks.on_epoch, &run.metrics.epochs);
    StepResult step = evaluate(run.state, stream, t);
    if (run.metrics.epochs.size() > first_log) step.final_alignment = run.metrics.epochs.back().alignment;
    run.metrics.steps.push_back(step);
    if (hooks.on_task_end) hooks.on_task_end(run.state, step);
  }
  return run;
}

}  // namespace vmfcil
