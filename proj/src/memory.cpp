#include "vmfcil/memory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vmfcil/errors.hpp"
#include "vmfcil/vmf.hpp"

namespace vmfcil {

int ExemplarMemory::total() const {
  int n = 0;
  for (const auto& [cls, list] : per_class) n += static_cast<int>(list.size());
  return n;
}

int ExemplarMemory::quota(int seen_classes) const {
  if (budget.policy == MemoryBudget::Policy::PerClass) return budget.amount;
  return seen_classes > 0 ? budget.amount / seen_classes : 0;
}

std::vector<int> herding_select(const Mat& unit_features, int m) {
  const Eigen::Index n = unit_features.rows();
  if (n < 1) throw PreconditionError("herding needs at least one feature");
  for (Eigen::Index r = 0; r < n; ++r) {
    const double norm = unit_features.row(r).norm();
    if (!(norm > 1e-12)) throw InvariantViolation("herding received a zero-norm feature");
    if (std::abs(norm - 1.0) > 1e-6) throw PreconditionError("herding features must be L2-normalized");
  }
  std::vector<int> picked;
  if (m <= 0) return picked;
  const auto count = static_cast<Eigen::Index>(std::min<Eigen::Index>(n, m));
  const RowVec mean = unit_features.colwise().mean();
  RowVec running = RowVec::Zero(unit_features.cols());
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  for (Eigen::Index s = 1; s <= count; ++s) {
    int best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < n; ++k) {
      if (used[static_cast<std::size_t>(k)]) continue;
      const double dist = (mean - (running + unit_features.row(k)) / static_cast<double>(s)).norm();
      // Distances equal up to rounding count as ties and keep the lower index.
      if (best < 0 || dist < best_dist - 1e-12 * std::max(1.0, best_dist)) {
        best_dist = dist;
        best = static_cast<int>(k);
      }
    }
    used[static_cast<std::size_t>(best)] = true;
    running += unit_features.row(best);
    picked.push_back(best);
  }
  return picked;
}

Mat unit_features_of(const DynamicBackbone& backbone, const DatasetSource& source, std::span<const int> indices) {
  constexpr std::size_t chunk = 256;
  Mat out(static_cast<Eigen::Index>(indices.size()), backbone.feature_dim());
  std::vector<Image> batch;
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const std::size_t stop = std::min(indices.size(), start + chunk);
    batch.clear();
    for (std::size_t i = start; i < stop; ++i) batch.push_back(source.samples[static_cast<std::size_t>(indices[i])].image);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(stop - start)) =
        vmf::normalize_rows(backbone.forward(batch));
  }
  return out;
}

void update_memory(ExemplarMemory& memory, const DynamicBackbone& backbone, const TaskStream& stream, int task_index,
                   SelectionStrategy strategy, Rng* rng) {
  const Task& task = stream.tasks.at(static_cast<std::size_t>(task_index));
  const int seen = stream.cumulative_classes.at(static_cast<std::size_t>(task_index));
  const int quota = memory.quota(seen);

  for (auto& [cls, list] : memory.per_class)
    if (static_cast<int>(list.size()) > quota) list.resize(static_cast<std::size_t>(std::max(quota, 0)));

  for (int cls : task.new_classes) {
    std::vector<int> members;
    for (int idx : task.train_indices)
      if (stream.train->samples[static_cast<std::size_t>(idx)].label == cls) members.push_back(idx);
    std::vector<int> chosen;
    if (quota > 0 && !members.empty()) {
      if (strategy == SelectionStrategy::Random) {
        if (!rng) throw UsageError("random exemplar selection needs an rng");
        chosen = members;
        std::shuffle(chosen.begin(), chosen.end(), *rng);
        chosen.resize(std::min(chosen.size(), static_cast<std::size_t>(quota)));
      } else {
        const Mat feats = unit_features_of(backbone, *stream.train, members);
        for (int k : herding_select(feats, quota)) chosen.push_back(members[static_cast<std::size_t>(k)]);
      }
    }
    memory.per_class[cls] = std::move(chosen);
  }

  if (memory.budget.policy == MemoryBudget::Policy::Total && memory.total() > memory.budget.amount)
    throw InvariantViolation("exemplar memory exceeds its budget");
}

}  // namespace vmfcil
