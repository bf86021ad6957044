#ifndef VMFCIL_MEMORY_HPP_
#define VMFCIL_MEMORY_HPP_

#include <map>
#include <vector>

#include "vmfcil/backbone.hpp"
#include "vmfcil/data_stream.hpp"
#include "vmfcil/types.hpp"

namespace vmfcil {

enum class SelectionStrategy { Herding, Random };

/// Budgeted exemplar store. Lists are kept in selection order so shrinking a
/// class is a prefix truncation.
struct ExemplarMemory {
  MemoryBudget budget;
  std::map<int, std::vector<int>> per_class;  // class id -> train sample indices

  int total() const;
  /// Per-class allowance once `seen_classes` classes share the budget.
  int quota(int seen_classes) const;
};

/// Greedy herding: step s picks the unpicked row that brings the running mean
/// of the selection closest to the class mean (ties to the lowest index).
/// Rows must be unit norm; returns min(n, m) indices, empty for m <= 0.
std::vector<int> herding_select(const Mat& unit_features, int m);

/// End-of-task update: old classes are truncated to the new quota, the
/// task's new classes are selected from their training samples using
/// features of the full current backbone.
void update_memory(ExemplarMemory& memory, const DynamicBackbone& backbone, const TaskStream& stream, int task_index,
                   SelectionStrategy strategy = SelectionStrategy::Herding, Rng* rng = nullptr);

/// Unit-normalized backbone features for the given train samples.
Mat unit_features_of(const DynamicBackbone& backbone, const DatasetSource& source, std::span<const int> indices);

}  // namespace vmfcil

#endif  // VMFCIL_MEMORY_HPP_
