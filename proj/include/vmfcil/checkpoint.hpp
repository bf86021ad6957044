#ifndef VMFCIL_CHECKPOINT_HPP_
#define VMFCIL_CHECKPOINT_HPP_

#include <filesystem>

#include "vmfcil/training.hpp"

namespace vmfcil {

/// Writes `<root>/task_<t>/manifest.json` and `blobs.bin`. The blob file is a
/// flat little-endian float64 array; the manifest lists every tensor with its
/// offset and shape, plus kappa and the memory as (class, sample, rank) triples.
std::filesystem::path save_checkpoint(const std::filesystem::path& root, int task_index, const LearnerState& state);

/// Restores model and memory. Prototypes are left empty; recompute them with
/// compute_prototypes() once the stream is available.
LearnerState load_checkpoint(const std::filesystem::path& task_dir);

}  // namespace vmfcil

#endif  // VMFCIL_CHECKPOINT_HPP_
