#ifndef VMFCIL_PNG_IO_HPP_
#define VMFCIL_PNG_IO_HPP_

#include <filesystem>

#include "vmfcil/types.hpp"

namespace vmfcil {

/// Decodes an 8- or 16-bit PNG into [0,1] pixels. Gray stays one channel,
/// palette/RGB become three, alpha is dropped.
Image read_png(const std::filesystem::path& path);

/// Writes 1- or 3-channel images as 8-bit PNG, clamping to [0,1].
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace vmfcil

#endif  // VMFCIL_PNG_IO_HPP_
