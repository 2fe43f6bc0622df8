#pragma once

#include <string>

#include "tab2img/transform.hpp"

namespace tab2img::pnm {

// Binary netpbm output: P5 for single-channel tensors, P6 for three-channel,
// 8-bit, quantized as round(255 * v). Byte-exact for a given tensor.
void write(const transform::ImageTensor& img, const std::string& path);

// Reads P5/P6 back; values become byte / 255.
transform::ImageTensor read(const std::string& path);

}  // namespace tab2img::pnm
