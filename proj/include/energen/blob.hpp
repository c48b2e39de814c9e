#pragma once

#include <string>
#include <utility>

#include "energen/tensor.hpp"

namespace energen {

// Self-describing tensor blob: magic "ETB1", then name, element type
// (float32 little-endian only), shape, raw data. One tensor per file.
void save_tensor_blob(const std::string& path, const std::string& name, const TensorF& t);

// Returns (name, tensor). Throws format_error on corrupt or truncated input.
std::pair<std::string, TensorF> load_tensor_blob(const std::string& path);

}  // namespace energen
