#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gradnet/model.hpp"
#include "gradnet/tensor.hpp"

namespace gradnet {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Every parameter and buffer of a model plus the gate it was taken at.
struct Snapshot {
  double gate = 0.0;
  std::vector<NamedTensor> tensors;
};

Snapshot capture(Model& model);

/// Throws ContractError if names or shapes do not line up with the model.
void restore(Model& model, const Snapshot& snapshot);

/// One line of JSON (format tag, gate, tensor names and shapes), then the
/// tensor values as little-endian 64-bit floats in header order.
void write_snapshot(const Snapshot& snapshot, const std::filesystem::path& path);
Snapshot read_snapshot(const std::filesystem::path& path);

}  // namespace gradnet
