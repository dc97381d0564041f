#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gradnet/autodiff.hpp"
#include "gradnet/tensor.hpp"

namespace gradnet {

/// One differentiable computation to check. `slots` point at the tensors
/// being differentiated (inputs and parameters); `build` records the graph
/// from their current values and returns the output plus one Var per slot.
/// A slot whose Var is invalid is treated as unused (analytic gradient 0).
struct GradCheckCase {
  std::string layer;
  std::optional<double> g;
  std::vector<std::string> slot_names;
  std::vector<Tensor*> slots;
  std::function<std::pair<Var, std::vector<Var>>(Tape&)> build;
  /// Keeps whatever the slots point into alive.
  std::shared_ptr<void> owner;
};

struct GradCheckEntry {
  std::string layer;
  std::optional<double> g;
  double max_rel_error = 0.0;
  /// Slot with the largest error.
  std::string worst_slot;
  bool passed = false;
};

struct GradCheckReport {
  double tolerance = 1e-4;
  std::vector<GradCheckEntry> entries;

  bool passed() const;
  std::string format() const;
};

/// Case over freshly made leaves: `inputs` are copied into the case and
/// `fn` maps their Vars to the output.
GradCheckCase op_check(std::string name, std::vector<std::pair<std::string, Tensor>> inputs,
                       std::function<Var(const std::vector<Var>&)> fn,
                       std::optional<double> g = std::nullopt);

/// Loss is sum(output * R) with R drawn from `seed`; analytic gradients come
/// from the tape, numeric ones from central differences with step `eps`.
GradCheckEntry check_case(const GradCheckCase& c, double tolerance, std::uint64_t seed,
                          double eps = 1e-5);

GradCheckReport run_gradcheck(const std::vector<GradCheckCase>& cases, double tolerance,
                              std::uint64_t seed = 0);

/// Every op and every layer kind (at g in {0, 0.5, 1}) on small random
/// inputs chosen away from kinks and ties.
std::vector<GradCheckCase> gradcheck_cases(std::uint64_t seed = 0);

GradCheckReport gradcheck_suite(double tolerance = 1e-4, std::uint64_t seed = 0);

}  // namespace gradnet
