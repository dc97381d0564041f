#pragma once

#include <cstdint>

namespace gradnet {

/// Interpolation weight between a GradNet's early (g = 0) and late (g = 1)
/// component.
class GateValue {
 public:
  constexpr GateValue() = default;
  /// Throws ConfigError outside [0, 1].
  explicit GateValue(double g);

  constexpr double value() const { return g_; }
  constexpr bool at_early() const { return g_ == 0.0; }
  constexpr bool at_late() const { return g_ == 1.0; }

 private:
  double g_ = 0.0;
};

/// min(t / tau, 1). tau == 0 means the late component from the start.
GateValue gate(double t, double tau);

enum class ScheduleMode {
  Epoch,  // g held for a whole epoch at gate(epoch, tau)
  Step,   // g recomputed every batch at gate(epoch + step / steps_per_epoch, tau)
};

/// Linear annealing schedule counted in epochs. The counter starts at 0, so
/// the first epoch trains the pure early component.
class LinearSchedule {
 public:
  explicit LinearSchedule(double tau, ScheduleMode mode = ScheduleMode::Epoch);

  double tau() const { return tau_; }
  ScheduleMode mode() const { return mode_; }
  std::uint64_t epoch() const { return epoch_; }

  /// Gate for the current epoch.
  GateValue current() const { return gate(static_cast<double>(epoch_), tau_); }

  /// Gate for batch `step` of `steps_per_epoch` within the current epoch.
  /// Equals current() in Epoch mode.
  GateValue at_step(std::size_t step, std::size_t steps_per_epoch) const;

  /// Move to the next epoch and return its gate.
  GateValue advance_epoch();

 private:
  double tau_;
  ScheduleMode mode_;
  std::uint64_t epoch_ = 0;
};

}  // namespace gradnet
