#include "gradnet/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gradnet/errors.hpp"

namespace gradnet {

GateValue::GateValue(double g) : g_(g) {
  if (!(g >= 0.0 && g <= 1.0)) {
    throw ConfigError("gate value " + std::to_string(g) + " outside [0, 1]");
  }
}

GateValue gate(double t, double tau) {
  if (!(tau >= 0.0) || std::isinf(tau)) {
    throw ConfigError("tau must be finite and >= 0, got " + std::to_string(tau));
  }
  if (!(t >= 0.0)) throw ConfigError("epoch must be >= 0, got " + std::to_string(t));
  if (tau == 0.0) return GateValue(1.0);
  return GateValue(std::min(t / tau, 1.0));
}

LinearSchedule::LinearSchedule(double tau, ScheduleMode mode) : tau_(tau), mode_(mode) {
  gate(0.0, tau_);  // validates tau
}

GateValue LinearSchedule::at_step(std::size_t step, std::size_t steps_per_epoch) const {
  if (mode_ == ScheduleMode::Epoch || steps_per_epoch == 0) return current();
  const double t = static_cast<double>(epoch_) +
                   static_cast<double>(step) / static_cast<double>(steps_per_epoch);
  return gate(t, tau_);
}

GateValue LinearSchedule::advance_epoch() {
  ++epoch_;
  return current();
}

}  // namespace gradnet
