#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "gradnet/layers.hpp"
#include "gradnet/rng.hpp"
#include "gradnet/tensor.hpp"

namespace gradnet {

/// rows x cols matrix with orthonormal columns (rows >= cols) or orthonormal
/// rows (rows < cols), scaled by `gain`. Built from the QR factorization of a
/// Gaussian matrix with R's diagonal made positive.
Tensor orthogonal_init(std::size_t rows, std::size_t cols, double gain, Rng& rng);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Adam with bias-corrected moments.
class Adam {
 public:
  explicit Adam(AdamConfig config = {});

  /// One update of every parameter. grads[i] pairs with params[i]; the
  /// parameter list must be the same (order and shapes) on every call.
  /// Throws NumericError naming the parameter if a gradient is not finite,
  /// before any parameter is modified.
  void step(std::span<Parameter* const> params, std::span<const Tensor> grads);

  std::size_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t step_ = 0;
};

struct EarlyStopConfig {
  /// Epochs without improvement tolerated before stopping.
  std::size_t patience = 10;
  double min_delta = 1e-4;
};

enum class StopDecision { Continue, NewBest, Stop };

/// Tracks a higher-is-better validation metric.
class EarlyStopping {
 public:
  static constexpr std::size_t kNoPatienceLimit = std::numeric_limits<std::size_t>::max();

  explicit EarlyStopping(EarlyStopConfig config = {});

  /// NaN counts as no improvement.
  StopDecision update(double metric);

  bool has_best() const { return best_epoch_ >= 0; }
  double best() const { return best_; }
  /// Zero-based index of the update() call that produced the best metric.
  long best_epoch() const { return best_epoch_; }
  std::size_t epochs_since_improvement() const { return since_; }

 private:
  EarlyStopConfig config_;
  double best_ = -std::numeric_limits<double>::infinity();
  long best_epoch_ = -1;
  long seen_ = 0;
  std::size_t since_ = 0;
};

}  // namespace gradnet
