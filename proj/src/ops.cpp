#include "gradnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "gradnet/errors.hpp"

namespace gradnet {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MutMap(t.mutable_data().data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || a.tape() != b.tape()) throw StateError("operands live on different tapes");
  return *a.tape();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

struct ChannelLayout {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t inner = 0;
};

ChannelLayout channel_layout(const Shape& shape) {
  if (shape.size() < 2) {
    throw DimensionError("batch norm expects rank >= 2 input, got " + to_string(shape));
  }
  ChannelLayout l;
  l.batch = shape[0];
  l.channels = shape[1];
  l.inner = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

void require_rank4(const char* op, const Shape& s) {
  if (s.size() != 4) {
    throw DimensionError(std::string(op) + " expects N x C x H x W input, got " + to_string(s));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(A.shape()) + " by " +
                         to_string(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor out(Shape{m, n});
  as_matrix(out, m, n).noalias() = as_matrix(A, m, k) * as_matrix(B, k, n);
  return tape.record("matmul", std::move(out), {a, b},
                     [A, B, m, k, n](const Tensor& g, const std::vector<bool>& needs) {
                       std::vector<Tensor> grads(2);
                       if (needs[0]) {
                         grads[0] = Tensor(Shape{m, k});
                         as_matrix(grads[0], m, k).noalias() =
                             as_matrix(g, m, n) * as_matrix(B, k, n).transpose();
                       }
                       if (needs[1]) {
                         grads[1] = Tensor(Shape{k, n});
                         as_matrix(grads[1], k, n).noalias() =
                             as_matrix(A, m, k).transpose() * as_matrix(g, m, n);
                       }
                       return grads;
                     });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = map_binary(a.value(), b.value(), [](double x, double y) { return x + y; });
  return tape.record("add", std::move(out), {a, b},
                     [](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{g, g};
                     });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = map_binary(a.value(), b.value(), [](double x, double y) { return x - y; });
  return tape.record("sub", std::move(out), {a, b},
                     [](const Tensor& g, const std::vector<bool>& needs) {
                       std::vector<Tensor> grads{g, Tensor()};
                       if (needs[1]) grads[1] = map_unary(g, [](double v) { return -v; });
                       return grads;
                     });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same_shape("mul", A, B);
  Tensor out = map_binary(A, B, [](double x, double y) { return x * y; });
  return tape.record("mul", std::move(out), {a, b},
                     [A, B](const Tensor& g, const std::vector<bool>& needs) {
                       std::vector<Tensor> grads(2);
                       auto times = [](double x, double y) { return x * y; };
                       if (needs[0]) grads[0] = map_binary(g, B, times);
                       if (needs[1]) grads[1] = map_binary(g, A, times);
                       return grads;
                     });
}

Var scale(Var a, double factor) {
  Tensor out = map_unary(a.value(), [factor](double x) { return factor * x; });
  return a.tape()->record("scale", std::move(out), {a},
                          [factor](const Tensor& g, const std::vector<bool>&) {
                            return std::vector<Tensor>{
                                map_unary(g, [factor](double v) { return factor * v; })};
                          });
}

Var shift(Var a, double offset) {
  Tensor out = map_unary(a.value(), [offset](double x) { return x + offset; });
  return a.tape()->record("shift", std::move(out), {a},
                          [](const Tensor& g, const std::vector<bool>&) {
                            return std::vector<Tensor>{g};
                          });
}

Var lerp(Var a, Var b, double weight) {
  Tape& tape = same_tape(a, b);
  require_same_shape("lerp", a.value(), b.value());
  const double wa = 1.0 - weight;
  const double wb = weight;
  Tensor out =
      map_binary(a.value(), b.value(), [wa, wb](double x, double y) { return wa * x + wb * y; });
  return tape.record("lerp", std::move(out), {a, b},
                     [wa, wb](const Tensor& g, const std::vector<bool>& needs) {
                       std::vector<Tensor> grads(2);
                       if (needs[0]) grads[0] = map_unary(g, [wa](double v) { return wa * v; });
                       if (needs[1]) grads[1] = map_unary(g, [wb](double v) { return wb * v; });
                       return grads;
                     });
}

Var add_bias(Var x, Var b) {
  Tape& tape = same_tape(x, b);
  const Tensor& X = x.value();
  const Tensor& B = b.value();
  if (X.rank() != 2 || B.rank() != 1 || B.dim(0) != X.dim(1)) {
    throw DimensionError("add_bias: bias " + to_string(B.shape()) + " does not fit rows of " +
                         to_string(X.shape()));
  }
  const std::size_t n = X.dim(0), h = X.dim(1);
  Tensor out(X.shape());
  {
    auto dst = out.mutable_data();
    auto src = X.data();
    auto bias = B.data();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < h; ++c) dst[r * h + c] = src[r * h + c] + bias[c];
    }
  }
  return tape.record("add_bias", std::move(out), {x, b},
                     [n, h](const Tensor& g, const std::vector<bool>& needs) {
                       std::vector<Tensor> grads{g, Tensor()};
                       if (needs[1]) {
                         grads[1] = Tensor(Shape{h});
                         auto db = grads[1].mutable_data();
                         auto src = g.data();
                         for (std::size_t r = 0; r < n; ++r) {
                           for (std::size_t c = 0; c < h; ++c) db[c] += src[r * h + c];
                         }
                       }
                       return grads;
                     });
}

Var leaky_relu(Var x, double slope) {
  const Tensor& X = x.value();
  Tensor out = map_unary(X, [slope](double v) { return v >= 0.0 ? v : slope * v + 0.0; });
  return x.tape()->record("leaky_relu", std::move(out), {x},
                          [X, slope](const Tensor& g, const std::vector<bool>&) {
                            return std::vector<Tensor>{map_binary(
                                g, X, [slope](double gv, double xv) {
                                  return xv >= 0.0 ? gv : slope * gv;
                                })};
                          });
}

Var relu(Var x) {
  const Tensor& X = x.value();
  Tensor out = map_unary(X, [](double v) { return v >= 0.0 ? v : 0.0; });
  return x.tape()->record("relu", std::move(out), {x},
                          [X](const Tensor& g, const std::vector<bool>&) {
                            return std::vector<Tensor>{map_binary(
                                g, X, [](double gv, double xv) { return xv >= 0.0 ? gv : 0.0; })};
                          });
}

Var abs_value(Var x) {
  const Tensor& X = x.value();
  Tensor out = map_unary(X, [](double v) { return std::abs(v); });
  return x.tape()->record("abs", std::move(out), {x},
                          [X](const Tensor& g, const std::vector<bool>&) {
                            return std::vector<Tensor>{map_binary(
                                g, X, [](double gv, double xv) { return xv >= 0.0 ? gv : -gv; })};
                          });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const Shape shape = x.shape();
  return x.tape()->record("sum", Tensor::scalar(total), {x},
                          [shape](const Tensor& g, const std::vector<bool>&) {
                            return std::vector<Tensor>{Tensor(shape, g.item())};
                          });
}

Var reshape(Var x, Shape shape) {
  const Shape original = x.shape();
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape()->record("reshape", std::move(out), {x},
                          [original](const Tensor& g, const std::vector<bool>&) {
                            return std::vector<Tensor>{g.reshaped(original)};
                          });
}

AxisGeometry conv_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  if (stride == 0) throw ConfigError("stride must be >= 1");
  if (kernel == 0) throw ConfigError("kernel extent must be >= 1");
  AxisGeometry g;
  if (padding == Padding::Same) {
    const std::size_t out = (in + stride - 1) / stride;
    const std::size_t needed = (out - 1) * stride + kernel;
    const std::size_t total = needed > in ? needed - in : 0;
    g.pad_lo = total / 2;
    g.pad_hi = total - g.pad_lo;
  }
  const std::size_t padded = in + g.pad_lo + g.pad_hi;
  if (kernel > padded) {
    throw DimensionError("kernel extent " + std::to_string(kernel) +
                         " exceeds padded input extent " + std::to_string(padded));
  }
  g.out = (padded - kernel) / stride + 1;
  return g;
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, f, kh, kw, stride;
  AxisGeometry gh, gw;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return gh.out * gw.out; }
};

// col[(c*kh + i)*kw + j][oy*ow + ox] = padded x[c][oy*s + i - pad][ox*s + j - pad]
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t oh = g.gh.out, ow = g.gw.out;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.gh.pad_lo);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix =
                static_cast<long>(ox * g.stride + j) - static_cast<long>(g.gw.pad_lo);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) &&
                                ix < static_cast<long>(g.w);
            row[oy * ow + ox] = inside ? x[(c * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
  const std::size_t oh = g.gh.out, ow = g.gw.out;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.gh.pad_lo);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix =
                static_cast<long>(ox * g.stride + j) - static_cast<long>(g.gw.pad_lo);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            dx[(c * g.h + iy) * g.w + ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var x, Var k, std::size_t stride, Padding padding) {
  Tape& tape = same_tape(x, k);
  const Tensor& X = x.value();
  const Tensor& K = k.value();
  require_rank4("conv2d", X.shape());
  if (K.rank() != 4 || K.dim(1) != X.dim(1)) {
    throw DimensionError("conv2d: kernel " + to_string(K.shape()) + " incompatible with input " +
                         to_string(X.shape()));
  }
  ConvGeometry g{X.dim(0), X.dim(1), X.dim(2), X.dim(3), K.dim(0), K.dim(2), K.dim(3), stride,
                 {}, {}};
  g.gh = conv_axis(g.h, g.kh, stride, padding);
  g.gw = conv_axis(g.w, g.kw, stride, padding);

  const std::size_t patch = g.patch(), pixels = g.pixels();
  Tensor out(Shape{g.n, g.f, g.gh.out, g.gw.out});
  {
    std::vector<double> col(patch * pixels);
    const auto kmat = as_matrix(K, g.f, patch);
    auto dst = out.mutable_data();
    for (std::size_t s = 0; s < g.n; ++s) {
      im2col(X.data().data() + s * g.c * g.h * g.w, g, col.data());
      MutMap(dst.data() + s * g.f * pixels, static_cast<Eigen::Index>(g.f),
             static_cast<Eigen::Index>(pixels))
          .noalias() = kmat * ConstMap(col.data(), static_cast<Eigen::Index>(patch),
                                       static_cast<Eigen::Index>(pixels));
    }
  }
  return tape.record(
      "conv2d", std::move(out), {x, k}, [X, K, g](const Tensor& grad, const std::vector<bool>& needs) {
        const std::size_t patch = g.patch(), pixels = g.pixels();
        std::vector<Tensor> grads(2);
        if (needs[0]) grads[0] = Tensor(X.shape());
        if (needs[1]) grads[1] = Tensor(K.shape());
        std::vector<double> col(patch * pixels);
        std::vector<double> dcol(patch * pixels);
        const auto kmat = as_matrix(K, g.f, patch);
        for (std::size_t s = 0; s < g.n; ++s) {
          ConstMap gout(grad.data().data() + s * g.f * pixels, static_cast<Eigen::Index>(g.f),
                        static_cast<Eigen::Index>(pixels));
          if (needs[1]) {
            im2col(X.data().data() + s * g.c * g.h * g.w, g, col.data());
            as_matrix(grads[1], g.f, patch).noalias() +=
                gout * ConstMap(col.data(), static_cast<Eigen::Index>(patch),
                                static_cast<Eigen::Index>(pixels))
                           .transpose();
          }
          if (needs[0]) {
            MutMap(dcol.data(), static_cast<Eigen::Index>(patch),
                   static_cast<Eigen::Index>(pixels))
                .noalias() = kmat.transpose() * gout;
            col2im_add(dcol.data(), g, grads[0].mutable_data().data() + s * g.c * g.h * g.w);
          }
        }
        return grads;
      });
}

Var pool2d(Var x, std::size_t window, std::size_t stride, PoolKind kind) {
  const Tensor& X = x.value();
  require_rank4("pool2d", X.shape());
  const std::size_t n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
  if (window == 0 || window > h || window > w) {
    throw DimensionError("pool2d: window " + std::to_string(window) +
                         " does not fit spatial extent " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  if (stride == 0) throw ConfigError("pool2d: stride must be >= 1");
  const std::size_t oh = (h - window) / stride + 1;
  const std::size_t ow = (w - window) / stride + 1;
  Tensor out(Shape{n, c, oh, ow});
  // For max pooling, the flat input index each output was taken from.
  std::vector<std::size_t> argmax;
  if (kind == PoolKind::Max) argmax.resize(n * c * oh * ow);

  auto src = X.data();
  auto dst = out.mutable_data();
  const double inv = 1.0 / static_cast<double>(window * window);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t o = (plane * oh + oy) * ow + ox;
        if (kind == PoolKind::Mean) {
          double acc = 0.0;
          for (std::size_t i = 0; i < window; ++i) {
            for (std::size_t j = 0; j < window; ++j) {
              acc += src[base + (oy * stride + i) * w + ox * stride + j];
            }
          }
          dst[o] = acc * inv;
        } else {
          std::size_t best = base + (oy * stride) * w + ox * stride;
          for (std::size_t i = 0; i < window; ++i) {
            for (std::size_t j = 0; j < window; ++j) {
              const std::size_t idx = base + (oy * stride + i) * w + ox * stride + j;
              // Strict comparison keeps the first occurrence on ties.
              if (src[idx] > src[best]) best = idx;
            }
          }
          dst[o] = src[best];
          argmax[o] = best;
        }
      }
    }
  }
  const Shape in_shape = X.shape();
  return x.tape()->record(
      kind == PoolKind::Mean ? "mean_pool" : "max_pool", std::move(out), {x},
      [in_shape, argmax = std::move(argmax), kind, window, stride, n, c, h, w, oh, ow, inv](
          const Tensor& g, const std::vector<bool>&) {
        Tensor dx(in_shape);
        auto d = dx.mutable_data();
        auto go = g.data();
        if (kind == PoolKind::Max) {
          for (std::size_t o = 0; o < go.size(); ++o) d[argmax[o]] += go[o];
        } else {
          for (std::size_t plane = 0; plane < n * c; ++plane) {
            const std::size_t base = plane * h * w;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const double share = go[(plane * oh + oy) * ow + ox] * inv;
                for (std::size_t i = 0; i < window; ++i) {
                  for (std::size_t j = 0; j < window; ++j) {
                    d[base + (oy * stride + i) * w + ox * stride + j] += share;
                  }
                }
              }
            }
          }
        }
        return std::vector<Tensor>{std::move(dx)};
      });
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw DimensionError("softmax expects N x K logits, got " + to_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  auto src = logits.data();
  auto dst = out.mutable_data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = src.data() + r * k;
    double* prob = dst.data() + r * k;
    const double top = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      prob[j] = std::exp(row[j] - top);
      total += prob[j];
    }
    for (std::size_t j = 0; j < k; ++j) prob[j] /= total;
  }
  return out;
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& L = logits.value();
  if (L.rank() != 2) {
    throw DimensionError("softmax_cross_entropy expects N x K logits, got " +
                         to_string(L.shape()));
  }
  const std::size_t n = L.dim(0), k = L.dim(1);
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
  }
  std::vector<int> targets(labels.begin(), labels.end());
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw IndexError("label " + std::to_string(t) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  auto src = L.data();
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = src.data() + r * k;
    const double top = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(row[j] - top);
    loss += std::log(total) - (row[targets[r]] - top);
  }
  loss /= static_cast<double>(n);
  return logits.tape()->record(
      "softmax_cross_entropy", Tensor::scalar(loss), {logits},
      [L, targets = std::move(targets), n, k](const Tensor& g, const std::vector<bool>&) {
        Tensor d = softmax_rows(L);
        auto dd = d.mutable_data();
        const double factor = g.item() / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
          dd[r * k + static_cast<std::size_t>(targets[r])] -= 1.0;
          for (std::size_t j = 0; j < k; ++j) dd[r * k + j] *= factor;
        }
        return std::vector<Tensor>{std::move(d)};
      });
}

Var batch_norm_train(Var x, Var gamma, Var beta, double eps, Tensor* batch_mean,
                     Tensor* batch_var) {
  Tape& tape = same_tape(x, gamma);
  same_tape(x, beta);
  const Tensor& X = x.value();
  const ChannelLayout l = channel_layout(X.shape());
  if (gamma.shape() != Shape{l.channels} || beta.shape() != Shape{l.channels}) {
    throw DimensionError("batch norm parameters must have shape [" + std::to_string(l.channels) +
                         "]");
  }
  const std::size_t m = l.batch * l.inner;
  if (m < 2) {
    throw ContractError("batch norm in training mode needs at least 2 values per channel");
  }
  Tensor mean(Shape{l.channels});
  Tensor var(Shape{l.channels});
  Tensor xhat(X.shape());
  Tensor inv_std(Shape{l.channels});
  Tensor out(X.shape());
  {
    auto src = X.data();
    auto mu = mean.mutable_data();
    auto sig = var.mutable_data();
    auto is = inv_std.mutable_data();
    auto xh = xhat.mutable_data();
    auto dst = out.mutable_data();
    auto gm = gamma.value().data();
    auto bt = beta.value().data();
    for (std::size_t c = 0; c < l.channels; ++c) {
      double acc = 0.0;
      for (std::size_t s = 0; s < l.batch; ++s) {
        const double* p = src.data() + (s * l.channels + c) * l.inner;
        for (std::size_t i = 0; i < l.inner; ++i) acc += p[i];
      }
      mu[c] = acc / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t s = 0; s < l.batch; ++s) {
        const double* p = src.data() + (s * l.channels + c) * l.inner;
        for (std::size_t i = 0; i < l.inner; ++i) sq += (p[i] - mu[c]) * (p[i] - mu[c]);
      }
      sig[c] = sq / static_cast<double>(m);
      is[c] = 1.0 / std::sqrt(sig[c] + eps);
      for (std::size_t s = 0; s < l.batch; ++s) {
        const std::size_t off = (s * l.channels + c) * l.inner;
        for (std::size_t i = 0; i < l.inner; ++i) {
          xh[off + i] = (src[off + i] - mu[c]) * is[c];
          dst[off + i] = gm[c] * xh[off + i] + bt[c];
        }
      }
    }
  }
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;
  const Tensor G = gamma.value();
  return tape.record(
      "batch_norm", std::move(out), {x, gamma, beta},
      [xhat, inv_std, G, l, m](const Tensor& g, const std::vector<bool>& needs) {
        std::vector<Tensor> grads(3);
        Tensor dgamma(Shape{l.channels});
        Tensor dbeta(Shape{l.channels});
        auto go = g.data();
        auto xh = xhat.data();
        auto dg = dgamma.mutable_data();
        auto db = dbeta.mutable_data();
        for (std::size_t c = 0; c < l.channels; ++c) {
          for (std::size_t s = 0; s < l.batch; ++s) {
            const std::size_t off = (s * l.channels + c) * l.inner;
            for (std::size_t i = 0; i < l.inner; ++i) {
              dg[c] += go[off + i] * xh[off + i];
              db[c] += go[off + i];
            }
          }
        }
        if (needs[0]) {
          grads[0] = Tensor(xhat.shape());
          auto dx = grads[0].mutable_data();
          auto gm = G.data();
          auto is = inv_std.data();
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t c = 0; c < l.channels; ++c) {
            // dx = gamma / std * (g - mean(g) - xhat * mean(g * xhat))
            const double k = gm[c] * is[c];
            const double mean_g = db[c] * inv_m;
            const double mean_gx = dg[c] * inv_m;
            for (std::size_t s = 0; s < l.batch; ++s) {
              const std::size_t off = (s * l.channels + c) * l.inner;
              for (std::size_t i = 0; i < l.inner; ++i) {
                dx[off + i] = k * (go[off + i] - mean_g - xh[off + i] * mean_gx);
              }
            }
          }
        }
        if (needs[1]) grads[1] = dgamma;
        if (needs[2]) grads[2] = dbeta;
        return grads;
      });
}

Var batch_norm_fixed(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var,
                     double eps) {
  Tape& tape = same_tape(x, gamma);
  same_tape(x, beta);
  const Tensor& X = x.value();
  const ChannelLayout l = channel_layout(X.shape());
  if (mean.shape() != Shape{l.channels} || var.shape() != Shape{l.channels} ||
      gamma.shape() != Shape{l.channels} || beta.shape() != Shape{l.channels}) {
    throw DimensionError("batch norm statistics must have shape [" +
                         std::to_string(l.channels) + "]");
  }
  Tensor inv_std(Shape{l.channels});
  Tensor xhat(X.shape());
  Tensor out(X.shape());
  {
    auto is = inv_std.mutable_data();
    auto mu = mean.data();
    auto sig = var.data();
    auto src = X.data();
    auto xh = xhat.mutable_data();
    auto dst = out.mutable_data();
    auto gm = gamma.value().data();
    auto bt = beta.value().data();
    for (std::size_t c = 0; c < l.channels; ++c) is[c] = 1.0 / std::sqrt(sig[c] + eps);
    for (std::size_t s = 0; s < l.batch; ++s) {
      for (std::size_t c = 0; c < l.channels; ++c) {
        const std::size_t off = (s * l.channels + c) * l.inner;
        for (std::size_t i = 0; i < l.inner; ++i) {
          xh[off + i] = (src[off + i] - mu[c]) * is[c];
          dst[off + i] = gm[c] * xh[off + i] + bt[c];
        }
      }
    }
  }
  const Tensor G = gamma.value();
  return tape.record(
      "batch_norm_fixed", std::move(out), {x, gamma, beta},
      [xhat, inv_std, G, l](const Tensor& g, const std::vector<bool>& needs) {
        std::vector<Tensor> grads(3);
        auto go = g.data();
        auto xh = xhat.data();
        if (needs[0]) {
          grads[0] = Tensor(xhat.shape());
          auto dx = grads[0].mutable_data();
          auto gm = G.data();
          auto is = inv_std.data();
          for (std::size_t s = 0; s < l.batch; ++s) {
            for (std::size_t c = 0; c < l.channels; ++c) {
              const std::size_t off = (s * l.channels + c) * l.inner;
              for (std::size_t i = 0; i < l.inner; ++i) dx[off + i] = go[off + i] * gm[c] * is[c];
            }
          }
        }
        if (needs[1] || needs[2]) {
          Tensor dgamma(Shape{l.channels});
          Tensor dbeta(Shape{l.channels});
          auto dg = dgamma.mutable_data();
          auto db = dbeta.mutable_data();
          for (std::size_t s = 0; s < l.batch; ++s) {
            for (std::size_t c = 0; c < l.channels; ++c) {
              const std::size_t off = (s * l.channels + c) * l.inner;
              for (std::size_t i = 0; i < l.inner; ++i) {
                dg[c] += go[off + i] * xh[off + i];
                db[c] += go[off + i];
              }
            }
          }
          grads[1] = std::move(dgamma);
          grads[2] = std::move(dbeta);
        }
        return grads;
      });
}

}  // namespace gradnet
