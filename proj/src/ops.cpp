#include "gabvit/ops.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace gabvit {

namespace {

using autodiff::accumulate_grad;
using autodiff::record;
using autodiff::should_record;
using autodiff::wants_grad;

template <class Scalar>
using Array = typename BasicTensor<Scalar>::Array;
template <class Scalar>
using RowMatrix = typename BasicTensor<Scalar>::RowMatrix;

template <class Scalar>
Eigen::Map<const RowMatrix<Scalar>> as_matrix(const Array<Scalar>& a, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const RowMatrix<Scalar>>(a.data(), static_cast<Eigen::Index>(rows),
                                             static_cast<Eigen::Index>(cols));
}

template <class Scalar>
Eigen::Map<const Array<Scalar>> as_array(const RowMatrix<Scalar>& m) {
  return Eigen::Map<const Array<Scalar>>(m.data(), m.size());
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

template <class Scalar>
Scalar gelu_value(Scalar x) {
  const Scalar k = std::sqrt(Scalar(2) / std::numbers::pi_v<Scalar>);
  const Scalar t = std::tanh(k * (x + Scalar(0.044715) * x * x * x));
  return Scalar(0.5) * x * (Scalar(1) + t);
}

template <class Scalar>
Scalar gelu_derivative(Scalar x) {
  const Scalar k = std::sqrt(Scalar(2) / std::numbers::pi_v<Scalar>);
  const Scalar t = std::tanh(k * (x + Scalar(0.044715) * x * x * x));
  return Scalar(0.5) * (Scalar(1) + t) +
         Scalar(0.5) * x * (Scalar(1) - t * t) * k * (Scalar(1) + Scalar(3 * 0.044715) * x * x);
}

}  // namespace

template <class Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), n = b.dim(1);
  RowMatrix<Scalar> c = a.matrix() * b.matrix();
  BasicTensor<Scalar> out({m, n}, as_array<Scalar>(c));
  if (should_record(a, b)) {
    record(out, "matmul", [a, b, out] {
      const auto upstream = as_matrix<Scalar>(out.grad(), out.dim(0), out.dim(1));
      if (wants_grad(a)) {
        RowMatrix<Scalar> ga = upstream * b.matrix().transpose();
        accumulate_grad(a, as_array<Scalar>(ga));
      }
      if (wants_grad(b)) {
        RowMatrix<Scalar> gb = a.matrix().transpose() * upstream;
        accumulate_grad(b, as_array<Scalar>(gb));
      }
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  BasicTensor<Scalar> out(a.shape(), a.data() + b.data());
  if (should_record(a, b)) {
    record(out, "add", [a, b, out] {
      if (wants_grad(a)) accumulate_grad(a, out.grad());
      if (wants_grad(b)) accumulate_grad(b, out.grad());
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> mul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  BasicTensor<Scalar> out(a.shape(), a.data() * b.data());
  if (should_record(a, b)) {
    record(out, "mul", [a, b, out] {
      if (wants_grad(a)) accumulate_grad(a, out.grad() * b.data());
      if (wants_grad(b)) accumulate_grad(b, out.grad() * a.data());
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> mul_scalar(const BasicTensor<Scalar>& a, Scalar s) {
  BasicTensor<Scalar> out(a.shape(), a.data() * s);
  if (should_record(a)) {
    record(out, "mul_scalar", [a, out, s] {
      if (wants_grad(a)) accumulate_grad(a, out.grad() * s);
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> add_scalar(const BasicTensor<Scalar>& a, Scalar s) {
  BasicTensor<Scalar> out(a.shape(), a.data() + s);
  if (should_record(a)) {
    record(out, "add_scalar", [a, out] {
      if (wants_grad(a)) accumulate_grad(a, out.grad());
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> exp(const BasicTensor<Scalar>& a) {
  BasicTensor<Scalar> out(a.shape(), a.data().exp());
  if (should_record(a)) {
    record(out, "exp", [a, out] {
      if (wants_grad(a)) accumulate_grad(a, out.grad() * out.data());
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& a) {
  BasicTensor<Scalar> out(a.shape(), a.data().max(Scalar(0)));
  if (should_record(a)) {
    record(out, "relu", [a, out] {
      if (wants_grad(a)) accumulate_grad(a, (a.data() > Scalar(0)).select(out.grad(), Scalar(0)));
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> gelu(const BasicTensor<Scalar>& a) {
  BasicTensor<Scalar> out(a.shape(), a.data().unaryExpr([](Scalar x) { return gelu_value(x); }));
  if (should_record(a)) {
    record(out, "gelu", [a, out] {
      if (wants_grad(a)) {
        accumulate_grad(a, out.grad() * a.data().unaryExpr([](Scalar x) { return gelu_derivative(x); }));
      }
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& a) {
  auto out = BasicTensor<Scalar>::scalar(a.data().sum());
  if (should_record(a)) {
    record(out, "sum", [a, out] {
      if (wants_grad(a)) accumulate_grad(a, Array<Scalar>::Constant(a.data().size(), out.grad()[0]));
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> mean_over_dim(const BasicTensor<Scalar>& a, std::size_t axis) {
  const auto& shape = a.shape();
  if (axis >= shape.size()) {
    throw ShapeError("mean_over_dim: axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];

  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out_shape.push_back(shape[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  Array<Scalar> values = Array<Scalar>::Zero(static_cast<Eigen::Index>(outer * inner));
  const auto& x = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < len; ++k) {
      for (std::size_t i = 0; i < inner; ++i) values[o * inner + i] += x[(o * len + k) * inner + i];
    }
  }
  values /= static_cast<Scalar>(len);
  BasicTensor<Scalar> out(out_shape, std::move(values));
  if (should_record(a)) {
    record(out, "mean_over_dim", [a, out, outer, inner, len] {
      if (!wants_grad(a)) return;
      Array<Scalar> g(a.data().size());
      const Scalar scale = Scalar(1) / static_cast<Scalar>(len);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < len; ++k) {
          for (std::size_t i = 0; i < inner; ++i) g[(o * len + k) * inner + i] = out.grad()[o * inner + i] * scale;
        }
      }
      accumulate_grad(a, g);
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> transpose_last_two(const BasicTensor<Scalar>& a) {
  if (a.rank() < 2) throw ShapeError("transpose_last_two: needs rank >= 2, got " + shape_string(a.shape()));
  Shape shape = a.shape();
  const std::size_t rows = shape[shape.size() - 2], cols = shape.back();
  const std::size_t batch = a.numel() / (rows * cols);
  std::swap(shape[shape.size() - 2], shape.back());
  std::vector<std::size_t> idx(a.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < cols; ++i) {
      for (std::size_t j = 0; j < rows; ++j) idx[b * rows * cols + i * rows + j] = b * rows * cols + j * cols + i;
    }
  }
  Array<Scalar> values(a.data().size());
  for (std::size_t i = 0; i < idx.size(); ++i) values[i] = a.data()[idx[i]];
  BasicTensor<Scalar> out(shape, std::move(values));
  if (should_record(a)) {
    record(out, "transpose_last_two", [a, out, idx = std::move(idx)] {
      if (!wants_grad(a)) return;
      Array<Scalar> g(a.data().size());
      for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] = out.grad()[i];
      accumulate_grad(a, g);
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> reshape(const BasicTensor<Scalar>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  BasicTensor<Scalar> out(std::move(shape), a.data());
  if (should_record(a)) {
    record(out, "reshape", [a, out] {
      if (wants_grad(a)) accumulate_grad(a, out.grad());
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> gather(const BasicTensor<Scalar>& a, IndexList indices, Shape shape) {
  if (!indices || indices->size() != shape_numel(shape)) {
    throw ShapeError("gather: index count does not match output shape " + shape_string(shape));
  }
  const auto n = a.numel();
  Array<Scalar> values(static_cast<Eigen::Index>(indices->size()));
  for (std::size_t i = 0; i < indices->size(); ++i) {
    const auto k = (*indices)[i];
    if (k >= n) throw ShapeError("gather: index " + std::to_string(k) + " out of range for " + shape_string(a.shape()));
    values[i] = a.data()[k];
  }
  BasicTensor<Scalar> out(std::move(shape), std::move(values));
  if (should_record(a)) {
    record(out, "gather", [a, out, indices] {
      if (!wants_grad(a)) return;
      Array<Scalar> g = Array<Scalar>::Zero(a.data().size());
      for (std::size_t i = 0; i < indices->size(); ++i) g[(*indices)[i]] += out.grad()[i];
      accumulate_grad(a, g);
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> softmax_lastdim(const BasicTensor<Scalar>& a) {
  if (!a.data().allFinite()) throw std::domain_error("softmax_lastdim: non-finite input");
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.numel() / cols;
  Array<Scalar> values(a.data().size());
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = a.data().segment(r * cols, cols);
    auto y = values.segment(r * cols, cols);
    y = (in - in.maxCoeff()).exp();
    y /= y.sum();
  }
  BasicTensor<Scalar> out(a.shape(), std::move(values));
  if (should_record(a)) {
    record(out, "softmax_lastdim", [a, out, rows, cols] {
      if (!wants_grad(a)) return;
      Array<Scalar> g(a.data().size());
      for (std::size_t r = 0; r < rows; ++r) {
        auto y = out.data().segment(r * cols, cols);
        auto dy = out.grad().segment(r * cols, cols);
        g.segment(r * cols, cols) = y * (dy - (dy * y).sum());
      }
      accumulate_grad(a, g);
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> layernorm(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& gain,
                              const BasicTensor<Scalar>& bias, Scalar eps) {
  if (a.rank() != 2) throw ShapeError("layernorm: expects [N x D], got " + shape_string(a.shape()));
  if (!(eps > Scalar(0))) throw std::invalid_argument("layernorm: eps must be positive");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (gain.shape() != Shape{cols} || bias.shape() != Shape{cols}) {
    throw ShapeError("layernorm: gain/bias must be [" + std::to_string(cols) + "]");
  }
  Array<Scalar> normalized(a.data().size());
  Array<Scalar> inv_std(static_cast<Eigen::Index>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    auto x = a.data().segment(r * cols, cols);
    const Scalar mean = x.mean();
    const Scalar var = (x - mean).square().mean();
    inv_std[r] = Scalar(1) / std::sqrt(var + eps);
    normalized.segment(r * cols, cols) = (x - mean) * inv_std[r];
  }
  Array<Scalar> values(a.data().size());
  for (std::size_t r = 0; r < rows; ++r) {
    values.segment(r * cols, cols) = normalized.segment(r * cols, cols) * gain.data() + bias.data();
  }
  BasicTensor<Scalar> out(a.shape(), std::move(values));
  if (should_record(a, gain, bias)) {
    record(out, "layernorm", [a, gain, bias, out, normalized = std::move(normalized),
                              inv_std = std::move(inv_std), rows, cols] {
      const auto& dy = out.grad();
      if (wants_grad(a)) {
        Array<Scalar> g(a.data().size());
        for (std::size_t r = 0; r < rows; ++r) {
          auto xhat = normalized.segment(r * cols, cols);
          Array<Scalar> dxhat = dy.segment(r * cols, cols) * gain.data();
          g.segment(r * cols, cols) = inv_std[r] * (dxhat - dxhat.mean() - xhat * (dxhat * xhat).mean());
        }
        accumulate_grad(a, g);
      }
      if (wants_grad(gain) || wants_grad(bias)) {
        Array<Scalar> dg = Array<Scalar>::Zero(static_cast<Eigen::Index>(cols));
        Array<Scalar> db = Array<Scalar>::Zero(static_cast<Eigen::Index>(cols));
        for (std::size_t r = 0; r < rows; ++r) {
          dg += dy.segment(r * cols, cols) * normalized.segment(r * cols, cols);
          db += dy.segment(r * cols, cols);
        }
        if (wants_grad(gain)) accumulate_grad(gain, dg);
        if (wants_grad(bias)) accumulate_grad(bias, db);
      }
    });
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> cross_entropy(const BasicTensor<Scalar>& logits, std::size_t label) {
  if (logits.rank() != 1) throw ShapeError("cross_entropy: expects rank-1 logits, got " + shape_string(logits.shape()));
  if (label >= logits.numel()) throw std::out_of_range("cross_entropy: label out of range");
  const auto& z = logits.data();
  const Scalar peak = z.maxCoeff();
  const Scalar log_norm = peak + std::log((z - peak).exp().sum());
  auto out = BasicTensor<Scalar>::scalar(log_norm - z[label]);
  if (should_record(logits)) {
    record(out, "cross_entropy", [logits, out, label, log_norm] {
      if (!wants_grad(logits)) return;
      Array<Scalar> g = (logits.data() - log_norm).exp();
      g[label] -= Scalar(1);
      accumulate_grad(logits, g * out.grad()[0]);
    });
  }
  return out;
}

IndexList make_indices(std::vector<std::size_t> indices) {
  return std::make_shared<const std::vector<std::size_t>>(std::move(indices));
}

template <class Scalar>
BasicTensor<Scalar> select_columns(const BasicTensor<Scalar>& a, std::size_t first, std::size_t count) {
  if (a.rank() != 2 || first + count > a.dim(1) || count == 0) {
    throw ShapeError("select_columns: invalid range for " + shape_string(a.shape()));
  }
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<std::size_t> idx;
  idx.reserve(rows * count);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < count; ++c) idx.push_back(r * cols + first + c);
  }
  return gather(a, make_indices(std::move(idx)), {rows, count});
}

template <class Scalar>
BasicTensor<Scalar> select_rows(const BasicTensor<Scalar>& a, std::size_t first, std::size_t count) {
  if (a.rank() != 2 || first + count > a.dim(0) || count == 0) {
    throw ShapeError("select_rows: invalid range for " + shape_string(a.shape()));
  }
  const std::size_t cols = a.dim(1);
  std::vector<std::size_t> idx(count * cols);
  std::iota(idx.begin(), idx.end(), first * cols);
  return gather(a, make_indices(std::move(idx)), {count, cols});
}

template <class Scalar>
BasicTensor<Scalar> select_leading(const BasicTensor<Scalar>& a, std::size_t index) {
  if (a.rank() != 3 || index >= a.dim(0)) {
    throw ShapeError("select_leading: index " + std::to_string(index) + " invalid for " + shape_string(a.shape()));
  }
  const std::size_t rows = a.dim(1), cols = a.dim(2);
  std::vector<std::size_t> idx(rows * cols);
  std::iota(idx.begin(), idx.end(), index * rows * cols);
  return gather(a, make_indices(std::move(idx)), {rows, cols});
}

template <class Scalar>
BasicTensor<Scalar> broadcast_rows(const BasicTensor<Scalar>& v, std::size_t rows) {
  if (v.rank() != 1) throw ShapeError("broadcast_rows: expects rank 1, got " + shape_string(v.shape()));
  const std::size_t cols = v.dim(0);
  std::vector<std::size_t> idx(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) std::iota(idx.begin() + r * cols, idx.begin() + (r + 1) * cols, 0);
  return gather(v, make_indices(std::move(idx)), {rows, cols});
}

template <class Scalar>
BasicTensor<Scalar> linear(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& weight,
                           const BasicTensor<Scalar>* bias) {
  auto y = matmul(x, weight);
  if (bias) y = add(y, broadcast_rows(*bias, y.dim(0)));
  return y;
}

#define GABVIT_INSTANTIATE_OPS(S)                                                                  \
  template BasicTensor<S> matmul(const BasicTensor<S>&, const BasicTensor<S>&);                    \
  template BasicTensor<S> add(const BasicTensor<S>&, const BasicTensor<S>&);                       \
  template BasicTensor<S> mul(const BasicTensor<S>&, const BasicTensor<S>&);                       \
  template BasicTensor<S> mul_scalar(const BasicTensor<S>&, S);                                    \
  template BasicTensor<S> add_scalar(const BasicTensor<S>&, S);                                    \
  template BasicTensor<S> exp(const BasicTensor<S>&);                                              \
  template BasicTensor<S> relu(const BasicTensor<S>&);                                             \
  template BasicTensor<S> gelu(const BasicTensor<S>&);                                             \
  template BasicTensor<S> sum(const BasicTensor<S>&);                                              \
  template BasicTensor<S> mean_over_dim(const BasicTensor<S>&, std::size_t);                       \
  template BasicTensor<S> transpose_last_two(const BasicTensor<S>&);                               \
  template BasicTensor<S> reshape(const BasicTensor<S>&, Shape);                                   \
  template BasicTensor<S> gather(const BasicTensor<S>&, IndexList, Shape);                         \
  template BasicTensor<S> softmax_lastdim(const BasicTensor<S>&);                                  \
  template BasicTensor<S> layernorm(const BasicTensor<S>&, const BasicTensor<S>&,                  \
                                    const BasicTensor<S>&, S);                                     \
  template BasicTensor<S> cross_entropy(const BasicTensor<S>&, std::size_t);                       \
  template BasicTensor<S> select_columns(const BasicTensor<S>&, std::size_t, std::size_t);         \
  template BasicTensor<S> select_rows(const BasicTensor<S>&, std::size_t, std::size_t);            \
  template BasicTensor<S> select_leading(const BasicTensor<S>&, std::size_t);                      \
  template BasicTensor<S> broadcast_rows(const BasicTensor<S>&, std::size_t);                      \
  template BasicTensor<S> linear(const BasicTensor<S>&, const BasicTensor<S>&, const BasicTensor<S>*);

GABVIT_INSTANTIATE_OPS(float)
GABVIT_INSTANTIATE_OPS(double)

#undef GABVIT_INSTANTIATE_OPS

}  // namespace gabvit
