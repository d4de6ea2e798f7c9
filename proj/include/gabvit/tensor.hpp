#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gabvit {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

template <class Scalar>
struct TensorStorage {
  Shape shape;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> data;
  // Empty until the first gradient accumulation.
  Eigen::Array<Scalar, Eigen::Dynamic, 1> grad;
  bool requires_grad = false;
  bool leaf = true;
};

}  // namespace detail

/// Shared handle to a dense row-major array with optional gradient tracking.
///
/// Copies of a tensor alias the same storage, which is what lets the tape
/// route gradients back to parameters. Use detach() for an independent copy.
template <class Scalar>
class BasicTensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  BasicTensor() = default;
  BasicTensor(Shape shape, Array data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, Scalar value, bool requires_grad = false);
  static BasicTensor scalar(Scalar value, bool requires_grad = false);
  static BasicTensor from_vector(Shape shape, const std::vector<Scalar>& values,
                                 bool requires_grad = false);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return storage().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return static_cast<std::size_t>(storage().data.size()); }

  const Array& data() const { return storage().data; }
  // Only leaves may be written in place; op outputs are owned by the tape.
  Array& mutable_data();
  Scalar item() const;
  Scalar operator[](std::size_t flat_index) const { return storage().data[flat_index]; }

  bool requires_grad() const { return storage().requires_grad; }
  BasicTensor& set_requires_grad(bool value);
  bool is_leaf() const { return storage().leaf; }
  bool has_grad() const { return storage().grad.size() != 0; }
  const Array& grad() const { return storage().grad; }
  void zero_grad();

  Eigen::Map<const RowMatrix> matrix() const;

  BasicTensor detach() const;
  template <class Other>
  BasicTensor<Other> cast() const {
    BasicTensor<Other> out(shape(), data().template cast<Other>(), requires_grad());
    return out;
  }
  bool same_as(const BasicTensor& other) const { return storage_ == other.storage_; }

  detail::TensorStorage<Scalar>& storage() const;

 private:
  std::shared_ptr<detail::TensorStorage<Scalar>> storage_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Ordered record of differentiable operations for one forward pass.
class Tape {
 public:
  struct Node {
    std::string op;
    std::function<void()> reset_grad;
    std::function<void()> backward;
  };

  void push(Node node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear();

  void reset_intermediate_grads();
  void run_backward();
  const std::vector<std::size_t>& last_visit_order() const { return visit_order_; }

 private:
  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
};

// Each thread records onto its own tape.
Tape& active_tape();

class TapeScope {
 public:
  TapeScope();
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  Tape& tape() { return tape_; }

 private:
  Tape tape_;
  Tape* previous_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse sweep from a single-element output over the active tape.
///
/// Leaf gradients accumulate across calls; intermediate gradients are reset
/// at the start of each sweep. When `only` is non-empty, leaves outside it
/// receive nothing (used to keep shared model parameters untouched).
template <class Scalar>
void backward(const BasicTensor<Scalar>& output);
template <class Scalar>
void backward(const BasicTensor<Scalar>& output, std::span<const BasicTensor<Scalar>> only);

namespace autodiff {

bool leaf_selected(const void* storage);

template <class... Tensors>
bool should_record(const Tensors&... inputs) {
  return grad_enabled() && (inputs.requires_grad() || ...);
}

template <class Scalar>
bool wants_grad(const BasicTensor<Scalar>& t) {
  auto& st = t.storage();
  if (!st.requires_grad) return false;
  return !st.leaf || leaf_selected(&st);
}

template <class Scalar, class Expr>
void accumulate_grad(const BasicTensor<Scalar>& t, const Expr& g) {
  auto& st = t.storage();
  if (st.grad.size() == 0) st.grad.setZero(st.data.size());
  st.grad += g;
}

/// Registers `out` as the result of a differentiable op on the active tape.
template <class Scalar>
void record(const BasicTensor<Scalar>& out, std::string op, std::function<void()> backward_rule) {
  auto& st = out.storage();
  st.requires_grad = true;
  st.leaf = false;
  active_tape().push(Tape::Node{
      std::move(op),
      [out] {
        auto& s = out.storage();
        s.grad.setZero(s.data.size());
      },
      std::move(backward_rule),
  });
}

}  // namespace autodiff

}  // namespace gabvit
