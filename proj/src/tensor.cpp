#include "gabvit/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace gabvit {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class Scalar>
BasicTensor<Scalar>::BasicTensor(Shape shape, Array data, bool requires_grad)
    : storage_(std::make_shared<detail::TensorStorage<Scalar>>()) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != static_cast<std::size_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_string(shape));
  }
  storage_->shape = std::move(shape);
  storage_->data = std::move(data);
  storage_->requires_grad = requires_grad;
}

template <class Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  const auto n = static_cast<Eigen::Index>(shape_numel(shape));
  return BasicTensor(std::move(shape), Array::Zero(n), requires_grad);
}

template <class Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::full(Shape shape, Scalar value, bool requires_grad) {
  const auto n = static_cast<Eigen::Index>(shape_numel(shape));
  return BasicTensor(std::move(shape), Array::Constant(n, value), requires_grad);
}

template <class Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::scalar(Scalar value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

template <class Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::from_vector(Shape shape, const std::vector<Scalar>& values,
                                                     bool requires_grad) {
  Array data = Eigen::Map<const Array>(values.data(), static_cast<Eigen::Index>(values.size()));
  return BasicTensor(std::move(shape), std::move(data), requires_grad);
}

template <class Scalar>
detail::TensorStorage<Scalar>& BasicTensor<Scalar>::storage() const {
  if (!storage_) throw std::logic_error("use of an undefined tensor");
  return *storage_;
}

template <class Scalar>
std::size_t BasicTensor<Scalar>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape()));
  }
  return shape()[axis];
}

template <class Scalar>
typename BasicTensor<Scalar>::Array& BasicTensor<Scalar>::mutable_data() {
  if (!is_leaf()) throw std::logic_error("cannot write into the output of a recorded op");
  return storage().data;
}

template <class Scalar>
Scalar BasicTensor<Scalar>::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_string(shape()));
  return data()[0];
}

template <class Scalar>
BasicTensor<Scalar>& BasicTensor<Scalar>::set_requires_grad(bool value) {
  storage().requires_grad = value;
  return *this;
}

template <class Scalar>
void BasicTensor<Scalar>::zero_grad() {
  storage().grad.resize(0);
}

template <class Scalar>
Eigen::Map<const typename BasicTensor<Scalar>::RowMatrix> BasicTensor<Scalar>::matrix() const {
  if (rank() != 2) throw ShapeError("matrix view needs rank 2, got " + shape_string(shape()));
  return Eigen::Map<const RowMatrix>(data().data(), static_cast<Eigen::Index>(shape()[0]),
                                     static_cast<Eigen::Index>(shape()[1]));
}

template <class Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::detach() const {
  return BasicTensor(shape(), data(), false);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

// ---------------------------------------------------------------------------

namespace {

thread_local Tape default_tape;
thread_local Tape* current_tape = nullptr;
thread_local bool grad_mode = true;
thread_local const std::unordered_set<const void*>* leaf_filter = nullptr;

}  // namespace

void Tape::clear() {
  nodes_.clear();
  visit_order_.clear();
}

void Tape::reset_intermediate_grads() {
  for (auto& node : nodes_) node.reset_grad();
}

void Tape::run_backward() {
  visit_order_.clear();
  visit_order_.reserve(nodes_.size());
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    visit_order_.push_back(i);
    nodes_[i].backward();
  }
}

Tape& active_tape() { return current_tape ? *current_tape : default_tape; }

TapeScope::TapeScope() : previous_(current_tape) { current_tape = &tape_; }
TapeScope::~TapeScope() { current_tape = previous_; }

bool grad_enabled() { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

namespace autodiff {

bool leaf_selected(const void* storage) {
  return leaf_filter == nullptr || leaf_filter->contains(storage);
}

}  // namespace autodiff

namespace {

template <class Scalar>
void sweep(const BasicTensor<Scalar>& output) {
  if (!output.defined() || output.numel() != 1) {
    throw ShapeError("backward needs a single-element output, got " +
                     (output.defined() ? shape_string(output.shape()) : std::string("undefined")));
  }
  if (!output.requires_grad()) throw std::logic_error("backward on a tensor that does not require grad");
  auto& tape = active_tape();
  tape.reset_intermediate_grads();
  if (autodiff::wants_grad(output)) {
    autodiff::accumulate_grad(output, BasicTensor<Scalar>::Array::Ones(1));
  }
  tape.run_backward();
}

}  // namespace

template <class Scalar>
void backward(const BasicTensor<Scalar>& output) {
  sweep(output);
}

template <class Scalar>
void backward(const BasicTensor<Scalar>& output, std::span<const BasicTensor<Scalar>> only) {
  if (only.empty()) {
    sweep(output);
    return;
  }
  std::unordered_set<const void*> selected;
  for (const auto& t : only) selected.insert(&t.storage());
  const auto* previous = leaf_filter;
  leaf_filter = &selected;
  try {
    sweep(output);
  } catch (...) {
    leaf_filter = previous;
    throw;
  }
  leaf_filter = previous;
}

template void backward(const BasicTensor<float>&);
template void backward(const BasicTensor<double>&);
template void backward(const BasicTensor<float>&, std::span<const BasicTensor<float>>);
template void backward(const BasicTensor<double>&, std::span<const BasicTensor<double>>);

}  // namespace gabvit
