#pragma once

#include "gabvit/tensor.hpp"

#include <array>
#include <memory>
#include <string_view>
#include <vector>

namespace gabvit {

using IndexList = std::shared_ptr<const std::vector<std::size_t>>;

// Every op below that records a backward rule, by the name it records under.
inline constexpr std::array<std::string_view, 16> kEngineOps = {
    "add",       "mul",          "mul_scalar",         "add_scalar",
    "exp",       "relu",         "gelu",               "sum",
    "mean_over_dim", "transpose_last_two", "reshape",  "gather",
    "matmul",    "softmax_lastdim", "layernorm",       "cross_entropy",
};

template <class Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);

template <class Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);

// Elementwise product of equally shaped tensors.
template <class Scalar>
BasicTensor<Scalar> mul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);

template <class Scalar>
BasicTensor<Scalar> mul_scalar(const BasicTensor<Scalar>& a, Scalar s);

template <class Scalar>
BasicTensor<Scalar> add_scalar(const BasicTensor<Scalar>& a, Scalar s);

template <class Scalar>
BasicTensor<Scalar> exp(const BasicTensor<Scalar>& a);

template <class Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& a);

/// Tanh-approximated GELU.
template <class Scalar>
BasicTensor<Scalar> gelu(const BasicTensor<Scalar>& a);

template <class Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& a);

/// Mean along `axis`; the axis is removed (a rank-1 input yields shape [1]).
template <class Scalar>
BasicTensor<Scalar> mean_over_dim(const BasicTensor<Scalar>& a, std::size_t axis);

template <class Scalar>
BasicTensor<Scalar> transpose_last_two(const BasicTensor<Scalar>& a);

template <class Scalar>
BasicTensor<Scalar> reshape(const BasicTensor<Scalar>& a, Shape shape);

/// out.flat[i] = a.flat[indices[i]]; the backward rule scatter-adds.
///
/// This is the workhorse for patch partition, head slicing, broadcasting and
/// the relative-position lookups.
template <class Scalar>
BasicTensor<Scalar> gather(const BasicTensor<Scalar>& a, IndexList indices, Shape shape);

/// Softmax over the last axis with max subtraction. Rejects non-finite input.
template <class Scalar>
BasicTensor<Scalar> softmax_lastdim(const BasicTensor<Scalar>& a);

template <class Scalar>
BasicTensor<Scalar> layernorm(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& gain,
                              const BasicTensor<Scalar>& bias, Scalar eps);

/// -log softmax(logits)[label] for a rank-1 logit vector; shape [1].
template <class Scalar>
BasicTensor<Scalar> cross_entropy(const BasicTensor<Scalar>& logits, std::size_t label);

// Conveniences composed from the ops above.

IndexList make_indices(std::vector<std::size_t> indices);

template <class Scalar>
BasicTensor<Scalar> select_columns(const BasicTensor<Scalar>& a, std::size_t first, std::size_t count);

template <class Scalar>
BasicTensor<Scalar> select_rows(const BasicTensor<Scalar>& a, std::size_t first, std::size_t count);

/// Slice `index` along the leading axis of a rank-3 tensor, as a matrix.
template <class Scalar>
BasicTensor<Scalar> select_leading(const BasicTensor<Scalar>& a, std::size_t index);

/// Repeats a rank-1 tensor [D] into [rows x D].
template <class Scalar>
BasicTensor<Scalar> broadcast_rows(const BasicTensor<Scalar>& v, std::size_t rows);

/// x W (+ b broadcast over rows).
template <class Scalar>
BasicTensor<Scalar> linear(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& weight,
                           const BasicTensor<Scalar>* bias = nullptr);

}  // namespace gabvit
