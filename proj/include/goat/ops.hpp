#pragma once

#include "goat/tape.hpp"

#include <cstddef>
#include <functional>
#include <vector>

namespace goat {

/// Compressed sparse row matrix with constant (non-trainable) values.
struct CsrMatrix {
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    std::vector<std::size_t> row_ptr; // n_rows + 1
    std::vector<std::size_t> col_idx;
    std::vector<double> values;

    std::size_t nnz() const { return values.size(); }
    Tensor to_dense() const;
};

// ---- linear algebra -------------------------------------------------------

// a[m x k] * b[k x n]
Var matmul(Var a, Var b);
// a[m x k] * b[n x k]^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
// Constant sparse matrix times dense x.
Var spmm(const CsrMatrix& m, Var x);

// ---- elementwise ----------------------------------------------------------
//
// Binary ops accept equal shapes, or one operand with a single row whose
// width matches the other's column count (bias-style broadcast over rows).

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);

Var tanh(Var x);
Var sigmoid(Var x);
Var relu(Var x);

enum class Pointwise { tanh, sigm, relu, add, mul };
Var pointwise(Var x, Pointwise fn);
Var pointwise(Var a, Var b, Pointwise fn);

// ---- reductions and reshapes ---------------------------------------------

Var sum(Var x);       // -> scalar
Var mean_rows(Var x); // [m x n] -> [1 x n]
Var max_rows(Var x);  // [m x n] -> [1 x n]; ties go to the lowest row
Var reshape(Var x, Shape shape);

// Rows of x picked by index, [idx.size() x n].
Var gather_rows(Var x, const std::vector<std::size_t>& idx);
// Sum of consecutive row blocks: output row s sums rows [offsets[s], offsets[s+1]).
Var segment_sum(Var x, const std::vector<std::size_t>& offsets);
// [m x (b*g)] -> [m x g], summing each contiguous block of b columns.
Var block_sum_cols(Var x, std::size_t block);
// [m x g] -> [m x (g*times)], each column repeated `times` times contiguously.
Var repeat_cols(Var x, std::size_t times);

// ---- normalisation ----------------------------------------------------------

// Softmax over the last axis, max-subtracted. `mask` (same numel as x, empty
// for none) marks entries that take part; masked-out entries become exactly 0.
Var softmax_lastdim(Var x, const std::vector<bool>& mask = {});
// Softmax down the rows of each segment, independently per column.
Var segment_softmax(Var x, const std::vector<std::size_t>& offsets);
// Per-row layer normalisation with affine gamma/beta of width n.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

// ---- loss ----------------------------------------------------------------

// -log softmax(logits)[label], log-sum-exp stabilised.
Var cross_entropy(Var logits, std::size_t label);

// ---- verification ----------------------------------------------------------

using ScalarFn = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|, |numeric|).
///
/// `f` must build a fresh computation on the given tape from the leaf it is
/// handed and return a scalar.
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

} // namespace goat
