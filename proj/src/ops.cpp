#include "goat/ops.hpp"

#include "goat/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace goat {

Tensor CsrMatrix::to_dense() const
{
    Tensor d(Shape{n_rows, n_cols});
    for (std::size_t r = 0; r < n_rows; ++r)
        for (std::size_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e)
            d.at(r, col_idx[e]) += values[e];
    return d;
}

namespace {

std::string pair_str(const char* op, const Tensor& a, const Tensor& b)
{
    return std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape());
}

void require_matrix(const char* op, const Tensor& t)
{
    if (t.rank() != 2)
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

// How a binary elementwise op lines its operands up.
enum class Bcast { none, a_row, b_row };

Bcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b)
{
    if (a.shape() == b.shape())
        return Bcast::none;
    if (a.numel() == b.numel() && a.rows() == b.rows() && a.cols() == b.cols())
        return Bcast::none; // [n] vs [1 x n]
    if (b.rows() == 1 && b.cols() == a.cols())
        return Bcast::b_row;
    if (a.rows() == 1 && a.cols() == b.cols())
        return Bcast::a_row;
    throw DimensionError(pair_str(op, a, b));
}

// Elementwise binary op with analytic partials da(x, y), db(x, y).
template <class F, class DA, class DB>
Var binary(const char* op, Var a, Var b, F f, DA da, DB db)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Bcast kind = broadcast_kind(op, av, bv);
    const Tensor& big = kind == Bcast::a_row ? bv : av;
    const std::size_t n = big.numel();
    const std::size_t cols = big.cols();

    Tensor out(big.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double x = kind == Bcast::a_row ? av[i % cols] : av[i];
        const double y = kind == Bcast::b_row ? bv[i % cols] : bv[i];
        out[i] = f(x, y);
    }
    const int ia = a.id();
    const int ib = b.id();
    return a.tape().record(op, std::move(out), {a, b}, [=](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(ib);
        Tensor* ga = t.grad_slot(ia);
        Tensor* gb = t.grad_slot(ib);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ix = kind == Bcast::a_row ? i % cols : i;
            const std::size_t iy = kind == Bcast::b_row ? i % cols : i;
            if (ga)
                (*ga)[ix] += g[i] * da(x[ix], y[iy]);
            if (gb)
                (*gb)[iy] += g[i] * db(x[ix], y[iy]);
        }
    });
}

// Elementwise unary op whose derivative is expressed through input x and output y.
template <class F, class D>
Var unary(const char* op, Var x, F f, D d)
{
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i)
        out[i] = f(xv[i]);
    const int ix = x.id();
    Tape& tape = x.tape();
    const int iy = static_cast<int>(tape.size());
    return tape.record(op, std::move(out), {x}, [=](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(ix);
        if (!gx)
            return;
        const Tensor& in = t.value(ix);
        const Tensor& y = t.value(iy);
        for (std::size_t i = 0; i < g.numel(); ++i)
            (*gx)[i] += g[i] * d(in[i], y[i]);
    });
}

} // namespace

// ---- linear algebra -------------------------------------------------------

Var matmul(Var a, Var b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_matrix("matmul", av);
    require_matrix("matmul", bv);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    if (bv.rows() != k)
        throw DimensionError(pair_str("matmul", av, bv));

    Tensor out(Shape{m, n});
    const double* A = av.data().data();
    const double* B = bv.data().data();
    double* C = out.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0)
                continue;
            const double* brow = B + p * n;
            double* crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j)
                crow[j] += aip * brow[j];
        }

    const int ia = a.id(), ib = b.id();
    return a.tape().record("matmul", std::move(out), {a, b}, [=](Tape& t, const Tensor& g) {
        const double* G = g.data().data();
        const double* A = t.value(ia).data().data();
        const double* B = t.value(ib).data().data();
        if (Tensor* ga = t.grad_slot(ia)) {
            // dA = G * B^T
            double* dA = ga->data().data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    const double* grow = G + i * n;
                    const double* brow = B + p * n;
                    for (std::size_t j = 0; j < n; ++j)
                        s += grow[j] * brow[j];
                    dA[i * k + p] += s;
                }
        }
        if (Tensor* gb = t.grad_slot(ib)) {
            // dB = A^T * G
            double* dB = gb->data().data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = A[i * k + p];
                    if (aip == 0.0)
                        continue;
                    const double* grow = G + i * n;
                    double* drow = dB + p * n;
                    for (std::size_t j = 0; j < n; ++j)
                        drow[j] += aip * grow[j];
                }
        }
    });
}

Var matmul_nt(Var a, Var b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_matrix("matmul_nt", av);
    require_matrix("matmul_nt", bv);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
    if (bv.cols() != k)
        throw DimensionError(pair_str("matmul_nt", av, bv));

    Tensor out(Shape{m, n});
    const double* A = av.data().data();
    const double* B = bv.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                s += A[i * k + p] * B[j * k + p];
            out[i * n + j] = s;
        }

    const int ia = a.id(), ib = b.id();
    return a.tape().record("matmul_nt", std::move(out), {a, b}, [=](Tape& t, const Tensor& g) {
        const double* A = t.value(ia).data().data();
        const double* B = t.value(ib).data().data();
        Tensor* ga = t.grad_slot(ia);
        Tensor* gb = t.grad_slot(ib);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double gij = g[i * n + j];
                if (gij == 0.0)
                    continue;
                if (ga) {
                    double* da = ga->data().data() + i * k;
                    for (std::size_t p = 0; p < k; ++p)
                        da[p] += gij * B[j * k + p];
                }
                if (gb) {
                    double* db = gb->data().data() + j * k;
                    for (std::size_t p = 0; p < k; ++p)
                        db[p] += gij * A[i * k + p];
                }
            }
    });
}

Var transpose(Var a)
{
    const Tensor& av = a.value();
    require_matrix("transpose", av);
    const std::size_t m = av.rows(), n = av.cols();
    Tensor out(Shape{n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[j * m + i] = av[i * n + j];
    const int ia = a.id();
    return a.tape().record("transpose", std::move(out), {a}, [=](Tape& t, const Tensor& g) {
        if (Tensor* ga = t.grad_slot(ia))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    (*ga)[i * n + j] += g[j * m + i];
    });
}

Var spmm(const CsrMatrix& mat, Var x)
{
    const Tensor& xv = x.value();
    require_matrix("spmm", xv);
    if (mat.n_cols != xv.rows())
        throw DimensionError("spmm: sparse matrix " + std::to_string(mat.n_rows) + "x" + std::to_string(mat.n_cols) +
                             " against " + shape_str(xv.shape()));
    const std::size_t n = xv.cols();
    Tensor out(Shape{mat.n_rows, n});
    for (std::size_t r = 0; r < mat.n_rows; ++r) {
        double* orow = out.data().data() + r * n;
        for (std::size_t e = mat.row_ptr[r]; e < mat.row_ptr[r + 1]; ++e) {
            const double w = mat.values[e];
            const double* xrow = xv.data().data() + mat.col_idx[e] * n;
            for (std::size_t j = 0; j < n; ++j)
                orow[j] += w * xrow[j];
        }
    }
    const int ix = x.id();
    // The matrix is copied so the closure never outlives its operand.
    return x.tape().record("spmm", std::move(out), {x}, [=, m = mat](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(ix);
        if (!gx)
            return;
        for (std::size_t r = 0; r < m.n_rows; ++r) {
            const double* grow = g.data().data() + r * n;
            for (std::size_t e = m.row_ptr[r]; e < m.row_ptr[r + 1]; ++e) {
                const double w = m.values[e];
                double* drow = gx->data().data() + m.col_idx[e] * n;
                for (std::size_t j = 0; j < n; ++j)
                    drow[j] += w * grow[j];
            }
        }
    });
}

// ---- elementwise ----------------------------------------------------------

Var add(Var a, Var b)
{
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Var sub(Var a, Var b)
{
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Var mul(Var a, Var b)
{
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Var div(Var a, Var b)
{
    return binary(
        "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Var scale(Var a, double s)
{
    return unary(
        "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var tanh(Var x)
{
    return unary(
        "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x)
{
    return unary(
        "sigmoid", x,
        [](double v) {
            if (v >= 0)
                return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var x)
{
    return unary(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var pointwise(Var x, Pointwise fn)
{
    switch (fn) {
    case Pointwise::tanh:
        return tanh(x);
    case Pointwise::sigm:
        return sigmoid(x);
    case Pointwise::relu:
        return relu(x);
    default:
        throw ContractError("pointwise: binary function applied to one operand");
    }
}

Var pointwise(Var a, Var b, Pointwise fn)
{
    switch (fn) {
    case Pointwise::add:
        return add(a, b);
    case Pointwise::mul:
        return mul(a, b);
    default:
        throw ContractError("pointwise: unary function applied to two operands");
    }
}

// ---- reductions and reshapes ---------------------------------------------

Var sum(Var x)
{
    const Tensor& xv = x.value();
    double s = 0.0;
    for (double v : xv.data())
        s += v;
    const int ix = x.id();
    return x.tape().record("sum", Tensor::scalar(s), {x}, [=](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_slot(ix))
            for (double& v : gx->data())
                v += g[0];
    });
}

Var mean_rows(Var x)
{
    const Tensor& xv = x.value();
    const std::size_t m = xv.rows(), n = xv.cols();
    Tensor out(Shape{1, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[j] += xv[i * n + j];
    const double inv = 1.0 / static_cast<double>(m);
    for (double& v : out.data())
        v *= inv;
    const int ix = x.id();
    return x.tape().record("mean_rows", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_slot(ix))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    (*gx)[i * n + j] += g[j] * inv;
    });
}

Var max_rows(Var x)
{
    const Tensor& xv = x.value();
    const std::size_t m = xv.rows(), n = xv.cols();
    Tensor out(Shape{1, n});
    std::vector<std::size_t> arg(n, 0);
    for (std::size_t j = 0; j < n; ++j) {
        double best = xv[j];
        for (std::size_t i = 1; i < m; ++i)
            if (xv[i * n + j] > best) {
                best = xv[i * n + j];
                arg[j] = i;
            }
        out[j] = best;
    }
    const int ix = x.id();
    return x.tape().record("max_rows", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_slot(ix))
            for (std::size_t j = 0; j < n; ++j)
                (*gx)[arg[j] * n + j] += g[j];
    });
}

Var reshape(Var x, Shape shape)
{
    Tensor out = x.value().reshaped(std::move(shape));
    const int ix = x.id();
    return x.tape().record("reshape", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_slot(ix))
            for (std::size_t i = 0; i < g.numel(); ++i)
                (*gx)[i] += g[i];
    });
}

Var gather_rows(Var x, const std::vector<std::size_t>& idx)
{
    const Tensor& xv = x.value();
    const std::size_t m = xv.rows(), n = xv.cols();
    if (idx.empty())
        throw ContractError("gather_rows: empty index list");
    Tensor out(Shape{idx.size(), n});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= m)
            throw DimensionError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                                 shape_str(xv.shape()));
        std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * n), n,
                    out.data().begin() + static_cast<std::ptrdiff_t>(r * n));
    }
    const int ix = x.id();
    return x.tape().record("gather_rows", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(ix);
        if (!gx)
            return;
        for (std::size_t r = 0; r < idx.size(); ++r) {
            double* drow = gx->data().data() + idx[r] * n;
            const double* grow = g.data().data() + r * n;
            for (std::size_t j = 0; j < n; ++j)
                drow[j] += grow[j];
        }
    });
}

namespace {

void check_offsets(const char* op, const std::vector<std::size_t>& offsets, std::size_t rows)
{
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows)
        throw DimensionError(std::string(op) + ": segment offsets do not cover " + std::to_string(rows) + " rows");
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
        if (offsets[s + 1] < offsets[s])
            throw DimensionError(std::string(op) + ": segment offsets not monotone");
}

} // namespace

Var segment_sum(Var x, const std::vector<std::size_t>& offsets)
{
    const Tensor& xv = x.value();
    const std::size_t n = xv.cols();
    check_offsets("segment_sum", offsets, xv.rows());
    const std::size_t segs = offsets.size() - 1;
    Tensor out(Shape{segs, n});
    for (std::size_t s = 0; s < segs; ++s)
        for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
            for (std::size_t j = 0; j < n; ++j)
                out[s * n + j] += xv[r * n + j];
    const int ix = x.id();
    return x.tape().record("segment_sum", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_slot(ix))
            for (std::size_t s = 0; s < segs; ++s)
                for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
                    for (std::size_t j = 0; j < n; ++j)
                        (*gx)[r * n + j] += g[s * n + j];
    });
}

Var block_sum_cols(Var x, std::size_t block)
{
    const Tensor& xv = x.value();
    const std::size_t m = xv.rows(), n = xv.cols();
    if (block == 0 || n % block != 0)
        throw DimensionError("block_sum_cols: width " + std::to_string(n) + " not divisible by " +
                             std::to_string(block));
    const std::size_t groups = n / block;
    Tensor out(Shape{m, groups});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < n; ++c)
            out[i * groups + c / block] += xv[i * n + c];
    const int ix = x.id();
    return x.tape().record("block_sum_cols", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_slot(ix))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t c = 0; c < n; ++c)
                    (*gx)[i * n + c] += g[i * groups + c / block];
    });
}

Var repeat_cols(Var x, std::size_t times)
{
    const Tensor& xv = x.value();
    const std::size_t m = xv.rows(), groups = xv.cols();
    if (times == 0)
        throw DimensionError("repeat_cols: zero repeat count");
    const std::size_t n = groups * times;
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < n; ++c)
            out[i * n + c] = xv[i * groups + c / times];
    const int ix = x.id();
    return x.tape().record("repeat_cols", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_slot(ix))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t c = 0; c < n; ++c)
                    (*gx)[i * groups + c / times] += g[i * n + c];
    });
}

// ---- normalisation ----------------------------------------------------------

Var softmax_lastdim(Var x, const std::vector<bool>& mask)
{
    const Tensor& xv = x.value();
    const std::size_t m = xv.numel() / xv.cols(), n = xv.cols();
    if (!mask.empty() && mask.size() != xv.numel())
        throw DimensionError("softmax_lastdim: mask has " + std::to_string(mask.size()) + " entries for " +
                             shape_str(xv.shape()));
    auto live = [&](std::size_t i) { return mask.empty() || mask[i]; };

    Tensor out(xv.shape());
    for (std::size_t r = 0; r < m; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j)
            if (live(r * n + j))
                mx = std::max(mx, xv[r * n + j]);
        if (mx == -std::numeric_limits<double>::infinity())
            throw DegenerateRowError("softmax_lastdim: row " + std::to_string(r) + " is fully masked");
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (live(r * n + j)) {
                out[r * n + j] = std::exp(xv[r * n + j] - mx);
                z += out[r * n + j];
            }
        for (std::size_t j = 0; j < n; ++j)
            out[r * n + j] /= z;
    }

    const int ix = x.id();
    Tape& tape = x.tape();
    const int iy = static_cast<int>(tape.size());
    return tape.record("softmax_lastdim", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(ix);
        if (!gx)
            return;
        const Tensor& y = t.value(iy);
        for (std::size_t r = 0; r < m; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                dot += g[r * n + j] * y[r * n + j];
            for (std::size_t j = 0; j < n; ++j)
                (*gx)[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
        }
    });
}

Var segment_softmax(Var x, const std::vector<std::size_t>& offsets)
{
    const Tensor& xv = x.value();
    const std::size_t n = xv.cols();
    check_offsets("segment_softmax", offsets, xv.rows());
    const std::size_t segs = offsets.size() - 1;

    Tensor out(xv.shape());
    for (std::size_t s = 0; s < segs; ++s) {
        const std::size_t lo = offsets[s], hi = offsets[s + 1];
        if (lo == hi)
            throw DegenerateRowError("segment_softmax: segment " + std::to_string(s) + " is empty");
        for (std::size_t j = 0; j < n; ++j) {
            double mx = xv[lo * n + j];
            for (std::size_t r = lo + 1; r < hi; ++r)
                mx = std::max(mx, xv[r * n + j]);
            double z = 0.0;
            for (std::size_t r = lo; r < hi; ++r) {
                out[r * n + j] = std::exp(xv[r * n + j] - mx);
                z += out[r * n + j];
            }
            for (std::size_t r = lo; r < hi; ++r)
                out[r * n + j] /= z;
        }
    }

    const int ix = x.id();
    Tape& tape = x.tape();
    const int iy = static_cast<int>(tape.size());
    return tape.record("segment_softmax", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_slot(ix);
        if (!gx)
            return;
        const Tensor& y = t.value(iy);
        for (std::size_t s = 0; s < segs; ++s)
            for (std::size_t j = 0; j < n; ++j) {
                double dot = 0.0;
                for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
                    dot += g[r * n + j] * y[r * n + j];
                for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
                    (*gx)[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
            }
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps)
{
    const Tensor& xv = x.value();
    const std::size_t m = xv.rows(), n = xv.cols();
    if (gamma.value().numel() != n || beta.value().numel() != n)
        throw DimensionError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" +
                             shape_str(beta.shape()) + " for input " + shape_str(xv.shape()));
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();

    Tensor out(xv.shape());
    std::vector<double> xhat(m * n);
    std::vector<double> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            mu += xv[i * n + j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = xv[i * n + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (xv[i * n + j] - mu) * inv_std[i];
            out[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
        }
    }

    const int ix = x.id(), ig = gamma.id(), ib = beta.id();
    return x.tape().record("layer_norm", std::move(out), {x, gamma, beta},
                           [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
                               const Tensor& gam = t.value(ig);
                               Tensor* gx = t.grad_slot(ix);
                               Tensor* gg = t.grad_slot(ig);
                               Tensor* gb = t.grad_slot(ib);
                               const double inv_n = 1.0 / static_cast<double>(n);
                               for (std::size_t i = 0; i < m; ++i) {
                                   double mean_d = 0.0, mean_dx = 0.0;
                                   for (std::size_t j = 0; j < n; ++j) {
                                       const double d = g[i * n + j] * gam[j];
                                       mean_d += d;
                                       mean_dx += d * xhat[i * n + j];
                                       if (gg)
                                           (*gg)[j] += g[i * n + j] * xhat[i * n + j];
                                       if (gb)
                                           (*gb)[j] += g[i * n + j];
                                   }
                                   mean_d *= inv_n;
                                   mean_dx *= inv_n;
                                   if (gx)
                                       for (std::size_t j = 0; j < n; ++j) {
                                           const double d = g[i * n + j] * gam[j];
                                           (*gx)[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
                                       }
                               }
                           });
}

// ---- loss ----------------------------------------------------------------

Var cross_entropy(Var logits, std::size_t label)
{
    const Tensor& z = logits.value();
    const std::size_t c = z.numel();
    if (label >= c)
        throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                            std::to_string(c) + " classes");
    double mx = z[0];
    for (std::size_t j = 1; j < c; ++j)
        mx = std::max(mx, z[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j)
        s += std::exp(z[j] - mx);
    const double lse = mx + std::log(s);
    const int iz = logits.id();
    return logits.tape().record("cross_entropy", Tensor::scalar(lse - z[label]), {logits},
                                [=](Tape& t, const Tensor& g) {
                                    Tensor* gz = t.grad_slot(iz);
                                    if (!gz)
                                        return;
                                    const Tensor& zz = t.value(iz);
                                    for (std::size_t j = 0; j < c; ++j) {
                                        const double p = std::exp(zz[j] - lse);
                                        (*gz)[j] += g[0] * (p - (j == label ? 1.0 : 0.0));
                                    }
                                });
}

// ---- verification ----------------------------------------------------------

double grad_check(const ScalarFn& f, const Tensor& x, double eps)
{
    if (!x.all_finite())
        throw NumericError("grad_check: input is not finite");

    auto evaluate = [&](const Tensor& at) {
        Tape tape;
        Var out = f(tape, tape.leaf(at, false));
        if (out.value().numel() != 1)
            throw ContractError("grad_check: function is not scalar-valued");
        const double v = out.value()[0];
        if (!std::isfinite(v))
            throw NumericError("grad_check: function evaluated to a non-finite value");
        return v;
    };

    Tape tape;
    Var leaf = tape.leaf(x, true);
    Var out = f(tape, leaf);
    if (out.value().numel() != 1)
        throw ContractError("grad_check: function is not scalar-valued");
    if (!std::isfinite(out.value()[0]))
        throw NumericError("grad_check: function evaluated to a non-finite value");
    const GradMap grads = tape.backward(out);
    const Tensor analytic = grads.contains(leaf) ? grads.at(leaf) : Tensor::zeros_like(x);

    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        probe[i] = x[i] + eps;
        const double up = evaluate(probe);
        probe[i] = x[i] - eps;
        const double down = evaluate(probe);
        probe[i] = x[i];
        const double numeric = (up - down) / (2.0 * eps);
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

} // namespace goat
