#pragma once

// Tape-based reverse-mode differentiation over rank-2 double arrays.
//
// A Tape records every value produced by a forward pass together with a
// closure that pushes its adjoint to its inputs. backward() replays the
// closures in exact reverse recording order; adjoints accumulate additively.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "meshdiff/core.hpp"
#include "meshdiff/sparse.hpp"

namespace meshdiff::ad {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Mat& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    double scalar() const;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Mat v) { return push(std::move(v), false, nullptr); }
    Var parameter(Mat v) { return push(std::move(v), true, nullptr); }

    Var constant_scalar(double x) {
        Mat m(1, 1);
        m(0, 0) = x;
        return constant(std::move(m));
    }

    /// Records a value computed from `inputs`; `back` receives this value's
    /// adjoint and must add into the inputs' adjoints via accumulate().
    Var record(Mat v, std::initializer_list<Var> inputs, std::function<void(const Mat&)> back) {
        bool rg = false;
        for (const auto& in : inputs) {
            check_owned(in);
            rg = rg || nodes_[in.id].requires_grad;
        }
        return push(std::move(v), rg, rg ? std::move(back) : nullptr);
    }

    Var record(Mat v, const std::vector<Var>& inputs, std::function<void(const Mat&)> back) {
        bool rg = false;
        for (const auto& in : inputs) {
            check_owned(in);
            rg = rg || nodes_[in.id].requires_grad;
        }
        return push(std::move(v), rg, rg ? std::move(back) : nullptr);
    }

    const Mat& value(Var v) const { return nodes_[v.id].value; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    /// Adds `g` into the adjoint of `v` (no-op for constants).
    void accumulate(Var v, const Mat& g) {
        Node& n = nodes_[v.id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        n.grad.noalias() += g;
    }

    template <class Fn>
    void accumulate_with(Var v, Fn&& fn) {
        Node& n = nodes_[v.id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        fn(n.grad);
    }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded value.
    void backward(Var loss) {
        check_owned(loss);
        require(value(loss).size() == 1, "backward: loss must be a 1x1 value");
        for (auto& n : nodes_) n.grad.resize(0, 0);
        accumulate(loss, Mat::Ones(1, 1));
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward && n.grad.size() != 0) n.backward(n.grad);
        }
    }

    /// Adjoint after backward(); zeros when the value did not influence the loss.
    Mat grad(Var v) const {
        const Node& n = nodes_[v.id];
        if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad;
        std::function<void(const Mat&)> backward;
    };

    Var push(Mat v, bool rg, std::function<void(const Mat&)> back) {
        nodes_.push_back({std::move(v), Mat(), rg, std::move(back)});
        return Var{this, nodes_.size() - 1};
    }

    void check_owned(Var v) const {
        if (v.tape != this || v.id >= nodes_.size()) throw ValidationError("value does not belong to this tape");
    }

    std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape->value(*this); }
inline double Var::scalar() const {
    require(value().size() == 1, "scalar(): value is not 1x1");
    return value()(0, 0);
}

namespace detail {
inline void same_shape(Var a, Var b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ValidationError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()) + ")");
}
inline void same_tape(Var a, Var b, const char* op) {
    if (a.tape != b.tape) throw ValidationError(std::string(op) + ": operands on different tapes");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

inline Var matmul(Var a, Var b) {
    detail::same_tape(a, b, "matmul");
    if (a.cols() != b.rows())
        throw ValidationError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                              std::to_string(b.rows()) + ")");
    Tape& t = *a.tape;
    Mat out = a.value() * b.value();
    return t.record(std::move(out), {a, b}, [&t, a, b](const Mat& g) {
        if (t.requires_grad(a)) t.accumulate_with(a, [&](Mat& ga) { ga.noalias() += g * b.value().transpose(); });
        if (t.requires_grad(b)) t.accumulate_with(b, [&](Mat& gb) { gb.noalias() += a.value().transpose() * g; });
    });
}

inline Var add(Var a, Var b) {
    detail::same_tape(a, b, "add");
    detail::same_shape(a, b, "add");
    Tape& t = *a.tape;
    return t.record(a.value() + b.value(), {a, b}, [&t, a, b](const Mat& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

inline Var sub(Var a, Var b) {
    detail::same_tape(a, b, "sub");
    detail::same_shape(a, b, "sub");
    Tape& t = *a.tape;
    return t.record(a.value() - b.value(), {a, b}, [&t, a, b](const Mat& g) {
        t.accumulate(a, g);
        t.accumulate_with(b, [&](Mat& gb) { gb -= g; });
    });
}

/// a (R x C) plus a 1 x C row broadcast to every row.
inline Var add_row(Var a, Var row) {
    detail::same_tape(a, row, "add_row");
    if (row.rows() != 1 || row.cols() != a.cols()) throw ValidationError("add_row: bias must be 1 x cols");
    Tape& t = *a.tape;
    Mat out = a.value();
    out.rowwise() += row.value().row(0);
    return t.record(std::move(out), {a, row}, [&t, a, row](const Mat& g) {
        t.accumulate(a, g);
        t.accumulate_with(row, [&](Mat& gr) { gr.row(0) += g.colwise().sum(); });
    });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
    detail::same_tape(a, b, "mul");
    detail::same_shape(a, b, "mul");
    Tape& t = *a.tape;
    Mat out = a.value().cwiseProduct(b.value());
    return t.record(std::move(out), {a, b}, [&t, a, b](const Mat& g) {
        t.accumulate_with(a, [&](Mat& ga) { ga += g.cwiseProduct(b.value()); });
        t.accumulate_with(b, [&](Mat& gb) { gb += g.cwiseProduct(a.value()); });
    });
}

inline Var scalar_mul(Var a, double c) {
    Tape& t = *a.tape;
    return t.record(c * a.value(), {a}, [&t, a, c](const Mat& g) { t.accumulate_with(a, [&](Mat& ga) { ga += c * g; }); });
}

/// a scaled by a recorded 1x1 value s.
inline Var scale(Var a, Var s) {
    detail::same_tape(a, s, "scale");
    if (s.value().size() != 1) throw ValidationError("scale: factor must be 1x1");
    Tape& t = *a.tape;
    return t.record(s.scalar() * a.value(), {a, s}, [&t, a, s](const Mat& g) {
        t.accumulate_with(a, [&](Mat& ga) { ga += s.scalar() * g; });
        t.accumulate_with(s, [&](Mat& gs) { gs(0, 0) += g.cwiseProduct(a.value()).sum(); });
    });
}

/// diag(d) a, with d a constant per-row factor.
inline Var scale_rows(Var a, std::vector<double> d) {
    if (static_cast<Index>(d.size()) != a.rows()) throw ValidationError("scale_rows: factor length differs from rows");
    Tape& t = *a.tape;
    const Eigen::Map<const Eigen::VectorXd> dv(d.data(), static_cast<Index>(d.size()));
    Mat out = dv.asDiagonal() * a.value();
    return t.record(std::move(out), {a}, [&t, a, d = std::move(d)](const Mat& g) {
        const Eigen::Map<const Eigen::VectorXd> dv2(d.data(), static_cast<Index>(d.size()));
        t.accumulate_with(a, [&](Mat& ga) { ga += dv2.asDiagonal() * g; });
    });
}

namespace detail {

/// Vectorizable tanh: odd rational approximation for |x| < 0.625, exp form
/// elsewhere (coefficients from the Cephes double-precision tanh).
inline Mat tanh_values(const Mat& x) {
    using Arr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto xa = x.array();
    const Arr z = xa.square();
    const Arr p = (-9.64399179425052238628e-1 * z - 9.92877231001918586564e1) * z - 1.61468768441708447952e3;
    const Arr q = ((z + 1.12811678491632931402e2) * z + 2.23548839060100448583e3) * z + 4.84406305325125486048e3;
    const Arr big = (1.0 - 2.0 / ((2.0 * xa.abs()).exp() + 1.0)) * xa.sign();
    Mat out(x.rows(), x.cols());
    out.array() = (xa.abs() < 0.625).select(xa + xa * z * p / q, big);
    return out;
}

}  // namespace detail

inline Var tanh(Var a) {
    Tape& t = *a.tape;
    const Var self{&t, t.size()};  // id this record will receive
    Mat out = detail::tanh_values(a.value());
    return t.record(std::move(out), {a}, [&t, a, self](const Mat& g) {
        t.accumulate_with(a, [&](Mat& ga) { ga.array() += g.array() * (1.0 - self.value().array().square()); });
    });
}

inline Var relu(Var a) {
    Tape& t = *a.tape;
    Mat out = a.value().cwiseMax(0.0);
    return t.record(std::move(out), {a}, [&t, a](const Mat& g) {
        t.accumulate_with(a, [&](Mat& ga) { ga.array() += (a.value().array() > 0.0).select(g.array(), 0.0); });
    });
}

/// out[k] = a[idx[k]] (rows).
inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
    for (std::size_t i : idx)
        if (static_cast<Index>(i) >= a.rows()) throw ValidationError("gather_rows: index out of range");
    Tape& t = *a.tape;
    Mat out(static_cast<Index>(idx.size()), a.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Index>(k)) = a.value().row(static_cast<Index>(idx[k]));
    return t.record(std::move(out), {a}, [&t, a, idx = std::move(idx)](const Mat& g) {
        t.accumulate_with(a, [&](Mat& ga) {
            for (std::size_t k = 0; k < idx.size(); ++k) ga.row(static_cast<Index>(idx[k])) += g.row(static_cast<Index>(k));
        });
    });
}

/// out[idx[k]] += a[k]; out has n_out rows.
inline Var scatter_add_rows(Var a, std::vector<std::size_t> idx, std::size_t n_out) {
    if (static_cast<Index>(idx.size()) != a.rows()) throw ValidationError("scatter_add_rows: index length differs from rows");
    for (std::size_t i : idx)
        if (i >= n_out) throw ValidationError("scatter_add_rows: index out of range");
    Tape& t = *a.tape;
    Mat out = Mat::Zero(static_cast<Index>(n_out), a.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Index>(idx[k])) += a.value().row(static_cast<Index>(k));
    return t.record(std::move(out), {a}, [&t, a, idx = std::move(idx)](const Mat& g) {
        t.accumulate_with(a, [&](Mat& ga) {
            for (std::size_t k = 0; k < idx.size(); ++k) ga.row(static_cast<Index>(k)) += g.row(static_cast<Index>(idx[k]));
        });
    });
}

/// S a for a constant sparse S.
inline Var sparse_matmul(const SparseMatrix& s, Var a) {
    if (static_cast<Index>(s.cols()) != a.rows()) throw ValidationError("sparse_matmul: dimension mismatch");
    Tape& t = *a.tape;
    const Index c = a.cols();
    Mat out = Mat::Zero(static_cast<Index>(s.rows()), c);
    for (std::size_t i = 0; i < s.rows(); ++i)
        s.for_each_in_row(i, [&](std::size_t j, double v) { out.row(static_cast<Index>(i)) += v * a.value().row(static_cast<Index>(j)); });
    return t.record(std::move(out), {a}, [&t, a, st = s.transpose()](const Mat& g) {
        t.accumulate_with(a, [&](Mat& ga) {
            for (std::size_t i = 0; i < st.rows(); ++i)
                st.for_each_in_row(i, [&](std::size_t j, double v) { ga.row(static_cast<Index>(i)) += v * g.row(static_cast<Index>(j)); });
        });
    });
}

inline Var sum(Var a) {
    Tape& t = *a.tape;
    Mat out(1, 1);
    out(0, 0) = a.value().sum();
    return t.record(std::move(out), {a}, [&t, a](const Mat& g) { t.accumulate_with(a, [&](Mat& ga) { ga.array() += g(0, 0); }); });
}

inline Var mean(Var a) {
    if (a.value().size() == 0) throw ValidationError("mean: empty value");
    return scalar_mul(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Var squared_norm(Var a) {
    Tape& t = *a.tape;
    Mat out(1, 1);
    out(0, 0) = a.value().squaredNorm();
    return t.record(std::move(out), {a}, [&t, a](const Mat& g) { t.accumulate_with(a, [&](Mat& ga) { ga += (2.0 * g(0, 0)) * a.value(); }); });
}

/// Column-wise concatenation of values with equal row counts.
inline Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    Tape& t = *parts[0].tape;
    const Index r = parts[0].rows();
    Index c = 0;
    for (const auto& p : parts) {
        detail::same_tape(parts[0], p, "concat_cols");
        if (p.rows() != r) throw ValidationError("concat_cols: row counts differ");
        c += p.cols();
    }
    Mat out(r, c);
    Index off = 0;
    for (const auto& p : parts) {
        out.middleCols(off, p.cols()) = p.value();
        off += p.cols();
    }
    return t.record(std::move(out), parts, [&t, parts](const Mat& g) {
        Index o = 0;
        for (const auto& p : parts) {
            t.accumulate_with(p, [&](Mat& gp) { gp += g.middleCols(o, p.cols()); });
            o += p.cols();
        }
    });
}

/// Entries [offset, offset + rows * cols) of a 1 x n row, reshaped row-major.
inline Var slice(Var flat, std::size_t offset, std::size_t rows, std::size_t cols) {
    Tape& t = *flat.tape;
    require(flat.rows() == 1, "slice: input must be a single row");
    require(offset + rows * cols <= static_cast<std::size_t>(flat.cols()), "slice: range exceeds input length");
    Mat out = Eigen::Map<const Mat>(flat.value().data() + offset, static_cast<Index>(rows), static_cast<Index>(cols));
    return t.record(std::move(out), {flat}, [&t, flat, offset, rows, cols](const Mat& g) {
        t.accumulate_with(flat, [&](Mat& gf) {
            gf.middleCols(static_cast<Index>(offset), static_cast<Index>(rows * cols)) +=
                Eigen::Map<const Mat>(g.data(), 1, static_cast<Index>(rows * cols));
        });
    });
}

// ---------------------------------------------------------------------------
// Finite-difference check

struct GradCheckResult {
    bool passed = false;
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
};

/// Compares the tape gradient of a scalar function of a flat vector with
/// central differences. `f` builds its graph on the supplied tape from a 1 x n
/// parameter and returns a 1x1 value. Relative error is
/// |a - n| / max(|a|, |n|, 1e-6). `coords` restricts the check to a subset.
inline GradCheckResult grad_check(const std::function<Var(Tape&, Var)>& f, std::span<const double> x, double h = 1e-5,
                                  double tol = 1e-4, std::vector<std::size_t> coords = {}) {
    const Index n = static_cast<Index>(x.size());
    auto eval = [&](const Mat& p) {
        Tape t;
        return f(t, t.constant(p)).scalar();
    };
    Mat p0(1, n);
    for (Index i = 0; i < n; ++i) p0(0, i) = x[static_cast<std::size_t>(i)];
    Tape t;
    const Var p = t.parameter(p0);
    const Var y = f(t, p);
    t.backward(y);
    const Mat g = t.grad(p);

    if (coords.empty())
        for (Index i = 0; i < n; ++i) coords.push_back(static_cast<std::size_t>(i));
    GradCheckResult res;
    for (std::size_t c : coords) {
        Mat plus = p0, minus = p0;
        plus(0, static_cast<Index>(c)) += h;
        minus(0, static_cast<Index>(c)) -= h;
        const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
        const double an = g(0, static_cast<Index>(c));
        double err = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
        if (!std::isfinite(err)) err = INFINITY;
        if (err > res.max_relative_error) {
            res.max_relative_error = err;
            res.worst_index = c;
        }
    }
    res.passed = res.max_relative_error < tol;
    return res;
}

}  // namespace meshdiff::ad
