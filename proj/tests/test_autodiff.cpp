#include <gtest/gtest.h>

#include <cstring>

#include <meshdiff/autodiff.hpp>

using namespace meshdiff;
using namespace meshdiff::ad;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

Mat random_mat(Rng& rng, Index r, Index c) {
    Mat m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
    return m;
}

Mat fixed(Index r, Index c) {
    Mat m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = std::sin(1.3 * static_cast<double>(i) + 0.4);
    return m;
}

}  // namespace

TEST(Autodiff, SumGivesOnes) {
    Tape t;
    const Var x = t.parameter(fixed(3, 4));
    t.backward(sum(x));
    EXPECT_EQ(t.grad(x), Mat::Ones(3, 4));
}

TEST(Autodiff, SquaredNormExample) {
    Tape t;
    Mat v(1, 2);
    v << 1, -2;
    const Var x = t.parameter(v);
    t.backward(squared_norm(x));
    Mat expect(1, 2);
    expect << 2, -4;
    EXPECT_EQ(t.grad(x), expect);
}

TEST(Autodiff, ScatterBackwardIsGather) {
    Rng rng(1);
    Tape t;
    const Var a = t.parameter(random_mat(rng, 5, 3));
    const std::vector<std::size_t> idx{2, 0, 2, 1, 3};
    const Var s = scatter_add_rows(a, idx, 4);
    const Mat up = random_mat(rng, 4, 3);
    t.backward(sum(mul(s, t.constant(up))));
    const Mat g = t.grad(a);
    for (std::size_t k = 0; k < idx.size(); ++k)
        EXPECT_EQ(Mat(g.row(static_cast<Index>(k))), Mat(up.row(static_cast<Index>(idx[k]))));
}

// Each primitive is checked against central differences through a scalar
// reduction with random weights, so every output entry contributes.
class PrimitiveGradients : public ::testing::Test {
protected:
    Rng rng{7};

    void check(const std::function<Var(Tape&, Var)>& build, std::size_t n) {
        const Mat w_seed = random_mat(rng, 1, 64);
        auto f = [&](Tape& t, Var p) {
            const Var y = build(t, p);
            Mat w(y.rows(), y.cols());
            for (Index i = 0; i < w.size(); ++i) w.data()[i] = w_seed(0, i % 64) + 0.01 * static_cast<double>(i);
            return sum(mul(y, t.constant(w)));
        };
        const auto x = random_vector(rng, n);
        const auto r = grad_check(f, x, 1e-5, 1e-4);
        EXPECT_TRUE(r.passed) << "max relative error " << r.max_relative_error << " at " << r.worst_index;
    }

    static Var reshape(Var p, Index r, Index c) {
        Tape& t = *p.tape;
        Mat out = Eigen::Map<const Mat>(p.value().data(), r, c);
        return t.record(std::move(out), {p}, [&t, p, r, c](const Mat& g) {
            t.accumulate_with(p, [&](Mat& gp) { gp += Eigen::Map<const Mat>(g.data(), 1, r * c); });
        });
    }
};

TEST_F(PrimitiveGradients, Matmul) {
    check([](Tape& t, Var p) {
        const Var a = reshape(matmul(p, t.constant(Mat::Identity(p.cols(), 12))), 3, 4);
        const Var b = t.constant(fixed(4, 2));
        return add(matmul(a, b), matmul(a, b));
    }, 12);
    check([](Tape&, Var p) {
        const Var a = reshape(p, 2, 3);
        const Var b = reshape(p, 3, 2);
        return matmul(a, b);
    }, 6);
}

TEST_F(PrimitiveGradients, ElementwiseAndBroadcast) {
    check([](Tape&, Var p) { return add(reshape(p, 2, 4), reshape(p, 2, 4)); }, 8);
    check([](Tape& t, Var p) { return sub(reshape(p, 2, 4), t.constant(Mat::Ones(2, 4))); }, 8);
    check([](Tape&, Var p) { return mul(reshape(p, 3, 3), reshape(p, 3, 3)); }, 9);
    check([](Tape&, Var p) { return scalar_mul(reshape(p, 3, 3), -2.5); }, 9);
    check([](Tape& t, Var p) {
        const Var a = reshape(p, 1, 9);
        const Var bias = matmul(a, t.constant(fixed(9, 3)));
        return add_row(t.constant(fixed(5, 3)), bias);
    }, 9);
    check([](Tape& t, Var p) {
        const Var a = reshape(p, 2, 5);
        const Var s = matmul(a, t.constant(fixed(5, 1)));  // 2 x 1
        const Var s0 = gather_rows(s, {1});                        // 1 x 1
        return scale(a, s0);
    }, 10);
    check([](Tape&, Var p) { return scale_rows(reshape(p, 3, 2), {0.5, -1.0, 3.0}); }, 6);
}

TEST_F(PrimitiveGradients, Nonlinearities) {
    check([](Tape&, Var p) { return tanh(reshape(p, 4, 3)); }, 12);
    // relu at random points away from the kink
    check([](Tape& t, Var p) { return relu(add(reshape(p, 4, 3), t.constant(Mat::Constant(4, 3, 0.003)))); }, 12);
}

TEST_F(PrimitiveGradients, GatherScatterSparse) {
    check([](Tape&, Var p) { return gather_rows(reshape(p, 4, 2), {3, 0, 0, 2, 3}); }, 8);
    check([](Tape&, Var p) { return scatter_add_rows(reshape(p, 5, 2), {1, 1, 0, 3, 1}, 4); }, 10);
    const auto S = SparseMatrix::from_triplets(3, 4, {{0, 0, 1.0}, {0, 3, -2.0}, {1, 1, 0.5}, {2, 2, 4.0}, {2, 0, 1.5}});
    check([&S](Tape&, Var p) { return sparse_matmul(S, reshape(p, 4, 2)); }, 8);
}

TEST_F(PrimitiveGradients, Slice) {
    check([](Tape&, Var p) { return add(slice(p, 2, 2, 3), slice(p, 0, 2, 3)); }, 9);
}

TEST(Autodiff, SliceLayoutAndRange) {
    Tape t;
    Mat v(1, 6);
    v << 0, 1, 2, 3, 4, 5;
    const Var s = slice(t.constant(v), 1, 2, 2);
    Mat expect(2, 2);
    expect << 1, 2, 3, 4;
    EXPECT_EQ(s.value(), expect);
    EXPECT_THROW(slice(t.constant(v), 3, 2, 2), ValidationError);
}

TEST_F(PrimitiveGradients, Reductions) {
    check([](Tape&, Var p) { return sum(reshape(p, 3, 3)); }, 9);
    check([](Tape&, Var p) { return mean(reshape(p, 3, 3)); }, 9);
    check([](Tape&, Var p) { return squared_norm(reshape(p, 3, 3)); }, 9);
    check([](Tape& t, Var p) {
        const Var a = reshape(p, 3, 2);
        return concat_cols({a, t.constant(Mat::Ones(3, 1)), tanh(a)});
    }, 6);
}

TEST(Autodiff, GradCheckExamples) {
    Rng rng(3);
    const auto x = random_vector(rng, 7);
    auto norm2 = [](Tape&, Var p) { return squared_norm(p); };
    EXPECT_TRUE(grad_check(norm2, x, 1e-5, 1e-6).passed);
    auto constant = [](Tape& t, Var) { return t.constant_scalar(3.0); };
    const auto r = grad_check(constant, x);
    EXPECT_TRUE(r.passed);
    EXPECT_EQ(r.max_relative_error, 0.0);
}

TEST(Autodiff, GradCheckDetectsWrongGradient) {
    auto broken = [](Tape& t, Var p) {
        // value p^2 summed, but backward reports 3 p
        Mat v(1, 1);
        v(0, 0) = p.value().squaredNorm();
        return t.record(std::move(v), {p}, [&t, p](const Mat& g) {
            t.accumulate_with(p, [&](Mat& gp) { gp += 3.0 * g(0, 0) * p.value(); });
        });
    };
    EXPECT_FALSE(grad_check(broken, std::vector<double>{0.3, -0.8}).passed);
}

TEST(Autodiff, ReuseAccumulatesAdjoints) {
    Rng rng(4);
    const Mat v = random_mat(rng, 2, 3);
    for (int k = 1; k <= 4; ++k) {
        Tape t;
        const Var x = t.parameter(v);
        const Var y = tanh(x);
        Var acc = y;
        for (int j = 1; j < k; ++j) acc = add(acc, y);
        t.backward(sum(acc));
        Tape t1;
        const Var x1 = t1.parameter(v);
        t1.backward(sum(tanh(x1)));
        EXPECT_LT((t.grad(x) - static_cast<double>(k) * t1.grad(x1)).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(Autodiff, DeterministicGradients) {
    auto run = [] {
        Rng rng(5);
        Tape t;
        const Var w = t.parameter(random_mat(rng, 6, 4));
        const Var x = t.constant(random_mat(rng, 9, 6));
        const Var h = tanh(matmul(x, w));
        const Var s = scatter_add_rows(h, {0, 1, 2, 0, 1, 2, 0, 1, 2}, 3);
        t.backward(squared_norm(s));
        return t.grad(w);
    };
    const Mat a = run(), b = run();
    EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())));
}

TEST(Autodiff, ConstantsGetNoGradient) {
    Tape t;
    const Var c = t.constant(Mat::Ones(2, 2));
    const Var p = t.parameter(Mat::Ones(2, 2));
    t.backward(sum(mul(c, p)));
    EXPECT_EQ(t.grad(c), Mat::Zero(2, 2));
    EXPECT_EQ(t.grad(p), Mat::Ones(2, 2));
}

TEST(Autodiff, ErrorsNameThePrimitive) {
    Tape t;
    const Var a = t.constant(Mat::Ones(2, 3)), b = t.constant(Mat::Ones(2, 2));
    auto message = [](auto fn) {
        try {
            fn();
        } catch (const ValidationError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    EXPECT_NE(message([&] { matmul(a, b); }).find("matmul"), std::string::npos);
    EXPECT_NE(message([&] { add(a, b); }).find("add"), std::string::npos);
    EXPECT_NE(message([&] { mul(a, b); }).find("mul"), std::string::npos);
    EXPECT_NE(message([&] { gather_rows(a, {2}); }).find("gather_rows"), std::string::npos);
    EXPECT_NE(message([&] { scatter_add_rows(a, {0, 5}, 3); }).find("scatter_add_rows"), std::string::npos);
    EXPECT_NE(message([&] { concat_cols({a, t.constant(Mat::Ones(3, 1))}); }).find("concat_cols"), std::string::npos);
    EXPECT_THROW(t.backward(a), ValidationError);
    Tape other;
    EXPECT_THROW(add(a, other.constant(Mat::Ones(2, 3))), ValidationError);
}
