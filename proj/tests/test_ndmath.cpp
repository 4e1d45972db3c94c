#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lsvis/adam.hpp"
#include "lsvis/autodiff.hpp"
#include "lsvis/gradcheck.hpp"
#include "lsvis/rng.hpp"

using namespace lsvis;
using namespace lsvis::nd;

namespace {

ArrayT<double> random_array(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    ArrayT<double> a(std::move(shape));
    for (auto& v : a.data) v = rng.uniform(lo, hi);
    return a;
}

// Scalarize an arbitrary output with fixed non-uniform weights so the check
// exercises every output coordinate.
int scalarize(Tape<double>& t, int out) {
    ArrayT<double> w(t.val(out).shape);
    for (int64_t i = 0; i < w.size(); ++i) w[i] = 0.17 + 0.31 * static_cast<double>(i % 11);
    return sum_all(t, mul(t, out, constant(t, std::move(w))));
}

// Gradient-check a graph builder against central differences at 10 seeds.
template <typename Builder>
void check_primitive(Builder build, Shape xshape, double lo = -1.0, double hi = 1.0,
                     double tol = 1e-4) {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed * 77 + 5);
        ArrayT<double> x = random_array(xshape, rng, lo, hi);
        ValGradFn f = [&](const ArrayT<double>& xv) {
            Tape<double> t;
            int xi = leaf(t, xv);
            int root = scalarize(t, build(t, xi));
            t.backward(root);
            return std::make_pair(t.val(root)[0], t.grad(xi));
        };
        double err = gradient_check(f, x, 1e-5);
        CAPTURE(seed);
        CHECK(err <= tol);
    }
}

}  // namespace

TEST_CASE("conv2d output shapes") {
    Rng rng(1);
    auto run = [&](int64_t ci, int64_t h, int64_t w) {
        Tape<float> t;
        int x = leaf(t, random_array({2, ci, h, w}, rng).cast<float>(), false);
        int k = leaf(t, random_array({64, ci, 3, 3}, rng).cast<float>(), false);
        int b = leaf(t, Array::zeros({64}), false);
        int y = conv2d(t, x, k, b, 2);
        return t.val(y).shape;
    };
    CHECK(run(1, 28, 28) == Shape{2, 64, 14, 14});
    CHECK(run(64, 7, 7) == Shape{2, 64, 4, 4});
    CHECK(run(1, 50, 50) == Shape{2, 64, 25, 25});
}

TEST_CASE("conv2d channel mismatch is a structured error") {
    Tape<float> t;
    int x = leaf(t, Array::zeros({1, 3, 8, 8}), false);
    int k = leaf(t, Array::zeros({4, 2, 3, 3}), false);
    int b = leaf(t, Array::zeros({4}), false);
    CHECK_THROWS_AS(conv2d(t, x, k, b, 2), ShapeError);
}

TEST_CASE("conv2d_transpose inverts conv2d spatial shapes") {
    Rng rng(2);
    auto run = [&](int64_t h, int64_t w, int64_t oph, int64_t opw) {
        Tape<float> t;
        int x = leaf(t, random_array({1, 64, h, w}, rng).cast<float>(), false);
        int k = leaf(t, random_array({64, 64, 3, 3}, rng).cast<float>(), false);
        int b = leaf(t, Array::zeros({64}), false);
        int y = conv2d_transpose(t, x, k, b, 2, oph, opw);
        return Shape{t.val(y).shape[2], t.val(y).shape[3]};
    };
    CHECK(run(14, 14, 1, 1) == Shape{28, 28});
    CHECK(run(4, 4, 0, 0) == Shape{7, 7});
    CHECK(run(25, 25, 1, 1) == Shape{50, 50});
}

TEST_CASE("four stride-2 convs then the decoder invert for every input size") {
    for (int64_t h0 : {28, 50, 64}) {
        std::vector<int64_t> chain{h0};
        int64_t h = h0;
        for (int i = 0; i < 4; ++i) {
            int64_t next = (h + 2 - 3) / 2 + 1;
            CHECK(next == (h + 1) / 2);  // stride-2, pad-1, k=3 halves with ceil
            chain.push_back(next);
            h = next;
        }
        // walking back up, a per-layer output padding of 0 or 1 restores each size
        for (int i = 4; i >= 1; --i) {
            int64_t target = chain[static_cast<size_t>(i - 1)];
            int64_t base = (chain[static_cast<size_t>(i)] - 1) * 2 + 1;
            int64_t op = target - base;
            CHECK(op >= 0);
            CHECK(op <= 1);
        }
    }
}

TEST_CASE("relu equals elementwise max(x, 0)") {
    Rng rng(3);
    Tape<float> t;
    ArrayT<float> x = random_array({100}, rng).cast<float>();
    int xi = leaf(t, x, false);
    int y = relu(t, xi);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(t.val(y)[i] == std::max(x[i], 0.0f));
}

TEST_CASE("backward accumulates gradients when a node is reused") {
    Tape<double> t;
    int x = leaf(t, ArrayT<double>({2}, {3.0, -1.0}));
    int y = sum_all(t, mul(t, x, x));  // d/dx x*x with both operands the same node
    t.backward(y);
    CHECK(t.grad(x)[0] == doctest::Approx(6.0));
    CHECK(t.grad(x)[1] == doctest::Approx(-2.0));
}

TEST_CASE("non-participating nodes keep zero gradients") {
    Tape<double> t;
    int x = leaf(t, ArrayT<double>({2}, {1.0, 2.0}));
    int unused = leaf(t, ArrayT<double>({2}, {5.0, 5.0}));
    int y = sum_all(t, square(t, x));
    t.backward(y);
    CHECK(t.grad(unused)[0] == 0.0);
    CHECK(t.grad(unused)[1] == 0.0);
}

TEST_CASE("pairwise_distances") {
    Tape<float> t;
    SUBCASE("3-4-5 triangle") {
        int z = leaf(t, Array({2, 2}, {0, 0, 3, 4}), false);
        int d = pairwise_distances(t, z);
        CHECK(t.val(d)[1] == doctest::Approx(5.0));
        CHECK(t.val(d)[2] == doctest::Approx(5.0));
        CHECK(t.val(d)[0] == 0.0f);
        CHECK(t.val(d)[3] == 0.0f);
    }
    SUBCASE("identical points give zeros") {
        int z = leaf(t, Array({3, 2}, {1, 1, 1, 1, 1, 1}), false);
        int d = pairwise_distances(t, z);
        for (int64_t i = 0; i < 9; ++i) CHECK(t.val(d)[i] <= 1e-5f);
    }
    SUBCASE("direct formula") {
        int z = leaf(t, Array({3, 2}, {0, 0, 0, 1, 10, 0}), false);
        int d = pairwise_distances(t, z);
        CHECK(t.val(d)[0 * 3 + 1] == doctest::Approx(1.0));
        CHECK(t.val(d)[0 * 3 + 2] == doctest::Approx(10.0));
        CHECK(t.val(d)[1 * 3 + 2] == doctest::Approx(std::sqrt(101.0)));
    }
    SUBCASE("symmetry and zero diagonal on random points") {
        Rng rng(9);
        int z = leaf(t, random_array({16, 4}, rng).cast<float>(), false);
        int d = pairwise_distances(t, z);
        for (int64_t i = 0; i < 16; ++i) {
            CHECK(t.val(d)[i * 16 + i] == 0.0f);
            for (int64_t j = 0; j < 16; ++j)
                CHECK(t.val(d)[i * 16 + j] == t.val(d)[j * 16 + i]);
        }
    }
}

TEST_CASE("adam") {
    SUBCASE("first step with unit gradient") {
        ParamMap<float> p{{"theta", Array::scalar(1.0f)}};
        ParamMap<float> g{{"theta", Array::scalar(1.0f)}};
        AdamState<float> st;
        adam_update(p, g, st);
        // m-hat = 1, v-hat = 1 on the first step, so the update is lr/(1+eps)
        CHECK(p["theta"][0] == doctest::Approx(0.9995).epsilon(1e-6));
        CHECK(st.step == 1);
    }
    SUBCASE("zero gradient leaves parameters unchanged") {
        ParamMap<float> p{{"w", Array({2}, {0.5f, -0.25f})}};
        ParamMap<float> g{{"w", Array::zeros({2})}};
        AdamState<float> st;
        adam_update(p, g, st);
        CHECK(p["w"][0] == 0.5f);
        CHECK(p["w"][1] == -0.25f);
    }
    SUBCASE("identical calls from identical states give identical results") {
        auto run = [] {
            ParamMap<float> p{{"w", Array({3}, {1.0f, 2.0f, 3.0f})}};
            ParamMap<float> g{{"w", Array({3}, {0.1f, -0.2f, 0.3f})}};
            AdamState<float> st;
            adam_update(p, g, st);
            adam_update(p, g, st);
            return p["w"].data;
        };
        CHECK(run() == run());
    }
    SUBCASE("non-finite gradient names the parameter") {
        ParamMap<float> p{{"enc1.w", Array::scalar(1.0f)}};
        ParamMap<float> g{{"enc1.w", Array::scalar(std::nanf(""))}};
        AdamState<float> st;
        try {
            adam_update(p, g, st);
            FAIL("expected OptimError");
        } catch (const OptimError& e) {
            CHECK(std::string(e.what()).find("enc1.w") != std::string::npos);
        }
    }
}

TEST_CASE("gradient_check worked examples") {
    SUBCASE("sum of squares") {
        ValGradFn f = [](const ArrayT<double>& x) {
            double v = 0;
            ArrayT<double> g(x.shape);
            for (int64_t i = 0; i < x.size(); ++i) {
                v += x[i] * x[i];
                g[i] = 2 * x[i];
            }
            return std::make_pair(v, g);
        };
        CHECK(gradient_check(f, ArrayT<double>({2}, {1.0, 2.0}), 1e-4) <= 1e-6);
    }
    SUBCASE("constant function") {
        ValGradFn f = [](const ArrayT<double>& x) {
            return std::make_pair(42.0, ArrayT<double>::zeros(x.shape));
        };
        CHECK(gradient_check(f, ArrayT<double>({3}, {1.0, -1.0, 0.5}), 1e-4) <= 1e-8);
    }
    SUBCASE("non-finite probe is reported with the coordinate") {
        ValGradFn f = [](const ArrayT<double>& x) {
            double v = x[0] > 1.0 ? std::nan("") : x[0];
            ArrayT<double> g(x.shape);
            g[0] = 1.0;
            return std::make_pair(v, g);
        };
        CHECK_THROWS_AS(gradient_check(f, ArrayT<double>({1}, {1.0}), 1e-4), GradCheckError);
    }
}

TEST_CASE("every differentiable primitive passes gradient_check at 10 seeds") {
    Rng aux_rng(123);
    ArrayT<double> other = random_array({4, 5}, aux_rng, 0.5, 1.5);

    SUBCASE("add") {
        check_primitive([&](Tape<double>& t, int x) { return add(t, x, constant(t, other)); },
                        {4, 5});
    }
    SUBCASE("sub") {
        check_primitive([&](Tape<double>& t, int x) { return sub(t, x, constant(t, other)); },
                        {4, 5});
    }
    SUBCASE("mul") {
        check_primitive([&](Tape<double>& t, int x) { return mul(t, x, constant(t, other)); },
                        {4, 5});
    }
    SUBCASE("div") {
        check_primitive([&](Tape<double>& t, int x) { return div(t, x, constant(t, other)); },
                        {4, 5});
    }
    SUBCASE("div by variable") {
        check_primitive([&](Tape<double>& t, int x) { return div(t, constant(t, other), x); },
                        {4, 5}, 0.5, 1.5);
    }
    SUBCASE("maximum") {
        check_primitive([&](Tape<double>& t, int x) { return maximum(t, x, constant(t, other)); },
                        {4, 5});
    }
    SUBCASE("relu") {
        check_primitive([&](Tape<double>& t, int x) { return relu(t, x); }, {4, 5}, 0.05, 1.0);
    }
    SUBCASE("exp") {
        check_primitive([&](Tape<double>& t, int x) { return exp_(t, x); }, {4, 5});
    }
    SUBCASE("log") {
        check_primitive([&](Tape<double>& t, int x) { return log_(t, x); }, {4, 5}, 0.5, 2.0);
    }
    SUBCASE("square") {
        check_primitive([&](Tape<double>& t, int x) { return square(t, x); }, {4, 5});
    }
    SUBCASE("sqrt_eps") {
        check_primitive([&](Tape<double>& t, int x) { return sqrt_eps(t, x, 1e-12); }, {4, 5},
                        0.1, 2.0);
    }
    SUBCASE("reshape") {
        check_primitive([&](Tape<double>& t, int x) { return reshape(t, x, {20}); }, {4, 5});
    }
    SUBCASE("matmul lhs") {
        check_primitive([&](Tape<double>& t, int x) { return matmul(t, x, constant(t, other)); },
                        {3, 4});
    }
    SUBCASE("matmul rhs") {
        check_primitive([&](Tape<double>& t, int x) { return matmul(t, constant(t, other), x); },
                        {5, 3});
    }
    SUBCASE("add_rowvec") {
        Rng r2(5);
        ArrayT<double> v = random_array({5}, r2);
        check_primitive(
            [&](Tape<double>& t, int x) { return add_rowvec(t, x, constant(t, v)); }, {4, 5});
    }
    SUBCASE("row_min") {
        check_primitive([&](Tape<double>& t, int x) { return row_min(t, x); }, {6, 4});
    }
    SUBCASE("spatial_mean") {
        check_primitive([&](Tape<double>& t, int x) { return spatial_mean(t, x); }, {2, 3, 4, 4});
    }
    SUBCASE("pairwise_distances") {
        check_primitive([&](Tape<double>& t, int x) { return pairwise_distances(t, x); }, {6, 3});
    }
    SUBCASE("conv2d inputs") {
        Rng r2(6);
        ArrayT<double> k = random_array({4, 2, 3, 3}, r2);
        ArrayT<double> b = random_array({4}, r2);
        check_primitive(
            [&](Tape<double>& t, int x) {
                return conv2d(t, x, constant(t, k), constant(t, b), 2);
            },
            {2, 2, 6, 6});
    }
    SUBCASE("conv2d kernels") {
        Rng r2(7);
        ArrayT<double> xin = random_array({2, 2, 6, 6}, r2);
        ArrayT<double> b = random_array({4}, r2);
        check_primitive(
            [&](Tape<double>& t, int k) {
                return conv2d(t, constant(t, xin), k, constant(t, b), 2);
            },
            {4, 2, 3, 3});
    }
    SUBCASE("conv2d bias") {
        Rng r2(8);
        ArrayT<double> xin = random_array({2, 2, 6, 6}, r2);
        ArrayT<double> k = random_array({4, 2, 3, 3}, r2);
        check_primitive(
            [&](Tape<double>& t, int b) {
                return conv2d(t, constant(t, xin), constant(t, k), b, 2);
            },
            {4});
    }
    SUBCASE("conv2d_transpose inputs") {
        Rng r2(9);
        ArrayT<double> k = random_array({2, 3, 3, 3}, r2);
        ArrayT<double> b = random_array({3}, r2);
        check_primitive(
            [&](Tape<double>& t, int x) {
                return conv2d_transpose(t, x, constant(t, k), constant(t, b), 2, 1, 1);
            },
            {2, 2, 4, 4});
    }
    SUBCASE("conv2d_transpose kernels") {
        Rng r2(10);
        ArrayT<double> xin = random_array({2, 2, 4, 4}, r2);
        ArrayT<double> b = random_array({3}, r2);
        check_primitive(
            [&](Tape<double>& t, int k) {
                return conv2d_transpose(t, constant(t, xin), k, constant(t, b), 2, 0, 0);
            },
            {2, 3, 3, 3});
    }
    SUBCASE("dropout with a frozen mask") {
        check_primitive(
            [&](Tape<double>& t, int x) {
                Rng rmask(42);  // same mask on every probe evaluation
                return dropout(t, x, 0.3, rmask);
            },
            {4, 5});
    }
    SUBCASE("log_softmax_nll") {
        std::vector<int> labels{0, 2, 1, 2};
        check_primitive(
            [&](Tape<double>& t, int x) { return log_softmax_nll(t, x, labels); }, {4, 3});
    }
}

TEST_CASE("dropout semantics") {
    Rng rng(11);
    Tape<float> t;
    ArrayT<float> x = Array::full({1000}, 1.0f);
    int xi = leaf(t, x, false);
    int y = dropout(t, xi, 0.25, rng);
    double sum = 0;
    int64_t zeros = 0;
    for (int64_t i = 0; i < 1000; ++i) {
        float v = t.val(y)[i];
        if (v == 0.0f)
            ++zeros;
        else
            CHECK(v == doctest::Approx(1.0f / 0.75f));
        sum += v;
    }
    CHECK(zeros > 150);
    CHECK(zeros < 350);
    CHECK(sum / 1000.0 == doctest::Approx(1.0).epsilon(0.1));  // inverted scaling
    CHECK(dropout(t, xi, 0.0, rng) == xi);                      // p=0 is the identity
}
