#include <catch2/catch.hpp>

#include <cmath>

#include "gradcheck.hpp"
#include "vlkd/linalg.hpp"
#include "vlkd/ops.hpp"
#include "vlkd/tensor.hpp"

using namespace vlkd;
using vlkd::testing::check_gradients;
using vlkd::testing::random_tensor;

TEST_CASE("tensor construction enforces shape/buffer agreement") {
    CHECK_THROWS_AS(tensor_from<double>({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
    auto t = tensor_from<double>({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t->numel() == 6);
    t->requires_grad = true;
    t->ensure_grad();
    CHECK(t->g.size() == t->v.size());
}

TEST_CASE("matmul identity and hand cases") {
    auto eye = tensor_from<double>({2, 2}, {1, 0, 0, 1});
    auto a = tensor_from<double>({2, 2}, {1, 2, 3, 4});
    auto r = matmul<double>(nullptr, eye, a);
    CHECK(r->v == a->v);

    auto row = tensor_from<double>({1, 2}, {1, 2});
    auto col = tensor_from<double>({2, 1}, {3, 4});
    auto s = matmul<double>(nullptr, row, col);
    CHECK(s->v[0] == Approx(11.0));
}

TEST_CASE("matmul shape error names both shapes") {
    auto a = tensor_from<double>({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = tensor_from<double>({2, 2}, {1, 2, 3, 4});
    try {
        matmul<double>(nullptr, a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches finite differences tightly") {
    Rng rng(42);
    auto a = random_tensor({5, 7}, rng);
    auto b = random_tensor({7, 3}, rng);
    auto rep = check_gradients({a, b}, [&](bool bw) {
        Tape<double> tape;
        auto loss = sum_all(&tape, matmul(&tape, a, b));
        if (bw) tape.backward(loss);
        return loss->v[0];
    });
    CHECK(rep.max_err < 1e-6);
}

TEST_CASE("matmul_nt agrees with explicit transpose") {
    Rng rng(7);
    auto a = random_tensor({4, 6}, rng, false);
    auto b = random_tensor({5, 6}, rng, false);
    auto bt = make_tensor<double>({6, 5});
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j) bt->at(j, i) = b->at(i, j);
    auto r1 = matmul_nt<double>(nullptr, a, b);
    auto r2 = matmul<double>(nullptr, a, bt);
    for (size_t i = 0; i < r1->v.size(); ++i) CHECK(r1->v[i] == Approx(r2->v[i]));
}

TEST_CASE("softmax trivial values") {
    auto x = tensor_from<double>({2}, {0, 0});
    auto y = softmax<double>(nullptr, x, 0);
    CHECK(y->v[0] == Approx(0.5));
    CHECK(y->v[1] == Approx(0.5));

    auto x2 = tensor_from<double>({2}, {std::log(2.0), 0.0});
    auto y2 = softmax<double>(nullptr, x2, 0);
    CHECK(y2->v[0] == Approx(2.0 / 3.0));
    CHECK(y2->v[1] == Approx(1.0 / 3.0));
}

TEST_CASE("softmax survives huge logits without overflow") {
    auto x = tensor_from<double>({2}, {1000.0, 0.0});
    auto y = softmax<double>(nullptr, x, 0);
    CHECK(std::isfinite(y->v[0]));
    CHECK(y->v[0] == Approx(1.0));
    CHECK(y->v[1] == Approx(0.0).margin(1e-300));
}

TEST_CASE("softmax slices are nonnegative and sum to one on both axes") {
    Rng rng(3);
    auto x = random_tensor({6, 9}, rng, false, 4.0);
    for (int axis : {0, 1}) {
        auto y = softmax<double>(nullptr, x, axis);
        const int slices = axis == 1 ? 6 : 9;
        const int count = axis == 1 ? 9 : 6;
        for (int s = 0; s < slices; ++s) {
            double total = 0.0;
            for (int i = 0; i < count; ++i) {
                const double v = axis == 1 ? y->at(s, i) : y->at(i, s);
                CHECK(v >= 0.0);
                total += v;
            }
            CHECK(total == Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("l2_normalize basics") {
    auto x = tensor_from<double>({2}, {3, 4});
    auto y = l2_normalize<double>(nullptr, x, 0);
    CHECK(y->v[0] == Approx(0.6));
    CHECK(y->v[1] == Approx(0.8));

    auto z = l2_normalize<double>(nullptr, y, 0);
    CHECK(z->v[0] == Approx(y->v[0]));
    CHECK(z->v[1] == Approx(y->v[1]));

    auto zero = tensor_from<double>({2}, {0, 0});
    CHECK_THROWS_AS(l2_normalize<double>(nullptr, zero, 0), DegenerateInputError);
}

TEST_CASE("layer_norm hand cases") {
    auto gain = tensor_from<double>({3}, {1, 1, 1});
    auto bias = tensor_from<double>({3}, {0, 0, 0});

    auto constant = tensor_from<double>({1, 3}, {5, 5, 5});
    auto y = layer_norm<double>(nullptr, constant, gain, bias);
    for (double v : y->v) CHECK(v == Approx(0.0).margin(1e-12));

    auto gain2 = tensor_from<double>({2}, {1, 1});
    auto bias2 = tensor_from<double>({2}, {0, 0});
    auto x = tensor_from<double>({1, 2}, {1, -1});
    auto y2 = layer_norm<double>(nullptr, x, gain2, bias2);
    const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y2->v[0] == Approx(expected).epsilon(1e-12));
    CHECK(y2->v[1] == Approx(-expected).epsilon(1e-12));

    auto gain0 = tensor_from<double>({2}, {0, 0});
    auto bias3 = tensor_from<double>({2}, {2.5, -1.0});
    auto y3 = layer_norm<double>(nullptr, x, gain0, bias3);
    CHECK(y3->v[0] == Approx(2.5));
    CHECK(y3->v[1] == Approx(-1.0));
}

TEST_CASE("cross_entropy_smoothed hand oracles") {
    SECTION("uniform logits give ln V for any smoothing") {
        auto logits = make_tensor<double>({1, 8});
        for (double s : {0.0, 0.1, 0.5}) {
            auto loss = cross_entropy_smoothed<double>(nullptr, logits, {3}, s);
            CHECK(loss->v[0] == Approx(std::log(8.0)).epsilon(1e-12));
        }
    }
    SECTION("confident correct prediction with zero smoothing is near zero") {
        auto logits = tensor_from<double>({1, 4}, {60.0, 0.0, 0.0, 0.0});
        auto loss = cross_entropy_smoothed<double>(nullptr, logits, {0}, 0.0);
        CHECK(loss->v[0] < 1e-12);
    }
    SECTION("two-class smoothed value matches the direct formula") {
        auto logits = tensor_from<double>({1, 2}, {1.0, 0.0});
        auto loss = cross_entropy_smoothed<double>(nullptr, logits, {0}, 0.1);
        // independent evaluation: y = [0.95, 0.05], p = softmax([1, 0])
        const double lse = std::log(std::exp(1.0) + 1.0);
        const double expected = -(0.95 * (1.0 - lse) + 0.05 * (0.0 - lse));
        CHECK(loss->v[0] == Approx(expected).epsilon(1e-12));
    }
    SECTION("out-of-range target id raises") {
        auto logits = make_tensor<double>({1, 4});
        CHECK_THROWS_AS(cross_entropy_smoothed<double>(nullptr, logits, {4}, 0.0), IndexError);
        CHECK_THROWS_AS(cross_entropy_smoothed<double>(nullptr, logits, {-2}, 0.0), IndexError);
    }
    SECTION("ignored positions do not contribute") {
        Rng rng(5);
        auto logits = random_tensor({3, 5}, rng, false);
        auto one = slice_rows<double>(nullptr, logits, 1, 2);
        auto l_full = cross_entropy_smoothed<double>(nullptr, logits, {-1, 2, -1}, 0.0, -1);
        auto l_one = cross_entropy_smoothed<double>(nullptr, one, {2}, 0.0, -1);
        CHECK(l_full->v[0] == Approx(l_one->v[0]));
    }
    SECTION("invalid smoothing rejected") {
        auto logits = make_tensor<double>({1, 4});
        CHECK_THROWS_AS(cross_entropy_smoothed<double>(nullptr, logits, {0}, 1.0), ContractError);
    }
}

TEST_CASE("backward populates gradients per the calculus") {
    SECTION("sum of anything gives all-ones") {
        Rng rng(1);
        auto x = random_tensor({3, 4}, rng);
        Tape<double> tape;
        auto loss = sum_all(&tape, x);
        tape.backward(loss);
        for (double g : x->g) CHECK(g == 1.0);
    }
    SECTION("dot product swaps operands") {
        auto x = tensor_from<double>({3}, {1, 2, 3}, true);
        auto y = tensor_from<double>({3}, {4, 5, 6}, true);
        Tape<double> tape;
        auto loss = sum_all(&tape, mul(&tape, x, y));
        tape.backward(loss);
        CHECK(x->g == y->v);
        CHECK(y->g == x->v);
    }
    SECTION("repeated backward accumulates into leaves") {
        auto x = tensor_from<double>({2}, {1, 1}, true);
        Tape<double> tape;
        auto loss = sum_all(&tape, x);
        tape.backward(loss);
        tape.backward(loss);
        CHECK(x->g[0] == 2.0);
    }
    SECTION("backward is bit-deterministic") {
        Rng rng(9);
        auto x = random_tensor({4, 4}, rng);
        auto w = random_tensor({4, 4}, rng);
        std::vector<double> first;
        for (int run = 0; run < 2; ++run) {
            x->zero_grad();
            w->zero_grad();
            Tape<double> tape;
            auto h = gelu(&tape, matmul(&tape, x, w));
            auto loss = sum_all(&tape, mul(&tape, h, h));
            tape.backward(loss);
            if (run == 0)
                first = w->g;
            else
                CHECK(first == w->g);
        }
    }
    SECTION("non-scalar loss is a contract violation") {
        auto x = tensor_from<double>({2}, {1, 2}, true);
        Tape<double> tape;
        auto y = scale(&tape, x, 2.0);
        CHECK_THROWS_AS(tape.backward(y), ContractError);
    }
}

TEST_CASE("stop_gradient forwards values and blocks flow") {
    Rng rng(11);
    auto x = random_tensor({3, 3}, rng);
    auto sg = stop_gradient(x);
    CHECK(sg->v == x->v);
    CHECK_FALSE(sg->requires_grad);

    auto y = random_tensor({3, 3}, rng);
    Tape<double> tape;
    auto loss = sum_all(&tape, mul(&tape, sg, y));
    tape.backward(loss);
    CHECK(x->grad_all_zero());
    CHECK(y->g == sg->v);
}

// finite-difference sweep over every differentiable primitive
TEST_CASE("all primitives pass the finite-difference oracle") {
    Rng rng(1234);
    const double tol = 1e-4;

    SECTION("add/sub/mul chain") {
        auto a = random_tensor({3, 5}, rng);
        auto b = random_tensor({3, 5}, rng);
        auto c = random_tensor({3, 5}, rng);
        auto rep = check_gradients({a, b, c}, [&](bool bw) {
            Tape<double> tape;
            auto h = mul(&tape, add(&tape, a, b), sub(&tape, a, c));
            auto loss = sum_all(&tape, mul(&tape, h, h));
            if (bw) tape.backward(loss);
            return loss->v[0];
        });
        CHECK(rep.max_err < tol);
    }
    SECTION("add_rowvec") {
        auto x = random_tensor({4, 3}, rng);
        auto b = random_tensor({3}, rng);
        auto rep = check_gradients({x, b}, [&](bool bw) {
            Tape<double> tape;
            auto h = add_rowvec(&tape, x, b);
            auto loss = sum_all(&tape, mul(&tape, h, h));
            if (bw) tape.backward(loss);
            return loss->v[0];
        });
        CHECK(rep.max_err < tol);
    }
    SECTION("scale, mul_scalar, exp") {
        auto x = random_tensor({2, 3}, rng);
        auto s = random_tensor({1}, rng);
        auto rep = check_gradients({x, s}, [&](bool bw) {
            Tape<double> tape;
            auto h = mul_scalar(&tape, scale(&tape, x, 0.7), exp_op(&tape, s));
            auto loss = sum_all(&tape, mul(&tape, h, h));
            if (bw) tape.backward(loss);
            return loss->v[0];
        });
        CHECK(rep.max_err < tol);
    }
    SECTION("gelu") {
        auto x = random_tensor({3, 4}, rng);
        auto rep = check_gradients({x}, [&](bool bw) {
            Tape<double> tape;
            auto loss = sum_all(&tape, gelu(&tape, x));
            if (bw) tape.backward(loss);
            return loss->v[0];
        });
        CHECK(rep.max_err < tol);
    }
    SECTION("embed_rows") {
        auto table = random_tensor({6, 4}, rng);
        std::vector<int> ids{0, 2, 2, 5};
        auto rep = check_gradients({table}, [&](bool bw) {
            Tape<double> tape;
            auto h = embed_rows(&tape, table, ids);
            auto loss = sum_all(&tape, mul(&tape, h, h));
            if (bw) tape.backward(loss);
            return loss->v[0];
        });
        CHECK(rep.max_err < tol);
    }
    SECTION("slice and concat") {
        auto x = random_tensor({4, 6}, rng);
        auto y = random_tensor({2, 6}, rng);
        auto rep = check_gradients({x, y}, [&](bool bw) {
            Tape<double> tape;
            auto top = slice_rows(&tape, x, 0, 2);
            auto left = slice_cols(&tape, x, 0, 3);
            auto right = slice_cols(&tape, x, 3, 6);
            auto v = concat_rows(&tape, {top, y});
            auto hcat = concat_cols(&tape, {right, left});
            auto loss =
                add(&tape, sum_all(&tape, mul(&tape, v, v)), sum_all(&tape, mul(&tape, hcat, hcat)));
            if (bw) tape.backward(loss);
            return loss->v[0];
        });
        CHECK(rep.max_err < tol);
    }
    SECTION("softmax both axes") {
        auto x = random_tensor({4, 5}, rng);
        auto w = random_tensor({4, 5}, rng, false);
        for (int axis : {0, 1}) {
            auto rep = check_gradients({x}, [&](bool bw) {
                Tape<double> tape;
                auto loss = sum_all(&tape, mul(&tape, softmax(&tape, x, axis), w));
                if (bw) tape.backward(loss);
                return loss->v[0];
            });
            CHECK(rep.max_err < tol);
        }
    }
    SECTION("log_softmax both axes") {
        auto x = random_tensor({4, 5}, rng);
        auto w = random_tensor({4, 5}, rng, false);
        for (int axis : {0, 1}) {
            auto rep = check_gradients({x}, [&](bool bw) {
                Tape<double> tape;
                auto loss = sum_all(&tape, mul(&tape, log_softmax(&tape, x, axis), w));
                if (bw) tape.backward(loss);
                return loss->v[0];
            });
            CHECK(rep.max_err < tol);
        }
    }
    SECTION("l2_normalize") {
        auto x = random_tensor({3, 4}, rng);
        auto w = random_tensor({3, 4}, rng, false);
        auto rep = check_gradients({x}, [&](bool bw) {
            Tape<double> tape;
            auto loss = sum_all(&tape, mul(&tape, l2_normalize(&tape, x, 1), w));
            if (bw) tape.backward(loss);
            return loss->v[0];
        });
        CHECK(rep.max_err < tol);
    }
    SECTION("layer_norm") {
        auto x = random_tensor({3, 6}, rng);
        auto gain = random_tensor({6}, rng);
        auto bias = random_tensor({6}, rng);
        auto w = random_tensor({3, 6}, rng, false);
        auto rep = check_gradients({x, gain, bias}, [&](bool bw) {
            Tape<double> tape;
            auto loss = sum_all(&tape, mul(&tape, layer_norm(&tape, x, gain, bias), w));
            if (bw) tape.backward(loss);
            return loss->v[0];
        });
        CHECK(rep.max_err < tol);
    }
    SECTION("cross_entropy_smoothed with ignored position") {
        auto logits = random_tensor({4, 7}, rng);
        std::vector<int> targets{2, -1, 5, 0};
        for (double s : {0.0, 0.1}) {
            auto rep = check_gradients({logits}, [&](bool bw) {
                Tape<double> tape;
                auto loss = cross_entropy_smoothed(&tape, logits, targets, s, -1);
                if (bw) tape.backward(loss);
                return loss->v[0];
            });
            CHECK(rep.max_err < tol);
        }
    }
    SECTION("matmul_nt") {
        auto a = random_tensor({3, 5}, rng);
        auto b = random_tensor({4, 5}, rng);
        auto rep = check_gradients({a, b}, [&](bool bw) {
            Tape<double> tape;
            auto h = matmul_nt(&tape, a, b);
            auto loss = sum_all(&tape, mul(&tape, h, h));
            if (bw) tape.backward(loss);
            return loss->v[0];
        });
        CHECK(rep.max_err < tol);
    }
}

TEST_CASE("pseudo_inverse hand and property cases") {
    SECTION("selector matrix") {
        auto w = tensor_from<double>({2, 3}, {1, 0, 0, 0, 1, 0});
        auto x = pseudo_inverse(w);
        const std::vector<double> expected{1, 0, 0, 1, 0, 0};
        for (size_t i = 0; i < expected.size(); ++i) CHECK(x->v[i] == Approx(expected[i]).margin(1e-12));
    }
    SECTION("1x2 analytic case") {
        auto w = tensor_from<double>({1, 2}, {3, 4});
        auto x = pseudo_inverse(w);
        CHECK(x->v[0] == Approx(0.12));
        CHECK(x->v[1] == Approx(0.16));
    }
    SECTION("random wide full-rank matrices invert to identity") {
        Rng rng(77);
        auto w = random_tensor({64, 96}, rng, false, 1.0 / std::sqrt(96.0));
        auto x = pseudo_inverse(w);
        auto prod = matmul<double>(nullptr, w, x);
        double fro = 0.0;
        for (int i = 0; i < 64; ++i)
            for (int j = 0; j < 64; ++j) {
                const double d = prod->at(i, j) - (i == j ? 1.0 : 0.0);
                fro += d * d;
            }
        CHECK(std::sqrt(fro) <= 1e-6);
    }
    SECTION("rank-deficient input raises a numeric error") {
        auto w = tensor_from<double>({2, 3}, {1, 2, 3, 2, 4, 6});
        CHECK_THROWS_AS(pseudo_inverse(w), NumericError);
    }
}
