#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "lsc/common.hpp"
#include "lsc/tensor.hpp"
#include "oracles.hpp"

using namespace lsc;

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
    return m;
}

// distinct-weight reduction to a scalar so index mix-ups change the loss
Tensor weighted_sum(const Tensor& t, std::uint64_t salt) {
    Rng rng(1234 + salt);
    Eigen::MatrixXd w(t->value.rows(), t->value.cols());
    for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-1.0, 1.0);
    Tensor prod = cmul(t, make_constant(std::move(w)));
    Tensor left = make_constant(Eigen::MatrixXd::Ones(1, prod->value.rows()));
    Tensor right = make_constant(Eigen::MatrixXd::Ones(prod->value.cols(), 1));
    return matmul(matmul(left, prod), right);
}

using Builder = std::function<Tensor(const std::vector<Tensor>&)>;

double eval_loss(const std::vector<Eigen::MatrixXd>& inputs, const Builder& build) {
    std::vector<Tensor> vars;
    vars.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i)
        vars.push_back(make_variable(inputs[i], "v" + std::to_string(i)));
    return build(vars)->value(0, 0);
}

// central differences over every entry of every input
void gradcheck(const std::vector<Eigen::MatrixXd>& inputs, const Builder& build,
               double tol = 2e-6) {
    std::vector<Tensor> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        vars.push_back(make_variable(inputs[i], "v" + std::to_string(i)));
    Tensor loss = build(vars);
    REQUIRE(loss->value.rows() == 1);
    REQUIRE(loss->value.cols() == 1);
    backward(loss);

    const double h = 1e-5;
    for (std::size_t v = 0; v < inputs.size(); ++v) {
        for (Eigen::Index r = 0; r < inputs[v].rows(); ++r) {
            for (Eigen::Index c = 0; c < inputs[v].cols(); ++c) {
                auto plus = inputs;
                auto minus = inputs;
                plus[v](r, c) += h;
                minus[v](r, c) -= h;
                const double numeric =
                    (eval_loss(plus, build) - eval_loss(minus, build)) / (2.0 * h);
                const double analytic = vars[v]->grad(r, c);
                const bool ok = std::abs(analytic - numeric) <= 1e-7 ||
                                oracle::rel_err(analytic, numeric) <= tol;
                if (!ok) {
                    CAPTURE(v);
                    CAPTURE(r);
                    CAPTURE(c);
                    CAPTURE(analytic);
                    CAPTURE(numeric);
                }
                CHECK(ok);
            }
        }
    }
}

}  // namespace

TEST_CASE("forward fixtures") {
    SUBCASE("gelu at 1 matches the exact erf form") {
        Tensor x = make_variable(Eigen::MatrixXd::Constant(1, 1, 1.0), "x");
        CHECK(gelu(x)->value(0, 0) == doctest::Approx(0.8413447461).epsilon(1e-9));
        Tensor z = make_variable(Eigen::MatrixXd::Zero(1, 1), "z");
        CHECK(gelu(z)->value(0, 0) == 0.0);
    }
    SUBCASE("relu and sigmoid") {
        Eigen::MatrixXd m(1, 3);
        m << -2.0, 0.0, 3.0;
        Tensor x = make_variable(m, "x");
        Tensor r = relu(x);
        CHECK(r->value(0, 0) == 0.0);
        CHECK(r->value(0, 1) == 0.0);
        CHECK(r->value(0, 2) == 3.0);
        Tensor s = sigmoid_op(x);
        CHECK(s->value(0, 1) == 0.5);
        CHECK(s->value(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(2.0))).epsilon(1e-15));
    }
    SUBCASE("matmul fixture") {
        Eigen::MatrixXd a(2, 2), b(2, 1);
        a << 1, 2, 3, 4;
        b << 5, 6;
        Tensor out = matmul(make_constant(a), make_constant(b));
        CHECK(out->value(0, 0) == 17.0);
        CHECK(out->value(1, 0) == 39.0);
        Tensor nt = matmul_nt(make_constant(a), make_constant(b.transpose()));
        CHECK(nt->value == out->value);
    }
    SUBCASE("softmax rows sum to one and survive huge logits") {
        Eigen::MatrixXd m(2, 3);
        m << 1000.0, 1001.0, 1002.0, 0.0, 0.0, 0.0;
        Tensor s = softmax_rows(make_constant(m));
        for (Eigen::Index r = 0; r < 2; ++r)
            CHECK(s->value.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(s->value(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
        CHECK(s->value.allFinite());
    }
    SUBCASE("layernorm normalizes each row") {
        Rng rng(3);
        Eigen::MatrixXd m = random_matrix(rng, 4, 6);
        Tensor out = layernorm_rows(make_constant(m),
                                    make_constant(Eigen::MatrixXd::Ones(1, 6)),
                                    make_constant(Eigen::MatrixXd::Zero(1, 6)), 1e-9);
        for (Eigen::Index r = 0; r < 4; ++r) {
            CHECK(out->value.row(r).mean() == doctest::Approx(0.0).epsilon(1e-12));
            const double var = out->value.row(r).array().square().mean();
            CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    SUBCASE("mean_rows") {
        Eigen::MatrixXd m(2, 2);
        m << 1.0, 10.0, 3.0, 20.0;
        Tensor out = mean_rows(make_constant(m));
        CHECK(out->value.rows() == 1);
        CHECK(out->value(0, 0) == 2.0);
        CHECK(out->value(0, 1) == 15.0);
    }
    SUBCASE("slice and concat round-trip") {
        Rng rng(5);
        Eigen::MatrixXd m = random_matrix(rng, 4, 10);
        Tensor a = make_constant(m);
        Tensor joined = concat_cols({slice_cols(a, 0, 3), slice_cols(a, 3, 7)});
        CHECK(joined->value == m);
        Tensor stacked = concat_rows({make_constant(m.topRows(1)),
                                      make_constant(m.bottomRows(3))});
        CHECK(stacked->value == m);
    }
}

TEST_CASE("losses") {
    SUBCASE("bce at logit 0, y=1 is ln 2") {
        Tensor logits = make_variable(Eigen::MatrixXd::Zero(1, 1), "z");
        Tensor y = make_constant(Eigen::MatrixXd::Constant(1, 1, 1.0));
        CHECK(bce_with_logits_mean(logits, y)->value(0, 0) ==
              doctest::Approx(std::log(2.0)).epsilon(1e-15));
    }
    SUBCASE("bce is a mean over the batch and stable at huge logits") {
        Eigen::MatrixXd z(3, 1), y(3, 1);
        z << 0.0, 1000.0, -1000.0;
        y << 1.0, 1.0, 0.0;
        const double loss = bce_with_logits_mean(make_constant(z), make_constant(y))->value(0, 0);
        CHECK(loss == doctest::Approx(std::log(2.0) / 3.0).epsilon(1e-12));
        CHECK(std::isfinite(loss));
    }
    SUBCASE("soft F1 fixture at logit 0, y=1") {
        Tensor logits = make_variable(Eigen::MatrixXd::Zero(1, 1), "z");
        Tensor y = make_constant(Eigen::MatrixXd::Constant(1, 1, 1.0));
        const double expect = 1.0 - 2.0 * 0.5 / (0.5 + 1.0 + 1e-8);
        CHECK(soft_f1_loss(logits, y)->value(0, 0) == doctest::Approx(expect).epsilon(1e-15));
        CHECK(soft_f1_loss(logits, y)->value(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
    }
    SUBCASE("perfect confident predictions drive both losses to zero") {
        Eigen::MatrixXd z(2, 1), y(2, 1);
        z << 40.0, -40.0;
        y << 1.0, 0.0;
        CHECK(bce_with_logits_mean(make_constant(z), make_constant(y))->value(0, 0) ==
              doctest::Approx(0.0).epsilon(1e-12));
        CHECK(soft_f1_loss(make_constant(z), make_constant(y))->value(0, 0) ==
              doctest::Approx(0.0).epsilon(1e-6));
    }
    SUBCASE("all-negative batch keeps the epsilon guard finite") {
        Eigen::MatrixXd z(3, 1), y = Eigen::MatrixXd::Zero(3, 1);
        z << -30.0, -30.0, -30.0;
        const double loss = soft_f1_loss(make_constant(z), make_constant(y))->value(0, 0);
        CHECK(std::isfinite(loss));
        CHECK(loss == doctest::Approx(1.0).epsilon(1e-9));  // 1 - 0/(eps-ish)
    }
}

TEST_CASE("gradient checks per op") {
    Rng rng(99);
    SUBCASE("matmul both arguments") {
        gradcheck({random_matrix(rng, 2, 3), random_matrix(rng, 3, 2)},
                  [](const std::vector<Tensor>& v) {
                      return weighted_sum(matmul(v[0], v[1]), 1);
                  });
    }
    SUBCASE("matmul_nt") {
        gradcheck({random_matrix(rng, 2, 3), random_matrix(rng, 4, 3)},
                  [](const std::vector<Tensor>& v) {
                      return weighted_sum(matmul_nt(v[0], v[1]), 2);
                  });
    }
    SUBCASE("add and scale") {
        gradcheck({random_matrix(rng, 3, 4), random_matrix(rng, 3, 4)},
                  [](const std::vector<Tensor>& v) {
                      return weighted_sum(add(v[0], scale(v[1], -2.3)), 3);
                  });
    }
    SUBCASE("add_rowvec broadcast") {
        gradcheck({random_matrix(rng, 3, 4), random_matrix(rng, 1, 4)},
                  [](const std::vector<Tensor>& v) {
                      return weighted_sum(add_rowvec(v[0], v[1]), 4);
                  });
    }
    SUBCASE("cmul") {
        gradcheck({random_matrix(rng, 2, 5), random_matrix(rng, 2, 5)},
                  [](const std::vector<Tensor>& v) {
                      return weighted_sum(cmul(v[0], v[1]), 5);
                  });
    }
    SUBCASE("relu away from the kink") {
        Eigen::MatrixXd m = random_matrix(rng, 3, 4);
        for (Eigen::Index r = 0; r < 3; ++r)
            for (Eigen::Index c = 0; c < 4; ++c)
                if (std::abs(m(r, c)) < 0.05) m(r, c) = 0.25;
        gradcheck({m}, [](const std::vector<Tensor>& v) {
            return weighted_sum(relu(v[0]), 6);
        });
    }
    SUBCASE("gelu") {
        gradcheck({random_matrix(rng, 3, 3)}, [](const std::vector<Tensor>& v) {
            return weighted_sum(gelu(v[0]), 7);
        });
    }
    SUBCASE("sigmoid") {
        gradcheck({random_matrix(rng, 2, 4)}, [](const std::vector<Tensor>& v) {
            return weighted_sum(sigmoid_op(v[0]), 8);
        });
    }
    SUBCASE("softmax rows") {
        gradcheck({random_matrix(rng, 3, 5)}, [](const std::vector<Tensor>& v) {
            return weighted_sum(softmax_rows(v[0]), 9);
        });
    }
    SUBCASE("layernorm x gamma beta") {
        gradcheck({random_matrix(rng, 3, 5), random_matrix(rng, 1, 5),
                   random_matrix(rng, 1, 5)},
                  [](const std::vector<Tensor>& v) {
                      return weighted_sum(layernorm_rows(v[0], v[1], v[2], 1e-5), 10);
                  },
                  5e-6);
    }
    SUBCASE("mean_rows") {
        gradcheck({random_matrix(rng, 4, 3)}, [](const std::vector<Tensor>& v) {
            return weighted_sum(mean_rows(v[0]), 11);
        });
    }
    SUBCASE("concat and slice") {
        gradcheck({random_matrix(rng, 2, 6), random_matrix(rng, 2, 3)},
                  [](const std::vector<Tensor>& v) {
                      Tensor left = slice_cols(v[0], 1, 4);
                      Tensor joined = concat_cols({left, v[1]});
                      Tensor stacked = concat_rows({joined, scale(joined, 0.5)});
                      return weighted_sum(stacked, 12);
                  });
    }
    SUBCASE("batchnorm train") {
        gradcheck({random_matrix(rng, 5, 3), random_matrix(rng, 1, 3),
                   random_matrix(rng, 1, 3)},
                  [](const std::vector<Tensor>& v) {
                      return weighted_sum(
                          batchnorm_train(v[0], v[1], v[2], 1e-5, nullptr, nullptr), 13);
                  },
                  5e-6);
    }
    SUBCASE("batchnorm eval") {
        Eigen::RowVectorXd mean(3), var(3);
        mean << 0.1, -0.2, 0.3;
        var << 1.1, 0.7, 0.9;
        gradcheck({random_matrix(rng, 4, 3), random_matrix(rng, 1, 3),
                   random_matrix(rng, 1, 3)},
                  [mean, var](const std::vector<Tensor>& v) {
                      return weighted_sum(
                          batchnorm_eval(v[0], v[1], v[2], mean, var, 1e-5), 14);
                  });
    }
    SUBCASE("dropout with a rebuilt identical mask") {
        gradcheck({random_matrix(rng, 4, 4)}, [](const std::vector<Tensor>& v) {
            Rng mask_rng(777);  // fresh per build, so every evaluation sees one mask
            return weighted_sum(dropout(v[0], 0.4, mask_rng, true), 15);
        });
    }
    SUBCASE("bce with logits") {
        Eigen::MatrixXd y(4, 1);
        y << 1.0, 0.0, 1.0, 0.0;
        gradcheck({random_matrix(rng, 4, 1)}, [y](const std::vector<Tensor>& v) {
            return bce_with_logits_mean(v[0], make_constant(y));
        });
    }
    SUBCASE("soft F1") {
        Eigen::MatrixXd y(5, 1);
        y << 1.0, 0.0, 1.0, 1.0, 0.0;
        gradcheck({random_matrix(rng, 5, 1)}, [y](const std::vector<Tensor>& v) {
            return soft_f1_loss(v[0], make_constant(y));
        });
    }
    SUBCASE("combined half-and-half loss") {
        Eigen::MatrixXd y(4, 1);
        y << 0.0, 1.0, 1.0, 0.0;
        gradcheck({random_matrix(rng, 4, 1)}, [y](const std::vector<Tensor>& v) {
            Tensor t = make_constant(y);
            return add(scale(bce_with_logits_mean(v[0], t), 0.5),
                       scale(soft_f1_loss(v[0], t), 0.5));
        });
    }
}

TEST_CASE("backward mechanics") {
    SUBCASE("shared subgraphs accumulate") {
        Tensor x = make_variable(Eigen::MatrixXd::Constant(1, 1, 3.0), "x");
        Tensor loss = add(cmul(x, x), scale(x, 5.0));  // x^2 + 5x
        backward(loss);
        CHECK(x->grad(0, 0) == 11.0);
    }
    SUBCASE("diamond-shaped graph") {
        Tensor x = make_variable(Eigen::MatrixXd::Constant(1, 1, 0.7), "x");
        Tensor loss = add(cmul(x, x), scale(sigmoid_op(x), 3.0));
        backward(loss);
        const double s = 1.0 / (1.0 + std::exp(-0.7));
        CHECK(x->grad(0, 0) == doctest::Approx(2.0 * 0.7 + 3.0 * s * (1.0 - s)).epsilon(1e-12));
    }
    SUBCASE("loss independent of a parameter leaves its gradient exactly zero") {
        Tensor x = make_variable(Eigen::MatrixXd::Constant(1, 1, 2.0), "x");
        Tensor unused = make_variable(Eigen::MatrixXd::Constant(1, 1, 9.0), "unused");
        backward(cmul(x, x));
        CHECK(unused->grad(0, 0) == 0.0);
        CHECK(x->grad(0, 0) == 4.0);
    }
    SUBCASE("doubling the loss doubles every gradient bit-for-bit") {
        Rng rng(21);
        Eigen::MatrixXd m = random_matrix(rng, 3, 3);
        Tensor x1 = make_variable(m, "x");
        backward(weighted_sum(gelu(x1), 30));
        Tensor x2 = make_variable(m, "x");
        backward(scale(weighted_sum(gelu(x2), 30), 2.0));
        for (Eigen::Index r = 0; r < 3; ++r)
            for (Eigen::Index c = 0; c < 3; ++c)
                CHECK(x2->grad(r, c) == 2.0 * x1->grad(r, c));
    }
    SUBCASE("zero_grad resets and a second pass reproduces gradients") {
        Tensor x = make_variable(Eigen::MatrixXd::Constant(1, 1, 1.5), "x");
        Tensor loss = cmul(x, x);
        backward(loss);
        const double g = x->grad(0, 0);
        x->zero_grad();
        loss->zero_grad();
        backward(loss);
        CHECK(x->grad(0, 0) == g);
    }
    SUBCASE("constants receive no gradient") {
        Tensor x = make_variable(Eigen::MatrixXd::Constant(1, 1, 2.0), "x");
        Tensor c = make_constant(Eigen::MatrixXd::Constant(1, 1, 4.0));
        backward(cmul(x, c));
        CHECK(x->grad(0, 0) == 4.0);
        CHECK(c->grad(0, 0) == 0.0);
        CHECK(!c->requires_grad);
    }
    SUBCASE("non-scalar root rejected") {
        Tensor x = make_variable(Eigen::MatrixXd::Zero(2, 2), "x");
        CHECK_THROWS_AS(backward(relu(x)), PreconditionError);
        CHECK_THROWS_AS(backward(nullptr), PreconditionError);
    }
}

TEST_CASE("dropout modes") {
    Rng rng(55);
    Tensor x = make_variable(Eigen::MatrixXd::Constant(8, 8, 1.0), "x");
    SUBCASE("eval mode and p=0 are identity pass-throughs") {
        CHECK(dropout(x, 0.3, rng, false) == x);
        CHECK(dropout(x, 0.0, rng, true) == x);
    }
    SUBCASE("train mode zeroes and rescales") {
        Tensor out = dropout(x, 0.25, rng, true);
        int zeros = 0, kept = 0;
        for (Eigen::Index r = 0; r < 8; ++r) {
            for (Eigen::Index c = 0; c < 8; ++c) {
                const double v = out->value(r, c);
                if (v == 0.0)
                    ++zeros;
                else {
                    CHECK(v == doctest::Approx(1.0 / 0.75).epsilon(1e-15));
                    ++kept;
                }
            }
        }
        CHECK(zeros > 0);
        CHECK(kept > 0);
        CHECK(kept + zeros == 64);
        CHECK(zeros < 40);  // rate 0.25 over 64 draws stays well below 40
    }
    SUBCASE("rate validation") {
        CHECK_THROWS_AS(dropout(x, 1.0, rng, true), ValueError);
        CHECK_THROWS_AS(dropout(x, -0.1, rng, true), ValueError);
    }
}

TEST_CASE("batchnorm contract") {
    Rng rng(66);
    Eigen::MatrixXd m = random_matrix(rng, 6, 3);
    Tensor gamma = make_variable(Eigen::MatrixXd::Ones(1, 3), "g");
    Tensor beta = make_variable(Eigen::MatrixXd::Zero(1, 3), "b");

    SUBCASE("train mode normalizes columns and reports batch stats") {
        Eigen::RowVectorXd bm, bv;
        Tensor out = batchnorm_train(make_constant(m), gamma, beta, 1e-9, &bm, &bv);
        for (Eigen::Index c = 0; c < 3; ++c) {
            CHECK(out->value.col(c).mean() == doctest::Approx(0.0).epsilon(1e-12));
            CHECK(out->value.col(c).array().square().mean() ==
                  doctest::Approx(1.0).epsilon(1e-6));
            CHECK(bm(c) == doctest::Approx(m.col(c).mean()).epsilon(1e-15));
            const double mu = m.col(c).mean();
            CHECK(bv(c) ==
                  doctest::Approx((m.col(c).array() - mu).square().mean()).epsilon(1e-12));
        }
    }
    SUBCASE("eval mode applies the given statistics exactly") {
        Eigen::RowVectorXd mean(3), var(3);
        mean << 0.5, -1.0, 0.0;
        var << 2.0, 1.0, 0.25;
        Tensor out = batchnorm_eval(make_constant(m), gamma, beta, mean, var, 0.0);
        for (Eigen::Index r = 0; r < 6; ++r)
            for (Eigen::Index c = 0; c < 3; ++c)
                CHECK(out->value(r, c) ==
                      doctest::Approx((m(r, c) - mean(c)) / std::sqrt(var(c))).epsilon(1e-12));
    }
    SUBCASE("batches of one are rejected in train mode") {
        CHECK_THROWS_AS(
            batchnorm_train(make_constant(m.topRows(1)), gamma, beta, 1e-5, nullptr, nullptr),
            PreconditionError);
    }
}

TEST_CASE("shape validation") {
    Tensor a = make_variable(Eigen::MatrixXd::Zero(2, 3), "a");
    Tensor b = make_variable(Eigen::MatrixXd::Zero(2, 2), "b");
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
    CHECK_THROWS_AS(matmul_nt(a, b), ShapeError);
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(cmul(a, b), ShapeError);
    CHECK_THROWS_AS(add_rowvec(a, b), ShapeError);
    CHECK_THROWS_AS(layernorm_rows(a, b, b, 1e-5), ShapeError);
    CHECK_THROWS_AS(
        batchnorm_train(a, b, b, 1e-5, nullptr, nullptr), ShapeError);
    CHECK_THROWS_AS(slice_cols(a, 2, 2), ShapeError);
    CHECK_THROWS_AS(concat_cols({}), PreconditionError);
    CHECK_THROWS_AS(concat_rows({}), PreconditionError);
    CHECK_THROWS_AS(concat_cols({a, make_variable(Eigen::MatrixXd::Zero(3, 3), "c")}),
                    ShapeError);
    CHECK_THROWS_AS(concat_rows({a, b}), ShapeError);
    CHECK_THROWS_AS(bce_with_logits_mean(a, b), ShapeError);
    CHECK_THROWS_AS(soft_f1_loss(a, b), ShapeError);
}
