#include "doctest.h"

#include "ctxlog/autograd.hpp"
#include "ctxlog/errors.hpp"
#include "gradcheck.hpp"

using namespace ctxlog;
using ctxlog::testing::GradCheck;
using ctxlog::testing::check_entries;

namespace {

Matrix<double> random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Matrix<double> m(r, c);
    for (auto& v : m.storage()) v = rng.normal(0.0, scale);
    return m;
}

// loss = sum(y .* w): a fixed random projection turns any output into a scalar.
Var weighted_sum(Tape<double>& tape, Var y, const Matrix<double>& w) {
    const auto& yv = tape.value(y);
    double s = 0.0;
    for (std::size_t i = 0; i < yv.size(); ++i) s += yv.data()[i] * w.data()[i];
    Var out{tape.size()};
    return tape.push(Matrix<double>(1, 1, s), tape.requires_grad(y), [&tape, y, w, out] {
        const double up = tape.grad(out)(0, 0);
        auto& g = tape.grad(y);
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += up * w.data()[i];
    });
}

using Build = std::function<Var(Tape<double>&, std::vector<Var>&)>;

// Checks the gradient of every input tensor in `inputs` under `build`.
GradCheck check_op(std::vector<Matrix<double>>& inputs, const Build& build, std::uint64_t seed) {
    Rng rng(seed);
    Matrix<double> w;
    std::vector<Matrix<double>> grads(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) grads[i] = Matrix<double>(inputs[i].rows(), inputs[i].cols());

    auto evaluate = [&](bool with_grad) {
        Tape<double> tape;
        std::vector<Var> vars;
        for (std::size_t i = 0; i < inputs.size(); ++i)
            vars.push_back(tape.parameter(inputs[i], with_grad ? &grads[i] : nullptr));
        Var y = build(tape, vars);
        if (w.empty()) w = random_matrix(tape.value(y).rows(), tape.value(y).cols(), rng);
        Var loss = weighted_sum(tape, y, w);
        if (with_grad) tape.backward(loss);
        return tape.value(loss)(0, 0);
    };
    evaluate(true);
    GradCheck acc;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        check_entries(inputs[i], grads[i], [&] { return evaluate(false); }, 1e-5, acc);
    return acc;
}

} // namespace

TEST_CASE("linear gradients match finite differences") {
    Rng rng(1);
    std::vector<Matrix<double>> in{random_matrix(5, 4, rng), random_matrix(4, 3, rng), random_matrix(1, 3, rng)};
    auto r = check_op(in, [](Tape<double>& t, std::vector<Var>& v) { return ops::linear(t, v[0], v[1], v[2]); }, 2);
    CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("layer_norm gradients match finite differences") {
    Rng rng(3);
    std::vector<Matrix<double>> in{random_matrix(4, 6, rng), random_matrix(1, 6, rng), random_matrix(1, 6, rng)};
    auto r = check_op(in, [](Tape<double>& t, std::vector<Var>& v) { return ops::layer_norm(t, v[0], v[1], v[2]); }, 4);
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("gelu and add gradients match finite differences") {
    Rng rng(5);
    std::vector<Matrix<double>> in{random_matrix(3, 5, rng), random_matrix(3, 5, rng)};
    auto r = check_op(in, [](Tape<double>& t, std::vector<Var>& v) { return ops::gelu(t, ops::add(t, v[0], v[1])); }, 6);
    CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("attention gradients match finite differences across ragged segments") {
    Rng rng(7);
    std::vector<Matrix<double>> in{random_matrix(7, 12, rng)};
    std::size_t lens[] = {3, 1, 3};
    const auto segs = Segments::from_lengths(lens);
    auto r = check_op(in, [&](Tape<double>& t, std::vector<Var>& v) { return ops::attention(t, v[0], segs, 2); }, 8);
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("attention does not mix segments") {
    Rng rng(9);
    auto qkv = random_matrix(5, 6, rng);
    std::size_t lens[] = {2, 3};
    const auto segs = Segments::from_lengths(lens);
    Tape<double> t1;
    auto a = t1.value(ops::attention(t1, t1.input(qkv), segs, 1));
    for (std::size_t c = 0; c < 6; ++c) qkv(4, c) += 1.0;  // touch only the second segment
    Tape<double> t2;
    auto b = t2.value(ops::attention(t2, t2.input(qkv), segs, 1));
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c) CHECK(a(r, c) == b(r, c));
}

TEST_CASE("pooling, normalisation and row plumbing gradients") {
    Rng rng(11);
    std::size_t lens[] = {2, 3};
    const auto segs = Segments::from_lengths(lens);
    std::vector<Matrix<double>> in{random_matrix(5, 4, rng), random_matrix(1, 4, rng), random_matrix(6, 4, rng)};
    const std::vector<std::size_t> replaced{1, 3};
    const std::vector<std::size_t> table_rows{0, 5, 2, 2, 1};
    const std::vector<std::size_t> gather{4, 1, 1};
    auto r = check_op(in, [&](Tape<double>& t, std::vector<Var>& v) {
        Var x = ops::replace_rows(t, v[0], v[1], replaced);
        x = ops::add_rows(t, x, v[2], table_rows);
        Var pooled = ops::mean_pool(t, x, segs);
        Var g = ops::gather_rows(t, x, gather);
        return ops::l2_normalize(t, ops::add(t, g, ops::gather_rows(t, pooled, std::vector<std::size_t>{0, 1, 0})));
    }, 12);
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("replace_rows blocks gradient to replaced rows") {
    Matrix<double> x(3, 2, 1.0), gx(3, 2);
    Matrix<double> vec(1, 2, 0.5), gv(1, 2);
    Tape<double> t;
    Var xv = t.parameter(x, &gx);
    Var vv = t.parameter(vec, &gv);
    const std::vector<std::size_t> rows{1};
    Var y = ops::replace_rows(t, xv, vv, rows);
    Var loss = weighted_sum(t, y, Matrix<double>(3, 2, 1.0));
    t.backward(loss);
    CHECK(gx(1, 0) == 0.0);
    CHECK(gx(1, 1) == 0.0);
    CHECK(gx(0, 0) == 1.0);
    CHECK(gv(0, 0) == 1.0);
}

TEST_CASE("embedding gradient scatters into used rows") {
    Rng rng(13);
    std::vector<Matrix<double>> in{random_matrix(6, 3, rng)};
    const std::vector<std::int32_t> ids{2, 2, 5, 0};
    auto r = check_op(in, [&](Tape<double>& t, std::vector<Var>& v) { return ops::embedding(t, v[0], std::span<const std::int32_t>(ids)); }, 14);
    CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("shape errors are reported") {
    Tape<double> t;
    Var a = t.input(Matrix<double>(2, 3));
    Var b = t.input(Matrix<double>(2, 2));
    CHECK_THROWS_AS(ops::add(t, a, b), ShapeMismatch);
    CHECK_THROWS_AS(ops::linear_no_bias(t, a, b), ShapeMismatch);
    const std::vector<std::size_t> bad{5};
    CHECK_THROWS_AS(ops::gather_rows(t, a, bad), IndexOutOfRange);
}
