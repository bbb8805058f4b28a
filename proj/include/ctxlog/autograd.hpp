#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ctxlog/matrix.hpp"
#include "ctxlog/rng.hpp"

namespace ctxlog {

// Ragged batch layout: segment i covers rows [offsets[i], offsets[i+1]).
struct Segments {
    std::vector<std::size_t> offsets{0};

    static Segments from_lengths(std::span<const std::size_t> lengths);

    std::size_t count() const noexcept { return offsets.size() - 1; }
    std::size_t begin(std::size_t i) const { return offsets[i]; }
    std::size_t end(std::size_t i) const { return offsets[i + 1]; }
    std::size_t length(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
    std::size_t total() const noexcept { return offsets.back(); }
};

struct Var {
    std::size_t id = 0;
};

// Reverse-mode tape over row-major matrices. Nodes are appended in
// evaluation order; backward() walks them in reverse.
template <typename T>
class Tape {
public:
    Var input(Matrix<T> value, bool requires_grad = false);
    // Binds an externally owned parameter. Gradients accumulate into `grad`
    // (same shape as `value`); pass nullptr for a frozen parameter.
    Var parameter(const Matrix<T>& value, Matrix<T>* grad);

    const Matrix<T>& value(Var v) const;
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    // Gradient buffer of a node, zero-initialised on first access.
    Matrix<T>& grad(Var v);

    // Seeds d(loss)/d(loss) = 1 and runs every recorded backward closure.
    void backward(Var loss);

    // When disabled, ops skip recording backward closures (inference).
    void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }
    bool grad_enabled() const noexcept { return grad_enabled_; }

    std::size_t size() const noexcept { return nodes_.size(); }

    // Used by op implementations.
    Var push(Matrix<T> value, bool requires_grad, std::function<void()> back);
    bool any_requires_grad(std::initializer_list<Var> vars) const;

private:
    struct Node {
        Matrix<T> own;
        const Matrix<T>* external = nullptr;
        Matrix<T> grad;
        Matrix<T>* external_grad = nullptr;
        bool requires_grad = false;
        std::function<void()> back;
    };
    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
};

namespace ops {

// y = x W (+ b); x: rows x in, W: in x out, b: 1 x out.
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b);
template <typename T>
Var linear_no_bias(Tape<T>& tape, Var x, Var w);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

// y[r] = table[ids[r]]
template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const std::int32_t> ids);

// y[r] = x[r] + table[table_rows[r]]
template <typename T>
Var add_rows(Tape<T>& tape, Var x, Var table, std::span<const std::size_t> table_rows);

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps = T(1e-5));

// tanh approximation.
template <typename T>
Var gelu(Tape<T>& tape, Var x);

// Bidirectional multi-head self-attention within each segment.
// qkv: rows x 3D laid out [Q | K | V]; output rows x D.
template <typename T>
Var attention(Tape<T>& tape, Var qkv, const Segments& segments, std::size_t heads);

// One output row per segment: the mean of its rows.
template <typename T>
Var mean_pool(Tape<T>& tape, Var x, const Segments& segments);

// Row-wise L2 normalisation.
template <typename T>
Var l2_normalize(Tape<T>& tape, Var x);

// y[r] = vec for r in rows, x[r] otherwise. No gradient reaches x at
// replaced rows.
template <typename T>
Var replace_rows(Tape<T>& tape, Var x, Var vec, std::span<const std::size_t> rows);

template <typename T>
Var gather_rows(Tape<T>& tape, Var x, std::span<const std::size_t> rows);

// Inverted dropout. p == 0 returns x unchanged.
template <typename T>
Var dropout(Tape<T>& tape, Var x, double p, Rng& rng);

} // namespace ops

} // namespace ctxlog
