#include "ctxlog/autograd.hpp"

#include <cmath>
#include <stdexcept>

#include "ctxlog/errors.hpp"

namespace ctxlog {

Segments Segments::from_lengths(std::span<const std::size_t> lengths) {
    Segments s;
    s.offsets.reserve(lengths.size() + 1);
    for (auto n : lengths) s.offsets.push_back(s.offsets.back() + n);
    return s;
}

template <typename T>
Var Tape<T>::input(Matrix<T> value, bool requires_grad) {
    Node n;
    n.own = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::parameter(const Matrix<T>& value, Matrix<T>* grad) {
    Node n;
    n.external = &value;
    n.external_grad = grad;
    n.requires_grad = grad != nullptr && grad_enabled_;
    if (grad && !grad->same_shape(value)) throw ShapeMismatch("parameter gradient buffer shape");
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename T>
const Matrix<T>& Tape<T>::value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.own;
}

template <typename T>
Matrix<T>& Tape<T>::grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.external_grad) return *n.external_grad;
    if (n.grad.empty() && !value(v).empty()) {
        const auto& val = value(v);
        n.grad = Matrix<T>(val.rows(), val.cols());
    }
    return n.grad;
}

template <typename T>
Var Tape<T>::push(Matrix<T> value, bool requires_grad, std::function<void()> back) {
    Node n;
    n.own = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    if (n.requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename T>
bool Tape<T>::any_requires_grad(std::initializer_list<Var> vars) const {
    if (!grad_enabled_) return false;
    for (auto v : vars)
        if (nodes_[v.id].requires_grad) return true;
    return false;
}

template <typename T>
void Tape<T>::backward(Var loss) {
    const auto& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) throw ShapeMismatch("backward() needs a 1x1 loss");
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss)(0, 0) = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.back && !n.grad.empty()) n.back();
    }
}

template class Tape<float>;
template class Tape<double>;

namespace ops {
namespace {

// y[i,:] += x[i,k] * w[k,:]
template <typename T>
void gemm_acc(Matrix<T>& y, const Matrix<T>& x, const Matrix<T>& w) {
    const std::size_t rows = x.rows(), inner = x.cols(), out = w.cols();
    for (std::size_t i = 0; i < rows; ++i) {
        T* yr = y.data() + i * out;
        const T* xr = x.data() + i * inner;
        for (std::size_t k = 0; k < inner; ++k) {
            const T a = xr[k];
            const T* wr = w.data() + k * out;
            for (std::size_t j = 0; j < out; ++j) yr[j] += a * wr[j];
        }
    }
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& m) {
    Matrix<T> t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

// dw[k,:] += x[i,k] * dy[i,:]
template <typename T>
void gemm_tn_acc(Matrix<T>& dw, const Matrix<T>& x, const Matrix<T>& dy) {
    const std::size_t rows = x.rows(), inner = x.cols(), out = dy.cols();
    for (std::size_t i = 0; i < rows; ++i) {
        const T* xr = x.data() + i * inner;
        const T* gr = dy.data() + i * out;
        for (std::size_t k = 0; k < inner; ++k) {
            const T a = xr[k];
            if (a == T{0}) continue;
            T* wr = dw.data() + k * out;
            for (std::size_t j = 0; j < out; ++j) wr[j] += a * gr[j];
        }
    }
}

template <typename T>
Var linear_impl(Tape<T>& tape, Var x, Var w, const Var* b) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(w);
    if (xv.cols() != wv.rows()) throw ShapeMismatch("linear: input width != weight rows");
    Matrix<T> y(xv.rows(), wv.cols());
    if (b) {
        const auto& bv = tape.value(*b);
        if (bv.rows() != 1 || bv.cols() != wv.cols()) throw ShapeMismatch("linear: bias shape");
        for (std::size_t i = 0; i < y.rows(); ++i)
            for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) = bv(0, j);
    }
    gemm_acc(y, xv, wv);
    const bool rg = b ? tape.any_requires_grad({x, w, *b}) : tape.any_requires_grad({x, w});
    const Var bb = b ? *b : Var{};
    const bool has_b = b != nullptr;
    Var out{tape.size()};
    return tape.push(std::move(y), rg, [&tape, x, w, bb, has_b, out] {
        const auto& dy = tape.grad(out);
        if (tape.requires_grad(x)) gemm_acc(tape.grad(x), dy, transpose(tape.value(w)));
        if (tape.requires_grad(w)) gemm_tn_acc(tape.grad(w), tape.value(x), dy);
        if (has_b && tape.requires_grad(bb)) {
            auto& db = tape.grad(bb);
            for (std::size_t i = 0; i < dy.rows(); ++i)
                for (std::size_t j = 0; j < dy.cols(); ++j) db(0, j) += dy(i, j);
        }
    });
}

} // namespace

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
    return linear_impl(tape, x, w, &b);
}

template <typename T>
Var linear_no_bias(Tape<T>& tape, Var x, Var w) {
    return linear_impl<T>(tape, x, w, nullptr);
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    if (!av.same_shape(bv)) throw ShapeMismatch("add: operand shapes differ");
    Matrix<T> y = av;
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += bv.data()[i];
    Var out{tape.size()};
    return tape.push(std::move(y), tape.any_requires_grad({a, b}), [&tape, a, b, out] {
        const auto& dy = tape.grad(out);
        for (Var v : {a, b}) {
            if (!tape.requires_grad(v)) continue;
            auto& g = tape.grad(v);
            for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += dy.data()[i];
        }
    });
}

template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const std::int32_t> ids) {
    const auto& tv = tape.value(table);
    Matrix<T> y(ids.size(), tv.cols());
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows())
            throw IndexOutOfRange("embedding: token id " + std::to_string(ids[r]));
        auto src = tv.row(static_cast<std::size_t>(ids[r]));
        std::copy(src.begin(), src.end(), y.row(r).begin());
    }
    std::vector<std::int32_t> saved(ids.begin(), ids.end());
    Var out{tape.size()};
    return tape.push(std::move(y), tape.any_requires_grad({table}), [&tape, table, saved, out] {
        const auto& dy = tape.grad(out);
        auto& g = tape.grad(table);
        for (std::size_t r = 0; r < saved.size(); ++r) {
            auto dst = g.row(static_cast<std::size_t>(saved[r]));
            auto src = dy.row(r);
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
    });
}

template <typename T>
Var add_rows(Tape<T>& tape, Var x, Var table, std::span<const std::size_t> table_rows) {
    const auto& xv = tape.value(x);
    const auto& tv = tape.value(table);
    if (table_rows.size() != xv.rows() || tv.cols() != xv.cols())
        throw ShapeMismatch("add_rows: shape");
    Matrix<T> y = xv;
    for (std::size_t r = 0; r < y.rows(); ++r) {
        if (table_rows[r] >= tv.rows()) throw IndexOutOfRange("add_rows: table row");
        auto src = tv.row(table_rows[r]);
        auto dst = y.row(r);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    std::vector<std::size_t> saved(table_rows.begin(), table_rows.end());
    Var out{tape.size()};
    return tape.push(std::move(y), tape.any_requires_grad({x, table}), [&tape, x, table, saved, out] {
        const auto& dy = tape.grad(out);
        if (tape.requires_grad(x)) {
            auto& g = tape.grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += dy.data()[i];
        }
        if (tape.requires_grad(table)) {
            auto& g = tape.grad(table);
            for (std::size_t r = 0; r < saved.size(); ++r) {
                auto dst = g.row(saved[r]);
                auto src = dy.row(r);
                for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
            }
        }
    });
}

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps) {
    const auto& xv = tape.value(x);
    const auto& gv = tape.value(gamma);
    const auto& bv = tape.value(beta);
    const std::size_t rows = xv.rows(), cols = xv.cols();
    if (gv.cols() != cols || bv.cols() != cols) throw ShapeMismatch("layer_norm: affine shape");
    Matrix<T> y(rows, cols);
    Matrix<T> xhat(rows, cols);
    std::vector<T> rstd(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        T mean{0};
        for (std::size_t j = 0; j < cols; ++j) mean += xv(i, j);
        mean /= static_cast<T>(cols);
        T var{0};
        for (std::size_t j = 0; j < cols; ++j) {
            const T d = xv(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<T>(cols);
        rstd[i] = T{1} / std::sqrt(var + eps);
        for (std::size_t j = 0; j < cols; ++j) {
            xhat(i, j) = (xv(i, j) - mean) * rstd[i];
            y(i, j) = xhat(i, j) * gv(0, j) + bv(0, j);
        }
    }
    const bool rg = tape.any_requires_grad({x, gamma, beta});
    Var out{tape.size()};
    return tape.push(std::move(y), rg,
                     [&tape, x, gamma, beta, out, xhat = std::move(xhat), rstd = std::move(rstd)] {
        const auto& dy = tape.grad(out);
        const auto& gv = tape.value(gamma);
        const std::size_t rows = dy.rows(), cols = dy.cols();
        if (tape.requires_grad(gamma) || tape.requires_grad(beta)) {
            Matrix<T>* dg = tape.requires_grad(gamma) ? &tape.grad(gamma) : nullptr;
            Matrix<T>* db = tape.requires_grad(beta) ? &tape.grad(beta) : nullptr;
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) {
                    if (dg) (*dg)(0, j) += dy(i, j) * xhat(i, j);
                    if (db) (*db)(0, j) += dy(i, j);
                }
        }
        if (tape.requires_grad(x)) {
            auto& dx = tape.grad(x);
            std::vector<T> dxhat(cols);
            for (std::size_t i = 0; i < rows; ++i) {
                T m1{0}, m2{0};
                for (std::size_t j = 0; j < cols; ++j) {
                    dxhat[j] = dy(i, j) * gv(0, j);
                    m1 += dxhat[j];
                    m2 += dxhat[j] * xhat(i, j);
                }
                m1 /= static_cast<T>(cols);
                m2 /= static_cast<T>(cols);
                for (std::size_t j = 0; j < cols; ++j)
                    dx(i, j) += rstd[i] * (dxhat[j] - m1 - xhat(i, j) * m2);
            }
        }
    });
}

template <typename T>
Var gelu(Tape<T>& tape, Var x) {
    constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T kA = T(0.044715);
    const auto& xv = tape.value(x);
    Matrix<T> y(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const T v = xv.data()[i];
        y.data()[i] = T(0.5) * v * (T{1} + std::tanh(kC * (v + kA * v * v * v)));
    }
    Var out{tape.size()};
    return tape.push(std::move(y), tape.any_requires_grad({x}), [&tape, x, out] {
        const auto& dy = tape.grad(out);
        const auto& xv = tape.value(x);
        auto& dx = tape.grad(x);
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const T v = xv.data()[i];
            const T t = std::tanh(kC * (v + kA * v * v * v));
            const T d = T(0.5) * (T{1} + t) +
                        T(0.5) * v * (T{1} - t * t) * kC * (T{1} + T{3} * kA * v * v);
            dx.data()[i] += dy.data()[i] * d;
        }
    });
}

template <typename T>
Var attention(Tape<T>& tape, Var qkv, const Segments& segments, std::size_t heads) {
    const auto& in = tape.value(qkv);
    if (in.cols() % 3 != 0) throw ShapeMismatch("attention: qkv width not divisible by 3");
    const std::size_t width = in.cols() / 3;
    if (heads == 0 || width % heads != 0) throw ShapeMismatch("attention: heads must divide width");
    if (segments.total() != in.rows()) throw ShapeMismatch("attention: segments do not cover rows");
    const std::size_t dh = width / heads;
    const T scale = T{1} / std::sqrt(static_cast<T>(dh));

    Matrix<T> y(in.rows(), width);
    // Softmax probabilities per (segment, head), concatenated.
    std::vector<T> probs;
    std::size_t total = 0;
    for (std::size_t s = 0; s < segments.count(); ++s) total += segments.length(s) * segments.length(s);
    probs.resize(total * heads);

    std::size_t pofs = 0;
    std::vector<T> row;
    for (std::size_t s = 0; s < segments.count(); ++s) {
        const std::size_t a = segments.begin(s), len = segments.length(s);
        for (std::size_t h = 0; h < heads; ++h) {
            T* p = probs.data() + pofs;
            const std::size_t qo = h * dh, ko = width + h * dh, vo = 2 * width + h * dh;
            for (std::size_t i = 0; i < len; ++i) {
                const T* q = in.data() + (a + i) * in.cols() + qo;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < len; ++j) {
                    const T* k = in.data() + (a + j) * in.cols() + ko;
                    T sdot{0};
                    for (std::size_t c = 0; c < dh; ++c) sdot += q[c] * k[c];
                    p[i * len + j] = sdot * scale;
                    mx = std::max(mx, p[i * len + j]);
                }
                T sum{0};
                for (std::size_t j = 0; j < len; ++j) {
                    p[i * len + j] = std::exp(p[i * len + j] - mx);
                    sum += p[i * len + j];
                }
                for (std::size_t j = 0; j < len; ++j) p[i * len + j] /= sum;
                T* o = y.data() + (a + i) * width + h * dh;
                for (std::size_t j = 0; j < len; ++j) {
                    const T pij = p[i * len + j];
                    const T* v = in.data() + (a + j) * in.cols() + vo;
                    for (std::size_t c = 0; c < dh; ++c) o[c] += pij * v[c];
                }
            }
            pofs += len * len;
        }
    }

    Var out{tape.size()};
    return tape.push(std::move(y), tape.any_requires_grad({qkv}),
                     [&tape, qkv, out, segments, heads, dh, width, scale, probs = std::move(probs)] {
        const auto& dy = tape.grad(out);
        const auto& in = tape.value(qkv);
        auto& din = tape.grad(qkv);
        const std::size_t stride = in.cols();
        std::vector<T> dp;
        std::size_t pofs = 0;
        for (std::size_t s = 0; s < segments.count(); ++s) {
            const std::size_t a = segments.begin(s), len = segments.length(s);
            dp.assign(len * len, T{0});
            for (std::size_t h = 0; h < heads; ++h) {
                const T* p = probs.data() + pofs;
                const std::size_t qo = h * dh, ko = width + h * dh, vo = 2 * width + h * dh;
                // dP = dO V^T ; dV = P^T dO
                for (std::size_t i = 0; i < len; ++i) {
                    const T* go = dy.data() + (a + i) * width + h * dh;
                    for (std::size_t j = 0; j < len; ++j) {
                        const T* v = in.data() + (a + j) * stride + vo;
                        T acc{0};
                        for (std::size_t c = 0; c < dh; ++c) acc += go[c] * v[c];
                        dp[i * len + j] = acc;
                        T* dv = din.data() + (a + j) * stride + vo;
                        const T pij = p[i * len + j];
                        for (std::size_t c = 0; c < dh; ++c) dv[c] += pij * go[c];
                    }
                }
                // dS = P * (dP - rowsum(dP * P)), then dQ = dS K * scale, dK = dS^T Q * scale
                for (std::size_t i = 0; i < len; ++i) {
                    T rs{0};
                    for (std::size_t j = 0; j < len; ++j) rs += dp[i * len + j] * p[i * len + j];
                    const T* q = in.data() + (a + i) * stride + qo;
                    T* dq = din.data() + (a + i) * stride + qo;
                    for (std::size_t j = 0; j < len; ++j) {
                        const T ds = p[i * len + j] * (dp[i * len + j] - rs) * scale;
                        if (ds == T{0}) continue;
                        const T* k = in.data() + (a + j) * stride + ko;
                        T* dk = din.data() + (a + j) * stride + ko;
                        for (std::size_t c = 0; c < dh; ++c) {
                            dq[c] += ds * k[c];
                            dk[c] += ds * q[c];
                        }
                    }
                }
                pofs += len * len;
            }
        }
    });
}

template <typename T>
Var mean_pool(Tape<T>& tape, Var x, const Segments& segments) {
    const auto& xv = tape.value(x);
    if (segments.total() != xv.rows()) throw ShapeMismatch("mean_pool: segments do not cover rows");
    Matrix<T> y(segments.count(), xv.cols());
    for (std::size_t s = 0; s < segments.count(); ++s) {
        const std::size_t len = segments.length(s);
        if (len == 0) throw ShapeMismatch("mean_pool: empty segment");
        auto dst = y.row(s);
        for (std::size_t r = segments.begin(s); r < segments.end(s); ++r) {
            auto src = xv.row(r);
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
        const T inv = T{1} / static_cast<T>(len);
        for (auto& v : dst) v *= inv;
    }
    Var out{tape.size()};
    return tape.push(std::move(y), tape.any_requires_grad({x}), [&tape, x, out, segments] {
        const auto& dy = tape.grad(out);
        auto& dx = tape.grad(x);
        for (std::size_t s = 0; s < segments.count(); ++s) {
            const T inv = T{1} / static_cast<T>(segments.length(s));
            auto src = dy.row(s);
            for (std::size_t r = segments.begin(s); r < segments.end(s); ++r) {
                auto dst = dx.row(r);
                for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j] * inv;
            }
        }
    });
}

template <typename T>
Var l2_normalize(Tape<T>& tape, Var x) {
    const auto& xv = tape.value(x);
    Matrix<T> y(xv.rows(), xv.cols());
    std::vector<T> norms(xv.rows());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        auto r = xv.row(i);
        T ss{0};
        for (T v : r) ss += v * v;
        norms[i] = std::max(std::sqrt(ss), T(1e-12));
        auto o = y.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) o[j] = r[j] / norms[i];
    }
    Var out{tape.size()};
    return tape.push(std::move(y), tape.any_requires_grad({x}), [&tape, x, out, norms = std::move(norms)] {
        const auto& dy = tape.grad(out);
        const auto& yv = tape.value(out);
        auto& dx = tape.grad(x);
        for (std::size_t i = 0; i < dy.rows(); ++i) {
            const T proj = dot<T>(yv.row(i), dy.row(i));
            for (std::size_t j = 0; j < dy.cols(); ++j)
                dx(i, j) += (dy(i, j) - yv(i, j) * proj) / norms[i];
        }
    });
}

template <typename T>
Var replace_rows(Tape<T>& tape, Var x, Var vec, std::span<const std::size_t> rows) {
    const auto& xv = tape.value(x);
    const auto& vv = tape.value(vec);
    if (vv.rows() != 1 || vv.cols() != xv.cols()) throw ShapeMismatch("replace_rows: vector shape");
    Matrix<T> y = xv;
    std::vector<char> replaced(xv.rows(), 0);
    for (auto r : rows) {
        if (r >= xv.rows()) throw IndexOutOfRange("replace_rows: row " + std::to_string(r));
        replaced[r] = 1;
        std::copy(vv.row(0).begin(), vv.row(0).end(), y.row(r).begin());
    }
    Var out{tape.size()};
    return tape.push(std::move(y), tape.any_requires_grad({x, vec}),
                     [&tape, x, vec, out, replaced = std::move(replaced)] {
        const auto& dy = tape.grad(out);
        if (tape.requires_grad(x)) {
            auto& dx = tape.grad(x);
            for (std::size_t r = 0; r < dy.rows(); ++r) {
                if (replaced[r]) continue;
                for (std::size_t j = 0; j < dy.cols(); ++j) dx(r, j) += dy(r, j);
            }
        }
        if (tape.requires_grad(vec)) {
            auto& dv = tape.grad(vec);
            for (std::size_t r = 0; r < dy.rows(); ++r) {
                if (!replaced[r]) continue;
                for (std::size_t j = 0; j < dy.cols(); ++j) dv(0, j) += dy(r, j);
            }
        }
    });
}

template <typename T>
Var gather_rows(Tape<T>& tape, Var x, std::span<const std::size_t> rows) {
    const auto& xv = tape.value(x);
    Matrix<T> y(rows.size(), xv.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= xv.rows()) throw IndexOutOfRange("gather_rows: row " + std::to_string(rows[i]));
        std::copy(xv.row(rows[i]).begin(), xv.row(rows[i]).end(), y.row(i).begin());
    }
    std::vector<std::size_t> saved(rows.begin(), rows.end());
    Var out{tape.size()};
    return tape.push(std::move(y), tape.any_requires_grad({x}), [&tape, x, out, saved] {
        const auto& dy = tape.grad(out);
        auto& dx = tape.grad(x);
        for (std::size_t i = 0; i < saved.size(); ++i)
            for (std::size_t j = 0; j < dy.cols(); ++j) dx(saved[i], j) += dy(i, j);
    });
}

template <typename T>
Var dropout(Tape<T>& tape, Var x, double p, Rng& rng) {
    if (p <= 0.0 || !tape.grad_enabled()) return x;
    const auto& xv = tape.value(x);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    Matrix<T> mask(xv.rows(), xv.cols());
    Matrix<T> y(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < y.size(); ++i) {
        mask.data()[i] = rng.uniform() < p ? T{0} : keep_scale;
        y.data()[i] = xv.data()[i] * mask.data()[i];
    }
    Var out{tape.size()};
    return tape.push(std::move(y), tape.any_requires_grad({x}), [&tape, x, out, mask = std::move(mask)] {
        const auto& dy = tape.grad(out);
        auto& dx = tape.grad(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] += dy.data()[i] * mask.data()[i];
    });
}

#define CTXLOG_INSTANTIATE(T)                                                                        \
    template Var linear<T>(Tape<T>&, Var, Var, Var);                                                 \
    template Var linear_no_bias<T>(Tape<T>&, Var, Var);                                              \
    template Var add<T>(Tape<T>&, Var, Var);                                                         \
    template Var embedding<T>(Tape<T>&, Var, std::span<const std::int32_t>);                         \
    template Var add_rows<T>(Tape<T>&, Var, Var, std::span<const std::size_t>);                      \
    template Var layer_norm<T>(Tape<T>&, Var, Var, Var, T);                                          \
    template Var gelu<T>(Tape<T>&, Var);                                                             \
    template Var attention<T>(Tape<T>&, Var, const Segments&, std::size_t);                          \
    template Var mean_pool<T>(Tape<T>&, Var, const Segments&);                                       \
    template Var l2_normalize<T>(Tape<T>&, Var);                                                     \
    template Var replace_rows<T>(Tape<T>&, Var, Var, std::span<const std::size_t>);                  \
    template Var gather_rows<T>(Tape<T>&, Var, std::span<const std::size_t>);                        \
    template Var dropout<T>(Tape<T>&, Var, double, Rng&);

CTXLOG_INSTANTIATE(float)
CTXLOG_INSTANTIATE(double)
#undef CTXLOG_INSTANTIATE

} // namespace ops
} // namespace ctxlog
