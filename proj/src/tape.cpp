#include "aau/tape.hpp"

#include <cmath>
#include <cstring>

namespace aau {

namespace {

Tape& tape_of(Value a, Value b) {
    require(a.valid() && b.valid(), "bad-value", "op on invalid Value");
    require(a.tape == b.tape, "bad-value", "op mixes two tapes");
    return *a.tape;
}

Tape& tape_of(Value a) {
    require(a.valid(), "bad-value", "op on invalid Value");
    return *a.tape;
}

void check_same_shape(const TensorF& a, const TensorF& b, const char* op) {
    require(same_shape(a.shape, b.shape), "shape-mismatch",
            std::string(op) + " " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

constexpr double kSqrt2Inv = 0.70710678118654752440084436210485;
constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

} // namespace

const Shape& Value::shape() const { return tape->shape(*this); }
const TensorF& Value::val() const { return tape->val(*this); }

Value Tape::make_node(TensorF val, BackwardFn bw) {
    Node n;
    n.val = std::move(val);
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Value Tape::input(TensorF v) { return make_node(std::move(v), nullptr); }

Value Tape::leaf(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Value{this, it->second};
    Parameter* pp = &p;
    Value v = make_node(p.value, [pp](Tape& t, std::int32_t self) {
        const TensorF& g = t.grad_ref(self);
        for (std::int64_t i = 0; i < g.numel(); ++i) pp->grad[i] += g[i];
    });
    param_nodes_[&p] = v.id;
    return v;
}

TensorF& Tape::grad_ref(std::int32_t id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_live) {
        n.grad = TensorF::zeros(n.val.shape);
        n.grad_live = true;
    }
    return n.grad;
}

TensorF Tape::grad_of(Value v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad_live) return n.grad;
    return TensorF::zeros(n.val.shape);
}

void Tape::backward(Value root) {
    require(root.valid() && root.tape == this, "bad-value", "backward root not on this tape");
    require(val(root).numel() == 1, "non-scalar-objective",
            "backward root has shape " + shape_str(val(root).shape));
    backward_visits_ = 0;
    grad_ref(root.id)[0] = 1.0;
    for (std::int32_t i = root.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.grad_live) continue;
        ++backward_visits_;
        if (n.backward) n.backward(*this, i);
    }
}

// ---------------------------------------------------------------------------
// MAC instrumentation

std::uint64_t& MacCounter::count() {
    static thread_local std::uint64_t c = 0;
    return c;
}

bool& MacCounter::enabled() {
    static thread_local bool e = false;
    return e;
}

// ---------------------------------------------------------------------------
// Plain kernels

namespace kernels {

bool& softmax_sign_fault() {
    static bool f = false;
    return f;
}

TensorF softmax_lastdim(const TensorF& x) {
    require(x.rank() >= 1 && x.dim(-1) >= 1, "empty-reduction",
            "softmax over empty last dimension of " + shape_str(x.shape));
    const std::int64_t n = x.dim(-1);
    const std::int64_t slices = x.numel() / n;
    const double sign = softmax_sign_fault() ? -1.0 : 1.0;
    TensorF y(x.shape);
    for (std::int64_t s = 0; s < slices; ++s) {
        const double* xi = x.data.data() + s * n;
        double* yi = y.data.data() + s * n;
        double m = sign * xi[0];
        for (std::int64_t j = 1; j < n; ++j) m = std::max(m, sign * xi[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
            yi[j] = std::exp(sign * xi[j] - m);
            sum += yi[j];
        }
        const double inv = 1.0 / sum;
        for (std::int64_t j = 0; j < n; ++j) yi[j] *= inv;
    }
    return y;
}

TensorF logsumexp_lastdim(const TensorF& x) {
    require(x.rank() >= 1 && x.dim(-1) >= 1, "empty-reduction",
            "logsumexp over empty last dimension of " + shape_str(x.shape));
    const std::int64_t n = x.dim(-1);
    const std::int64_t slices = x.numel() / n;
    Shape os = x.shape;
    os.back() = 1;
    TensorF y(os);
    for (std::int64_t s = 0; s < slices; ++s) {
        const double* xi = x.data.data() + s * n;
        double m = xi[0];
        for (std::int64_t j = 1; j < n; ++j) m = std::max(m, xi[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < n; ++j) sum += std::exp(xi[j] - m);
        y[s] = m + std::log(sum);
    }
    return y;
}

TensorF layer_norm(const TensorF& x, const TensorF& gamma, const TensorF& beta, double eps) {
    require(eps > 0.0, "bad-eps", "layer_norm eps must be positive");
    require(x.rank() >= 1, "shape-mismatch", "layer_norm needs rank >= 1");
    const std::int64_t n = x.dim(-1);
    require(gamma.numel() == n && beta.numel() == n, "shape-mismatch",
            "layer_norm gamma/beta length must equal last dim " + std::to_string(n));
    const std::int64_t slices = x.numel() / n;
    TensorF y(x.shape);
    for (std::int64_t s = 0; s < slices; ++s) {
        const double* xi = x.data.data() + s * n;
        double* yi = y.data.data() + s * n;
        double mu = 0.0;
        for (std::int64_t j = 0; j < n; ++j) mu += xi[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::int64_t j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::int64_t j = 0; j < n; ++j) yi[j] = gamma[j] * ((xi[j] - mu) * inv) + beta[j];
    }
    return y;
}

TensorF matmul(const TensorF& a, const TensorF& b) {
    // (n,k)x(k,m); (B,n,k)x(k,m); (B,n,k)x(B,k,m)
    require(a.rank() == 2 || a.rank() == 3, "shape-mismatch", "matmul lhs rank");
    require(b.rank() == 2 || b.rank() == 3, "shape-mismatch", "matmul rhs rank");
    const std::int64_t B = a.rank() == 3 ? a.dim(0) : 1;
    const std::int64_t n = a.dim(-2), k = a.dim(-1);
    require(b.dim(-2) == k, "shape-mismatch",
            "matmul inner dims " + shape_str(a.shape) + " x " + shape_str(b.shape));
    const std::int64_t m = b.dim(-1);
    const bool b_batched = b.rank() == 3;
    if (b_batched) require(a.rank() == 3 && b.dim(0) == B, "shape-mismatch", "matmul batch dims");

    Shape os = a.rank() == 3 ? Shape{B, n, m} : Shape{n, m};
    TensorF y(os);
    if (MacCounter::enabled()) MacCounter::count() += static_cast<std::uint64_t>(B * n * k * m);
    for (std::int64_t bb = 0; bb < B; ++bb) {
        const double* ab = a.data.data() + bb * n * k;
        const double* bbuf = b.data.data() + (b_batched ? bb * k * m : 0);
        double* yb = y.data.data() + bb * n * m;
        for (std::int64_t i = 0; i < n; ++i) {
            const double* ai = ab + i * k;
            double* yi = yb + i * m;
            for (std::int64_t kk = 0; kk < k; ++kk) {
                const double av = ai[kk];
                if (av == 0.0) continue;
                const double* br = bbuf + kk * m;
                for (std::int64_t j = 0; j < m; ++j) yi[j] += av * br[j];
            }
        }
    }
    return y;
}

TensorF conv2d(const TensorF& x, const TensorF& kernel, const TensorF& bias, int stride, int padding) {
    require(x.rank() == 3, "shape-mismatch", "conv2d input must be (Cin,H,W)");
    require(kernel.rank() == 4, "shape-mismatch", "conv2d kernel must be (Cout,Cin,kh,kw)");
    require(kernel.dim(1) == x.dim(0), "shape-mismatch",
            "conv2d channels: input " + std::to_string(x.dim(0)) + " kernel expects " +
                std::to_string(kernel.dim(1)));
    require(stride >= 1 && padding >= 0, "bad-conv", "conv2d stride/padding");
    const std::int64_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::int64_t Cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (bias.numel() > 0)
        require(bias.numel() == Cout, "shape-mismatch", "conv2d bias length");
    const std::int64_t Ho = (H + 2 * padding - kh) / stride + 1;
    const std::int64_t Wo = (W + 2 * padding - kw) / stride + 1;
    require(Ho >= 1 && Wo >= 1, "shape-mismatch", "conv2d output would be empty");

    TensorF y(Shape{Cout, Ho, Wo});
    if (MacCounter::enabled())
        MacCounter::count() += static_cast<std::uint64_t>(Cout * Ho * Wo * Cin * kh * kw);
    for (std::int64_t co = 0; co < Cout; ++co) {
        const double b = bias.numel() > 0 ? bias[co] : 0.0;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
            for (std::int64_t ox = 0; ox < Wo; ++ox) {
                double acc = b;
                for (std::int64_t ci = 0; ci < Cin; ++ci) {
                    for (std::int64_t ky = 0; ky < kh; ++ky) {
                        const std::int64_t iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (std::int64_t kx = 0; kx < kw; ++kx) {
                            const std::int64_t ix = ox * stride - padding + kx;
                            if (ix < 0 || ix >= W) continue;
                            acc += kernel.at(co, ci, ky, kx) * x.at(ci, iy, ix);
                        }
                    }
                }
                y.at(co, oy, ox) = acc;
            }
        }
    }
    return y;
}

} // namespace kernels

// ---------------------------------------------------------------------------
// Elementwise and broadcast ops

Value add(Value a, Value b) {
    Tape& T = tape_of(a, b);
    const TensorF &av = T.val(a), &bv = T.val(b);
    check_same_shape(av, bv, "add");
    TensorF y(av.shape);
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = av[i] + bv[i];
    auto ia = a.id, ib = b.id;
    return T.make_node(std::move(y), [ia, ib](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        TensorF& da = t.grad_ref(ia);
        TensorF& db = t.grad_ref(ib);
        for (std::int64_t i = 0; i < dy.numel(); ++i) {
            da[i] += dy[i];
            db[i] += dy[i];
        }
    });
}

Value sub(Value a, Value b) {
    Tape& T = tape_of(a, b);
    const TensorF &av = T.val(a), &bv = T.val(b);
    check_same_shape(av, bv, "sub");
    TensorF y(av.shape);
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = av[i] - bv[i];
    auto ia = a.id, ib = b.id;
    return T.make_node(std::move(y), [ia, ib](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        TensorF& da = t.grad_ref(ia);
        TensorF& db = t.grad_ref(ib);
        for (std::int64_t i = 0; i < dy.numel(); ++i) {
            da[i] += dy[i];
            db[i] -= dy[i];
        }
    });
}

Value mul(Value a, Value b) {
    Tape& T = tape_of(a, b);
    const TensorF &av = T.val(a), &bv = T.val(b);
    check_same_shape(av, bv, "mul");
    TensorF y(av.shape);
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = av[i] * bv[i];
    auto ia = a.id, ib = b.id;
    return T.make_node(std::move(y), [ia, ib](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        const TensorF& av = t.node_val(ia);
        const TensorF& bv = t.node_val(ib);
        TensorF& da = t.grad_ref(ia);
        TensorF& db = t.grad_ref(ib);
        for (std::int64_t i = 0; i < dy.numel(); ++i) {
            da[i] += dy[i] * bv[i];
            db[i] += dy[i] * av[i];
        }
    });
}

Value div(Value a, Value b) {
    Tape& T = tape_of(a, b);
    const TensorF &av = T.val(a), &bv = T.val(b);
    check_same_shape(av, bv, "div");
    TensorF y(av.shape);
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = av[i] / bv[i];
    auto ia = a.id, ib = b.id;
    return T.make_node(std::move(y), [ia, ib](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        const TensorF& av = t.node_val(ia);
        const TensorF& bv = t.node_val(ib);
        TensorF& da = t.grad_ref(ia);
        TensorF& db = t.grad_ref(ib);
        for (std::int64_t i = 0; i < dy.numel(); ++i) {
            da[i] += dy[i] / bv[i];
            db[i] -= dy[i] * av[i] / (bv[i] * bv[i]);
        }
    });
}

Value add_bias(Value a, Value b) {
    Tape& T = tape_of(a, b);
    const TensorF &av = T.val(a), &bv = T.val(b);
    const std::int64_t n = av.dim(-1);
    require(bv.numel() == n, "shape-mismatch", "add_bias length");
    TensorF y(av.shape);
    const std::int64_t slices = av.numel() / n;
    for (std::int64_t s = 0; s < slices; ++s)
        for (std::int64_t j = 0; j < n; ++j) y[s * n + j] = av[s * n + j] + bv[j];
    auto ia = a.id, ib = b.id;
    return T.make_node(std::move(y), [ia, ib, n, slices](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        TensorF& da = t.grad_ref(ia);
        TensorF& db = t.grad_ref(ib);
        for (std::int64_t s = 0; s < slices; ++s)
            for (std::int64_t j = 0; j < n; ++j) {
                da[s * n + j] += dy[s * n + j];
                db[j] += dy[s * n + j];
            }
    });
}

Value add_bcast_col(Value a, Value b) {
    Tape& T = tape_of(a, b);
    const TensorF &av = T.val(a), &bv = T.val(b);
    require(av.rank() >= 2 && bv.rank() == av.rank(), "shape-mismatch", "add_bcast_col rank");
    Shape expect = av.shape;
    expect.back() = 1;
    require(same_shape(bv.shape, expect), "shape-mismatch", "add_bcast_col shapes");
    const std::int64_t m = av.dim(-1);
    const std::int64_t rows = av.numel() / m;
    TensorF y(av.shape);
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < m; ++j) y[r * m + j] = av[r * m + j] + bv[r];
    auto ia = a.id, ib = b.id;
    return T.make_node(std::move(y), [ia, ib, m, rows](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        TensorF& da = t.grad_ref(ia);
        TensorF& db = t.grad_ref(ib);
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < m; ++j) {
                da[r * m + j] += dy[r * m + j];
                db[r] += dy[r * m + j];
            }
    });
}

Value add_bcast_row(Value a, Value b) {
    Tape& T = tape_of(a, b);
    const TensorF &av = T.val(a), &bv = T.val(b);
    require(av.rank() >= 2 && bv.rank() == av.rank(), "shape-mismatch", "add_bcast_row rank");
    Shape expect = av.shape;
    expect[expect.size() - 2] = 1;
    require(same_shape(bv.shape, expect), "shape-mismatch", "add_bcast_row shapes");
    const std::int64_t m = av.dim(-1), n = av.dim(-2);
    const std::int64_t outer = av.numel() / (n * m);
    TensorF y(av.shape);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < m; ++j)
                y[(o * n + i) * m + j] = av[(o * n + i) * m + j] + bv[o * m + j];
    auto ia = a.id, ib = b.id;
    return T.make_node(std::move(y), [ia, ib, n, m, outer](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        TensorF& da = t.grad_ref(ia);
        TensorF& db = t.grad_ref(ib);
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < m; ++j) {
                    da[(o * n + i) * m + j] += dy[(o * n + i) * m + j];
                    db[o * m + j] += dy[(o * n + i) * m + j];
                }
    });
}

Value scale(Value a, double c) {
    Tape& T = tape_of(a);
    const TensorF& av = T.val(a);
    TensorF y(av.shape);
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = av[i] * c;
    auto ia = a.id;
    return T.make_node(std::move(y), [ia, c](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        TensorF& da = t.grad_ref(ia);
        for (std::int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * c;
    });
}

Value add_const(Value a, double c) {
    Tape& T = tape_of(a);
    const TensorF& av = T.val(a);
    TensorF y(av.shape);
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = av[i] + c;
    auto ia = a.id;
    return T.make_node(std::move(y), [ia](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        TensorF& da = t.grad_ref(ia);
        for (std::int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
    });
}

Value neg(Value a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Linear algebra / reshaping

Value matmul(Value a, Value b) {
    Tape& T = tape_of(a, b);
    TensorF y = kernels::matmul(T.val(a), T.val(b));
    auto ia = a.id, ib = b.id;
    return T.make_node(std::move(y), [ia, ib](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        const TensorF& av = t.node_val(ia);
        const TensorF& bv = t.node_val(ib);
        TensorF& da = t.grad_ref(ia);
        TensorF& db = t.grad_ref(ib);
        const std::int64_t B = av.rank() == 3 ? av.dim(0) : 1;
        const std::int64_t n = av.dim(-2), k = av.dim(-1), m = bv.dim(-1);
        const bool b_batched = bv.rank() == 3;
        for (std::int64_t bb = 0; bb < B; ++bb) {
            const double* ab = av.data.data() + bb * n * k;
            const double* bbuf = bv.data.data() + (b_batched ? bb * k * m : 0);
            const double* dyb = dy.data.data() + bb * n * m;
            double* dab = da.data.data() + bb * n * k;
            double* dbb = db.data.data() + (b_batched ? bb * k * m : 0);
            // dA = dY * B^T
            for (std::int64_t i = 0; i < n; ++i) {
                const double* dyi = dyb + i * m;
                double* dai = dab + i * k;
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    const double* br = bbuf + kk * m;
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < m; ++j) acc += dyi[j] * br[j];
                    dai[kk] += acc;
                }
            }
            // dB += A^T * dY
            for (std::int64_t i = 0; i < n; ++i) {
                const double* ai = ab + i * k;
                const double* dyi = dyb + i * m;
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    const double av_ik = ai[kk];
                    if (av_ik == 0.0) continue;
                    double* dbr = dbb + kk * m;
                    for (std::int64_t j = 0; j < m; ++j) dbr[j] += av_ik * dyi[j];
                }
            }
        }
    });
}

Value reshape(Value a, Shape s) {
    Tape& T = tape_of(a);
    const TensorF& av = T.val(a);
    require(shape_numel(s) == av.numel(), "shape-mismatch",
            "reshape " + shape_str(av.shape) + " -> " + shape_str(s));
    TensorF y;
    y.shape = std::move(s);
    y.data = av.data;
    auto ia = a.id;
    return T.make_node(std::move(y), [ia](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        TensorF& da = t.grad_ref(ia);
        for (std::int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
    });
}

Value transpose_last2(Value a) {
    Tape& T = tape_of(a);
    const TensorF& av = T.val(a);
    require(av.rank() >= 2, "shape-mismatch", "transpose_last2 needs rank >= 2");
    Shape os = av.shape;
    std::swap(os[os.size() - 1], os[os.size() - 2]);
    const std::int64_t n = av.dim(-2), m = av.dim(-1);
    const std::int64_t outer = av.numel() / (n * m);
    TensorF y(os);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < m; ++j)
                y[(o * m + j) * n + i] = av[(o * n + i) * m + j];
    auto ia = a.id;
    return T.make_node(std::move(y), [ia, n, m, outer](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        TensorF& da = t.grad_ref(ia);
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < m; ++j)
                    da[(o * n + i) * m + j] += dy[(o * m + j) * n + i];
    });
}

Value gather(Value a, IndexMap idx, Shape out_shape) {
    Tape& T = tape_of(a);
    const TensorF& av = T.val(a);
    require(static_cast<std::int64_t>(idx->size()) == shape_numel(out_shape), "shape-mismatch",
            "gather index count vs out shape");
    TensorF y(out_shape);
    const std::int64_t an = av.numel();
    for (std::size_t i = 0; i < idx->size(); ++i) {
        const std::int64_t k = (*idx)[i];
        if (k < 0) continue;
        require(k < an, "offset-range", "gather index out of bounds");
        y[static_cast<std::int64_t>(i)] = av[k];
    }
    auto ia = a.id;
    return T.make_node(std::move(y), [ia, idx](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        TensorF& da = t.grad_ref(ia);
        for (std::size_t i = 0; i < idx->size(); ++i) {
            const std::int64_t k = (*idx)[i];
            if (k >= 0) da[k] += dy[static_cast<std::int64_t>(i)];
        }
    });
}

Value concat0(Value a, Value b) {
    Tape& T = tape_of(a, b);
    const TensorF &av = T.val(a), &bv = T.val(b);
    require(av.rank() == bv.rank() && av.rank() >= 1, "shape-mismatch", "concat0 rank");
    for (int i = 1; i < av.rank(); ++i)
        require(av.dim(i) == bv.dim(i), "shape-mismatch", "concat0 trailing dims");
    Shape os = av.shape;
    os[0] = av.dim(0) + bv.dim(0);
    TensorF y(os);
    std::copy(av.data.begin(), av.data.end(), y.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), y.data.begin() + av.data.size());
    auto ia = a.id, ib = b.id;
    const std::int64_t na = av.numel();
    return T.make_node(std::move(y), [ia, ib, na](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        TensorF& da = t.grad_ref(ia);
        TensorF& db = t.grad_ref(ib);
        for (std::int64_t i = 0; i < na; ++i) da[i] += dy[i];
        for (std::int64_t i = na; i < dy.numel(); ++i) db[i - na] += dy[i];
    });
}

// ---------------------------------------------------------------------------
// Reductions and nonlinearities

Value softmax_lastdim(Value a) {
    Tape& T = tape_of(a);
    TensorF y = kernels::softmax_lastdim(T.val(a));
    auto ia = a.id;
    return T.make_node(std::move(y), [ia](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        const TensorF& y = t.node_val(self);
        TensorF& da = t.grad_ref(ia);
        const std::int64_t n = y.dim(-1);
        const std::int64_t slices = y.numel() / n;
        for (std::int64_t s = 0; s < slices; ++s) {
            const double* yi = y.data.data() + s * n;
            const double* di = dy.data.data() + s * n;
            double dot = 0.0;
            for (std::int64_t j = 0; j < n; ++j) dot += yi[j] * di[j];
            for (std::int64_t j = 0; j < n; ++j) da[s * n + j] += yi[j] * (di[j] - dot);
        }
    });
}

Value logsumexp_lastdim(Value a) {
    Tape& T = tape_of(a);
    TensorF y = kernels::logsumexp_lastdim(T.val(a));
    auto ia = a.id;
    return T.make_node(std::move(y), [ia](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        const TensorF& y = t.node_val(self);
        const TensorF& x = t.node_val(ia);
        TensorF& da = t.grad_ref(ia);
        const std::int64_t n = x.dim(-1);
        const std::int64_t slices = x.numel() / n;
        for (std::int64_t s = 0; s < slices; ++s)
            for (std::int64_t j = 0; j < n; ++j)
                da[s * n + j] += dy[s] * std::exp(x[s * n + j] - y[s]);
    });
}

Value sum_lastdim(Value a) {
    Tape& T = tape_of(a);
    const TensorF& av = T.val(a);
    require(av.rank() >= 1, "empty-reduction", "sum_lastdim needs rank >= 1");
    const std::int64_t n = av.dim(-1);
    const std::int64_t slices = av.numel() / n;
    Shape os(av.shape.begin(), av.shape.end() - 1);
    TensorF y(os);
    for (std::int64_t s = 0; s < slices; ++s) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < n; ++j) acc += av[s * n + j];
        y[s] = acc;
    }
    auto ia = a.id;
    return T.make_node(std::move(y), [ia, n, slices](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        TensorF& da = t.grad_ref(ia);
        for (std::int64_t s = 0; s < slices; ++s)
            for (std::int64_t j = 0; j < n; ++j) da[s * n + j] += dy[s];
    });
}

Value mean_axis1(Value a) {
    Tape& T = tape_of(a);
    const TensorF& av = T.val(a);
    require(av.rank() == 3, "shape-mismatch", "mean_axis1 needs rank 3");
    const std::int64_t A = av.dim(0), B = av.dim(1), C = av.dim(2);
    TensorF y(Shape{A, C});
    for (std::int64_t i = 0; i < A; ++i)
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t c = 0; c < C; ++c) y[i * C + c] += av[(i * B + b) * C + c];
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] /= static_cast<double>(B);
    auto ia = a.id;
    return T.make_node(std::move(y), [ia, A, B, C](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        TensorF& da = t.grad_ref(ia);
        const double inv = 1.0 / static_cast<double>(B);
        for (std::int64_t i = 0; i < A; ++i)
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t c = 0; c < C; ++c) da[(i * B + b) * C + c] += dy[i * C + c] * inv;
    });
}

Value sum_all(Value a) {
    Tape& T = tape_of(a);
    const TensorF& av = T.val(a);
    double acc = 0.0;
    for (std::int64_t i = 0; i < av.numel(); ++i) acc += av[i];
    auto ia = a.id;
    return T.make_node(TensorF::scalar(acc), [ia](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        TensorF& da = t.grad_ref(ia);
        for (std::int64_t i = 0; i < da.numel(); ++i) da[i] += dy[0];
    });
}

Value mean_all(Value a) {
    Tape& T = tape_of(a);
    const std::int64_t n = T.val(a).numel();
    require(n > 0, "empty-reduction", "mean_all of empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(n));
}

namespace {

template <typename F, typename G>
Value unary_op(Value a, F fwd, G dfdx) {
    Tape& T = tape_of(a);
    const TensorF& av = T.val(a);
    TensorF y(av.shape);
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = fwd(av[i]);
    auto ia = a.id;
    return T.make_node(std::move(y), [ia, dfdx](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        const TensorF& x = t.node_val(ia);
        const TensorF& y = t.node_val(self);
        TensorF& da = t.grad_ref(ia);
        for (std::int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * dfdx(x[i], y[i]);
    });
}

} // namespace

Value exp_(Value a) {
    return unary_op(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Value log_(Value a) {
    return unary_op(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Value sigmoid(Value a) {
    return unary_op(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Value relu(Value a) {
    return unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Value gelu(Value a) {
    return unary_op(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kSqrt2Inv)); },
        [](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x * kSqrt2Inv));
            return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        });
}

Value clamp_min(Value a, double m) {
    return unary_op(
        a, [m](double x) { return x < m ? m : x; },
        [m](double x, double) { return x >= m ? 1.0 : 0.0; });
}

Value huber(Value a) {
    return unary_op(
        a,
        [](double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; },
        [](double x, double) { return std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0); });
}

// ---------------------------------------------------------------------------
// Layer norm

Value layer_norm(Value x, Value gamma, Value beta, double eps) {
    Tape& T = tape_of(x, gamma);
    require(beta.tape == &T, "bad-value", "layer_norm beta on wrong tape");
    TensorF y = kernels::layer_norm(T.val(x), T.val(gamma), T.val(beta), eps);
    auto ix = x.id, ig = gamma.id, ib = beta.id;
    return T.make_node(std::move(y), [ix, ig, ib, eps](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        const TensorF& xv = t.node_val(ix);
        const TensorF& gv = t.node_val(ig);
        TensorF& dx = t.grad_ref(ix);
        TensorF& dg = t.grad_ref(ig);
        TensorF& db = t.grad_ref(ib);
        const std::int64_t n = xv.dim(-1);
        const std::int64_t slices = xv.numel() / n;
        std::vector<double> xhat(static_cast<std::size_t>(n));
        for (std::int64_t s = 0; s < slices; ++s) {
            const double* xi = xv.data.data() + s * n;
            const double* di = dy.data.data() + s * n;
            double mu = 0.0;
            for (std::int64_t j = 0; j < n; ++j) mu += xi[j];
            mu /= static_cast<double>(n);
            double var = 0.0;
            for (std::int64_t j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
            var /= static_cast<double>(n);
            const double inv = 1.0 / std::sqrt(var + eps);
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::int64_t j = 0; j < n; ++j) {
                xhat[static_cast<std::size_t>(j)] = (xi[j] - mu) * inv;
                const double dxh = di[j] * gv[j];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xhat[static_cast<std::size_t>(j)];
            }
            mean_dxhat /= static_cast<double>(n);
            mean_dxhat_xhat /= static_cast<double>(n);
            for (std::int64_t j = 0; j < n; ++j) {
                const double xh = xhat[static_cast<std::size_t>(j)];
                const double dxh = di[j] * gv[j];
                dx[s * n + j] += inv * (dxh - mean_dxhat - xh * mean_dxhat_xhat);
                dg[j] += di[j] * xh;
                db[j] += di[j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Convolution

Value conv2d(Value x, Value kernel, std::optional<Value> bias, int stride, int padding) {
    Tape& T = tape_of(x, kernel);
    TensorF bv = bias ? T.val(*bias) : TensorF();
    TensorF y = kernels::conv2d(T.val(x), T.val(kernel), bv, stride, padding);
    auto ix = x.id, ik = kernel.id;
    const std::int32_t ibias = bias ? bias->id : -1;
    return T.make_node(std::move(y), [ix, ik, ibias, stride, padding](Tape& t, std::int32_t self) {
        const TensorF& dy = t.grad_ref(self);
        const TensorF& xv = t.node_val(ix);
        const TensorF& kv = t.node_val(ik);
        TensorF& dx = t.grad_ref(ix);
        TensorF& dk = t.grad_ref(ik);
        const std::int64_t Cin = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
        const std::int64_t Cout = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
        const std::int64_t Ho = dy.dim(1), Wo = dy.dim(2);
        for (std::int64_t co = 0; co < Cout; ++co) {
            for (std::int64_t oy = 0; oy < Ho; ++oy) {
                for (std::int64_t ox = 0; ox < Wo; ++ox) {
                    const double g = dy.at(co, oy, ox);
                    if (g == 0.0) continue;
                    for (std::int64_t ci = 0; ci < Cin; ++ci) {
                        for (std::int64_t ky = 0; ky < kh; ++ky) {
                            const std::int64_t iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                const std::int64_t ix2 = ox * stride - padding + kx;
                                if (ix2 < 0 || ix2 >= W) continue;
                                dx.at(ci, iy, ix2) += kv.at(co, ci, ky, kx) * g;
                                dk.at(co, ci, ky, kx) += xv.at(ci, iy, ix2) * g;
                            }
                        }
                    }
                }
            }
        }
        if (ibias >= 0) {
            TensorF& db = t.grad_ref(ibias);
            for (std::int64_t co = 0; co < Cout; ++co) {
                double acc = 0.0;
                for (std::int64_t oy = 0; oy < Ho; ++oy)
                    for (std::int64_t ox = 0; ox < Wo; ++ox) acc += dy.at(co, oy, ox);
                db[co] += acc;
            }
        }
    });
}

} // namespace aau
