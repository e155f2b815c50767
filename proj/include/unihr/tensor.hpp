#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "unihr/fft.hpp"
#include "unihr/rng.hpp"

namespace unihr {

// Reverse-mode tape over dense double tensors (rank 1-3; row-major).
// Ops are free functions: out = op(tape, inputs...). Passing tape == nullptr
// runs forward only, which is what evaluation uses.

namespace detail {

// Training allocates thousands of short-lived buffers per step, most of them
// in a handful of recurring sizes; recycling them sidesteps the allocator and
// the page faults of fresh zero pages.
class BufferPool {
public:
    std::vector<double> take(std::size_t n) {
        auto it = buckets_.find(n);
        if (it != buckets_.end() && !it->second.empty()) {
            std::vector<double> v = std::move(it->second.back());
            it->second.pop_back();
            bytes_ -= n * sizeof(double);
            std::fill(v.begin(), v.end(), 0.0);
            return v;
        }
        return std::vector<double>(n, 0.0);
    }

    void give(std::vector<double>&& v) {
        const std::size_t bytes = v.size() * sizeof(double);
        if (v.empty() || bytes_ + bytes > kMaxBytes) return;
        bytes_ += bytes;
        buckets_[v.size()].push_back(std::move(v));
    }

    static BufferPool& instance() {
        thread_local BufferPool pool;
        return pool;
    }

private:
    static constexpr std::size_t kMaxBytes = 1536ull << 20;
    std::map<std::size_t, std::vector<std::vector<double>>> buckets_;
    std::size_t bytes_ = 0;
};

}  // namespace detail

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> val;
    std::vector<double> grad;  // empty until first accumulation
    bool needs_grad = false;

    ~TensorNode() {
        detail::BufferPool::instance().give(std::move(val));
        detail::BufferPool::instance().give(std::move(grad));
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(std::vector<int> shape, bool needs_grad = false) {
        auto n = std::make_shared<TensorNode>();
        std::size_t total = 1;
        for (int s : shape) total *= static_cast<std::size_t>(s);
        n->shape = std::move(shape);
        n->val = detail::BufferPool::instance().take(total);
        n->needs_grad = needs_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(std::vector<int> shape, std::vector<double> val,
                       bool needs_grad = false) {
        auto t = zeros(std::move(shape), needs_grad);
        if (t.size() != val.size())
            throw std::invalid_argument("Tensor::from: shape/value mismatch");
        t.node_->val = std::move(val);
        return t;
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int rows() const { return node_->shape[0]; }
    int cols() const {
        return node_->shape.size() > 1 ? node_->shape[1] : 1;
    }
    std::size_t size() const { return node_->val.size(); }
    double* data() { return node_->val.data(); }
    const double* data() const { return node_->val.data(); }
    double item() const {
        if (size() != 1) throw std::logic_error("Tensor::item: not a scalar");
        return node_->val[0];
    }
    bool needs_grad() const { return node_ && node_->needs_grad; }
    void set_needs_grad(bool b) { node_->needs_grad = b; }

    // handle semantics: grads live on the shared node, so mutation through a
    // const handle is deliberate
    std::vector<double>& grad() const {
        if (node_->grad.empty())
            node_->grad = detail::BufferPool::instance().take(node_->val.size());
        return node_->grad;
    }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() const {
        if (!node_->grad.empty())
            std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

class Tape {
public:
    void record(std::function<void()> back) { ops_.push_back(std::move(back)); }

    // Seeds d(loss)/d(loss) = 1 and replays recorded ops in reverse.
    void backward(Tensor loss) {
        if (loss.size() != 1)
            throw std::logic_error("Tape::backward: loss must be scalar");
        loss.grad()[0] += 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    void clear() { ops_.clear(); }
    std::size_t size() const { return ops_.size(); }

private:
    std::vector<std::function<void()>> ops_;
};

namespace detail {

inline bool want_grad(const Tape* tape, std::initializer_list<Tensor> ins) {
    if (!tape) return false;
    for (const auto& t : ins)
        if (t.needs_grad()) return true;
    return false;
}

// Output grad, or nullptr when this output never reached the loss.
inline const double* out_grad(const Tensor& t) {
    return t.node()->grad.empty() ? nullptr : t.node()->grad.data();
}

}  // namespace detail

// ---- elementwise ----

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (detail::want_grad(tape, {a, b})) {
        out.set_needs_grad(true);
        tape->record([a, b, out]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            const std::size_t n = out.size();
            if (a.needs_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (b.needs_grad()) {
                auto& gb = b.grad();
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

inline Tensor scale(Tape* tape, const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
    if (detail::want_grad(tape, {a})) {
        out.set_needs_grad(true);
        tape->record([a, out, c]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            auto& ga = a.grad();
            for (std::size_t i = 0; i < out.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (detail::want_grad(tape, {a, b})) {
        out.set_needs_grad(true);
        tape->record([a, b, out]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            const std::size_t n = out.size();
            if (a.needs_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * b.data()[i];
            }
            if (b.needs_grad()) {
                auto& gb = b.grad();
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * a.data()[i];
            }
        });
    }
    return out;
}

namespace detail {

template <typename F, typename DF>
Tensor unary_op(Tape* tape, const Tensor& a, F f, DF df) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = f(a.data()[i]);
    if (want_grad(tape, {a})) {
        out.set_needs_grad(true);
        tape->record([a, out, df]() mutable {
            const double* g = out_grad(out);
            if (!g) return;
            auto& ga = a.grad();
            for (std::size_t i = 0; i < out.size(); ++i)
                ga[i] += g[i] * df(a.data()[i], out.data()[i]);
        });
    }
    return out;
}

}  // namespace detail

// Written out (not via unary_op): this runs over every node activation twice
// per layer, and max(x, slope*x) keeps the loop branch-free.
inline Tensor leaky_relu(Tape* tape, const Tensor& a, double slope = 0.01) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    const double* x = a.data();
    double* y = out.data();
    for (std::size_t i = 0; i < n; ++i) y[i] = std::max(x[i], slope * x[i]);
    if (detail::want_grad(tape, {a})) {
        out.set_needs_grad(true);
        tape->record([a, out, slope]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            auto& ga = a.grad();
            const double* x = a.data();
            double* gp = ga.data();
            const std::size_t n = out.size();
            for (std::size_t i = 0; i < n; ++i)
                gp[i] += g[i] * (x[i] > 0.0 ? 1.0 : slope);
        });
    }
    return out;
}

inline Tensor relu(Tape* tape, const Tensor& a) {
    return detail::unary_op(
        tape, a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(Tape* tape, const Tensor& a) {
    return detail::unary_op(
        tape, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh_op(Tape* tape, const Tensor& a) {
    return detail::unary_op(
        tape, a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

// Exact gelu (erf form), not the tanh approximation.
inline Tensor gelu(Tape* tape, const Tensor& a) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    return detail::unary_op(
        tape, a,
        [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        });
}

// ---- linear algebra ----

namespace detail {
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;
}  // namespace detail

// C[n,m] = A[n,k] * B[k,m]
inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
    const int n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k) throw std::invalid_argument("matmul: inner dim mismatch");
    Tensor out = Tensor::zeros({n, m});
    detail::EMap(out.data(), n, m).noalias() =
        detail::ECMap(a.data(), n, k) * detail::ECMap(b.data(), k, m);
    if (detail::want_grad(tape, {a, b})) {
        out.set_needs_grad(true);
        tape->record([a, b, out, n, k, m]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            const detail::ECMap gm(g, n, m);
            if (a.needs_grad())
                detail::EMap(a.grad().data(), n, k).noalias() +=
                    gm * detail::ECMap(b.data(), k, m).transpose();
            if (b.needs_grad())
                detail::EMap(b.grad().data(), k, m).noalias() +=
                    detail::ECMap(a.data(), n, k).transpose() * gm;
        });
    }
    return out;
}

// C[n,m] = A[n,k] * B[m,k]^T  (candidate scoring against row-major tables)
inline Tensor matmul_nt(Tape* tape, const Tensor& a, const Tensor& b) {
    const int n = a.rows(), k = a.cols(), m = b.rows();
    if (b.cols() != k) throw std::invalid_argument("matmul_nt: inner dim mismatch");
    Tensor out = Tensor::zeros({n, m});
    detail::EMap(out.data(), n, m).noalias() =
        detail::ECMap(a.data(), n, k) * detail::ECMap(b.data(), m, k).transpose();
    if (detail::want_grad(tape, {a, b})) {
        out.set_needs_grad(true);
        tape->record([a, b, out, n, k, m]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            const detail::ECMap gm(g, n, m);
            if (a.needs_grad())
                detail::EMap(a.grad().data(), n, k).noalias() +=
                    gm * detail::ECMap(b.data(), m, k);
            if (b.needs_grad())
                detail::EMap(b.grad().data(), m, k).noalias() +=
                    gm.transpose() * detail::ECMap(a.data(), n, k);
        });
    }
    return out;
}

inline Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& b) {
    const int n = x.rows(), d = x.cols();
    if (static_cast<int>(b.size()) != d)
        throw std::invalid_argument("add_bias: width mismatch");
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            out.data()[static_cast<std::size_t>(i) * d + j] =
                x.data()[static_cast<std::size_t>(i) * d + j] + b.data()[j];
    if (detail::want_grad(tape, {x, b})) {
        out.set_needs_grad(true);
        tape->record([x, b, out, n, d]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            if (x.needs_grad()) {
                auto& gx = x.grad();
                for (std::size_t i = 0; i < out.size(); ++i) gx[i] += g[i];
            }
            if (b.needs_grad()) {
                auto& gb = b.grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j)
                        gb[j] += g[static_cast<std::size_t>(i) * d + j];
            }
        });
    }
    return out;
}

// out = X * W + b
inline Tensor linear(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_bias(tape, matmul(tape, x, w), b);
}

// ---- gather / stack / slice ----

inline Tensor gather_rows(Tape* tape, const Tensor& t, const std::vector<int>& idx) {
    const int d = t.cols();
    Tensor out = Tensor::zeros({static_cast<int>(idx.size()), d});
    for (std::size_t q = 0; q < idx.size(); ++q) {
        const int r = idx[q];
        if (r < 0 || r >= t.rows()) throw std::out_of_range("gather_rows: bad index");
        std::copy_n(t.data() + static_cast<std::size_t>(r) * d, d,
                    out.data() + q * d);
    }
    if (detail::want_grad(tape, {t})) {
        out.set_needs_grad(true);
        tape->record([t, out, idx, d]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            auto& gt = t.grad();
            for (std::size_t q = 0; q < idx.size(); ++q) {
                double* dst = gt.data() + static_cast<std::size_t>(idx[q]) * d;
                const double* src = g + q * d;
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

inline Tensor vstack(Tape* tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("vstack: empty");
    const int d = parts[0].cols();
    int n = 0;
    bool ng = false;
    for (const auto& p : parts) {
        if (p.cols() != d) throw std::invalid_argument("vstack: width mismatch");
        n += p.rows();
        ng = ng || p.needs_grad();
    }
    Tensor out = Tensor::zeros({n, d});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy_n(p.data(), p.size(), out.data() + off);
        off += p.size();
    }
    if (tape && ng) {
        out.set_needs_grad(true);
        tape->record([parts, out]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            std::size_t off = 0;
            for (auto& p : parts) {
                if (p.needs_grad()) {
                    auto& gp = p.grad();
                    for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g[off + i];
                }
                off += p.size();
            }
        });
    }
    return out;
}

inline Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const int n = parts[0].rows();
    int d = 0;
    bool ng = false;
    for (const auto& p : parts) {
        if (p.rows() != n) throw std::invalid_argument("concat_cols: height mismatch");
        d += p.cols();
        ng = ng || p.needs_grad();
    }
    Tensor out = Tensor::zeros({n, d});
    int off = 0;
    for (const auto& p : parts) {
        const int pc = p.cols();
        for (int i = 0; i < n; ++i)
            std::copy_n(p.data() + static_cast<std::size_t>(i) * pc, pc,
                        out.data() + static_cast<std::size_t>(i) * d + off);
        off += pc;
    }
    if (tape && ng) {
        out.set_needs_grad(true);
        tape->record([parts, out, n, d]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            int off = 0;
            for (auto& p : parts) {
                const int pc = p.cols();
                if (p.needs_grad()) {
                    auto& gp = p.grad();
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < pc; ++j)
                            gp[static_cast<std::size_t>(i) * pc + j] +=
                                g[static_cast<std::size_t>(i) * d + off + j];
                }
                off += pc;
            }
        });
    }
    return out;
}

// ---- normalization / regularization ----

inline Tensor softmax_rows(Tape* tape, const Tensor& x) {
    const int n = x.rows(), d = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < n; ++i) {
        const double* xr = x.data() + static_cast<std::size_t>(i) * d;
        double* orow = out.data() + static_cast<std::size_t>(i) * d;
        double mx = xr[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        double z = 0.0;
        for (int j = 0; j < d; ++j) {
            orow[j] = std::exp(xr[j] - mx);
            z += orow[j];
        }
        const double inv = 1.0 / z;
        for (int j = 0; j < d; ++j) orow[j] *= inv;
    }
    if (detail::want_grad(tape, {x})) {
        out.set_needs_grad(true);
        tape->record([x, out, n, d]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            auto& gx = x.grad();
            for (int i = 0; i < n; ++i) {
                const double* orow = out.data() + static_cast<std::size_t>(i) * d;
                const double* grow = g + static_cast<std::size_t>(i) * d;
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += orow[j] * grow[j];
                for (int j = 0; j < d; ++j)
                    gx[static_cast<std::size_t>(i) * d + j] +=
                        orow[j] * (grow[j] - dot);
            }
        });
    }
    return out;
}

inline Tensor log_softmax_rows(Tape* tape, const Tensor& x) {
    const int n = x.rows(), d = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < n; ++i) {
        const double* xr = x.data() + static_cast<std::size_t>(i) * d;
        double* orow = out.data() + static_cast<std::size_t>(i) * d;
        double mx = xr[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        double z = 0.0;
        for (int j = 0; j < d; ++j) z += std::exp(xr[j] - mx);
        const double lse = mx + std::log(z);
        for (int j = 0; j < d; ++j) orow[j] = xr[j] - lse;
    }
    if (detail::want_grad(tape, {x})) {
        out.set_needs_grad(true);
        tape->record([x, out, n, d]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            auto& gx = x.grad();
            for (int i = 0; i < n; ++i) {
                const double* orow = out.data() + static_cast<std::size_t>(i) * d;
                const double* grow = g + static_cast<std::size_t>(i) * d;
                double gsum = 0.0;
                for (int j = 0; j < d; ++j) gsum += grow[j];
                for (int j = 0; j < d; ++j)
                    gx[static_cast<std::size_t>(i) * d + j] +=
                        grow[j] - std::exp(orow[j]) * gsum;
            }
        });
    }
    return out;
}

inline Tensor layer_norm_rows(Tape* tape, const Tensor& x, const Tensor& gain,
                              const Tensor& bias, double eps = 1e-5) {
    const int n = x.rows(), d = x.cols();
    if (static_cast<int>(gain.size()) != d || static_cast<int>(bias.size()) != d)
        throw std::invalid_argument("layer_norm_rows: param width mismatch");
    Tensor out = Tensor::zeros(x.shape());
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto rstd = std::make_shared<std::vector<double>>(n);
    for (int i = 0; i < n; ++i) {
        const double* xr = x.data() + static_cast<std::size_t>(i) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += xr[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = xr[j] - mean;
            var += c * c;
        }
        var /= d;
        const double r = 1.0 / std::sqrt(var + eps);
        (*rstd)[i] = r;
        for (int j = 0; j < d; ++j) {
            const double h = (xr[j] - mean) * r;
            (*xhat)[static_cast<std::size_t>(i) * d + j] = h;
            out.data()[static_cast<std::size_t>(i) * d + j] =
                h * gain.data()[j] + bias.data()[j];
        }
    }
    if (detail::want_grad(tape, {x, gain, bias})) {
        out.set_needs_grad(true);
        tape->record([x, gain, bias, out, xhat, rstd, n, d]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            for (int i = 0; i < n; ++i) {
                const double* grow = g + static_cast<std::size_t>(i) * d;
                const double* hrow = xhat->data() + static_cast<std::size_t>(i) * d;
                if (gain.needs_grad()) {
                    auto& gg = gain.grad();
                    for (int j = 0; j < d; ++j) gg[j] += grow[j] * hrow[j];
                }
                if (bias.needs_grad()) {
                    auto& gb = bias.grad();
                    for (int j = 0; j < d; ++j) gb[j] += grow[j];
                }
                if (x.needs_grad()) {
                    auto& gx = x.grad();
                    double sum_gh = 0.0, sum_ghh = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double gh = grow[j] * gain.data()[j];
                        sum_gh += gh;
                        sum_ghh += gh * hrow[j];
                    }
                    const double r = (*rstd)[i];
                    for (int j = 0; j < d; ++j) {
                        const double gh = grow[j] * gain.data()[j];
                        gx[static_cast<std::size_t>(i) * d + j] +=
                            r * (gh - sum_gh / d - hrow[j] * sum_ghh / d);
                    }
                }
            }
        });
    }
    return out;
}

// Inverted dropout; the mask comes from a named substream so a rerun with the
// same seed reproduces the run bit-for-bit.
inline Tensor dropout(Tape* tape, const Tensor& x, double rate, Rng& rng,
                      bool training) {
    if (!training || rate <= 0.0) return x;
    const double keep = 1.0 - rate;
    const double inv = 1.0 / keep;
    auto mask = std::make_shared<std::vector<unsigned char>>(x.size());
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool on = rng.uniform_real() < keep;
        (*mask)[i] = on;
        out.data()[i] = on ? x.data()[i] * inv : 0.0;
    }
    if (detail::want_grad(tape, {x})) {
        out.set_needs_grad(true);
        tape->record([x, out, mask, inv]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            auto& gx = x.grad();
            for (std::size_t i = 0; i < out.size(); ++i)
                if ((*mask)[i]) gx[i] += g[i] * inv;
        });
    }
    return out;
}

// ---- reductions / losses ----

inline Tensor sum_all(Tape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x.data()[i];
    out.data()[0] = acc;
    if (detail::want_grad(tape, {x})) {
        out.set_needs_grad(true);
        tape->record([x, out]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            auto& gx = x.grad();
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[0];
        });
    }
    return out;
}

// Label-smoothed cross-entropy over logits [B,C], averaged over the batch.
// Target row: 1 - eps on gold, eps/(C-1) spread over the rest.
inline Tensor smoothed_ce(Tape* tape, const Tensor& logits,
                          const std::vector<int>& gold, double eps) {
    const int bsz = logits.rows(), c = logits.cols();
    if (static_cast<int>(gold.size()) != bsz)
        throw std::invalid_argument("smoothed_ce: gold size mismatch");
    if (c < 2) throw std::invalid_argument("smoothed_ce: need >= 2 classes");
    Tensor out = Tensor::zeros({1});
    auto logp = std::make_shared<std::vector<double>>(logits.size());
    const double off = eps / (c - 1);
    const double on = 1.0 - eps;
    double total = 0.0;
    for (int i = 0; i < bsz; ++i) {
        const double* xr = logits.data() + static_cast<std::size_t>(i) * c;
        double* lp = logp->data() + static_cast<std::size_t>(i) * c;
        double mx = xr[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(xr[j] - mx);
        const double lse = mx + std::log(z);
        const int gi = gold[i];
        if (gi < 0 || gi >= c) throw std::out_of_range("smoothed_ce: bad gold index");
        double row_loss = 0.0;
        for (int j = 0; j < c; ++j) {
            lp[j] = xr[j] - lse;
            row_loss -= (j == gi ? on : off) * lp[j];
        }
        total += row_loss;
    }
    out.data()[0] = total / bsz;
    if (detail::want_grad(tape, {logits})) {
        out.set_needs_grad(true);
        tape->record([logits, out, logp, gold, on, off, bsz, c]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            const double s = g[0] / bsz;
            auto& gx = logits.grad();
            for (int i = 0; i < bsz; ++i) {
                const double* lp = logp->data() + static_cast<std::size_t>(i) * c;
                const int gi = gold[i];
                for (int j = 0; j < c; ++j) {
                    const double y = (j == gi ? on : off);
                    gx[static_cast<std::size_t>(i) * c + j] +=
                        s * (std::exp(lp[j]) - y);
                }
            }
        });
    }
    return out;
}

// ---- circular correlation (compositional operator) ----

// Rowwise circ_corr: out[i] = corr(a[i], b[i]) via FFT; the naive sum
// definition is the test oracle.
inline Tensor circ_corr_rows(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("circ_corr_rows: shape mismatch");
    const int n = a.rows(), d = a.cols();
    Tensor out = Tensor::zeros(a.shape());
    FftPlan plan(static_cast<std::size_t>(d));
    std::vector<cplx> fa(d), fb(d);
    for (int i = 0; i < n; ++i) {
        const double* ar = a.data() + static_cast<std::size_t>(i) * d;
        const double* br = b.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            fa[j] = cplx(ar[j], 0.0);
            fb[j] = cplx(br[j], 0.0);
        }
        plan.forward(fa.data());
        plan.forward(fb.data());
        for (int j = 0; j < d; ++j) fa[j] = std::conj(fa[j]) * fb[j];
        plan.inverse(fa.data());
        for (int j = 0; j < d; ++j)
            out.data()[static_cast<std::size_t>(i) * d + j] = fa[j].real();
    }
    if (detail::want_grad(tape, {a, b})) {
        out.set_needs_grad(true);
        tape->record([a, b, out, n, d]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            // d/da corr(a,b) pairs g with b as a correlation; d/db as a
            // convolution. Both come back through the same FFT plan.
            FftPlan plan(static_cast<std::size_t>(d));
            std::vector<cplx> fg(d), fo(d);
            for (int i = 0; i < n; ++i) {
                const double* gr = g + static_cast<std::size_t>(i) * d;
                for (int j = 0; j < d; ++j) fg[j] = cplx(gr[j], 0.0);
                plan.forward(fg.data());
                if (a.needs_grad()) {
                    const double* br = b.data() + static_cast<std::size_t>(i) * d;
                    for (int j = 0; j < d; ++j) fo[j] = cplx(br[j], 0.0);
                    plan.forward(fo.data());
                    for (int j = 0; j < d; ++j) fo[j] *= std::conj(fg[j]);
                    plan.inverse(fo.data());
                    auto& ga = a.grad();
                    for (int j = 0; j < d; ++j)
                        ga[static_cast<std::size_t>(i) * d + j] += fo[j].real();
                }
                if (b.needs_grad()) {
                    const double* ar = a.data() + static_cast<std::size_t>(i) * d;
                    for (int j = 0; j < d; ++j) fo[j] = cplx(ar[j], 0.0);
                    plan.forward(fo.data());
                    for (int j = 0; j < d; ++j) fo[j] *= fg[j];
                    plan.inverse(fo.data());
                    auto& gb = b.grad();
                    for (int j = 0; j < d; ++j)
                        gb[static_cast<std::size_t>(i) * d + j] += fo[j].real();
                }
            }
        });
    }
    return out;
}

}  // namespace unihr
