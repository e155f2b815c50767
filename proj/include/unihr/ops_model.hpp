#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "unihr/tensor.hpp"

namespace unihr {

// ---- intra-fact attention primitives ----
// Edges are grouped into contiguous segments (CSR offsets); a segment is one
// (subgraph, receiver) pair and the softmax runs inside it.

// logits[e,h] = sum over head-slice h of v[e,c] * w[c]
inline Tensor head_dot(Tape* tape, const Tensor& v, const Tensor& w, int heads) {
    const int e = v.rows(), d = v.cols();
    if (static_cast<int>(w.size()) != d)
        throw std::invalid_argument("head_dot: weight width mismatch");
    if (d % heads != 0) throw std::invalid_argument("head_dot: heads must divide d");
    const int hd = d / heads;
    Tensor out = Tensor::zeros({e, heads});
    for (int i = 0; i < e; ++i) {
        const double* vr = v.data() + static_cast<std::size_t>(i) * d;
        double* orow = out.data() + static_cast<std::size_t>(i) * heads;
        for (int h = 0; h < heads; ++h) {
            double acc = 0.0;
            for (int c = h * hd; c < (h + 1) * hd; ++c) acc += vr[c] * w.data()[c];
            orow[h] = acc;
        }
    }
    if (detail::want_grad(tape, {v, w})) {
        out.set_needs_grad(true);
        tape->record([v, w, out, e, d, heads, hd]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            for (int i = 0; i < e; ++i) {
                const double* gr = g + static_cast<std::size_t>(i) * heads;
                const double* vr = v.data() + static_cast<std::size_t>(i) * d;
                for (int h = 0; h < heads; ++h) {
                    const double gv = gr[h];
                    if (gv == 0.0) continue;
                    if (v.needs_grad()) {
                        auto& gvv = v.grad();
                        for (int c = h * hd; c < (h + 1) * hd; ++c)
                            gvv[static_cast<std::size_t>(i) * d + c] += gv * w.data()[c];
                    }
                    if (w.needs_grad()) {
                        auto& gw = w.grad();
                        for (int c = h * hd; c < (h + 1) * hd; ++c)
                            gw[c] += gv * vr[c];
                    }
                }
            }
        });
    }
    return out;
}

// Column-wise softmax within each CSR segment of rows.
inline Tensor segment_softmax(Tape* tape, const Tensor& logits,
                              std::shared_ptr<const std::vector<int>> offsets) {
    const int h = logits.cols();
    const int nseg = static_cast<int>(offsets->size()) - 1;
    Tensor out = Tensor::zeros(logits.shape());
    for (int s = 0; s < nseg; ++s) {
        const int lo = (*offsets)[s], hi = (*offsets)[s + 1];
        for (int c = 0; c < h; ++c) {
            double mx = -1e300;
            for (int r = lo; r < hi; ++r)
                mx = std::max(mx, logits.data()[static_cast<std::size_t>(r) * h + c]);
            double z = 0.0;
            for (int r = lo; r < hi; ++r) {
                const double v =
                    std::exp(logits.data()[static_cast<std::size_t>(r) * h + c] - mx);
                out.data()[static_cast<std::size_t>(r) * h + c] = v;
                z += v;
            }
            const double inv = 1.0 / z;
            for (int r = lo; r < hi; ++r)
                out.data()[static_cast<std::size_t>(r) * h + c] *= inv;
        }
    }
    if (detail::want_grad(tape, {logits})) {
        out.set_needs_grad(true);
        tape->record([logits, out, offsets, h, nseg]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            auto& gx = logits.grad();
            for (int s = 0; s < nseg; ++s) {
                const int lo = (*offsets)[s], hi = (*offsets)[s + 1];
                for (int c = 0; c < h; ++c) {
                    double dot = 0.0;
                    for (int r = lo; r < hi; ++r) {
                        const std::size_t k = static_cast<std::size_t>(r) * h + c;
                        dot += out.data()[k] * g[k];
                    }
                    for (int r = lo; r < hi; ++r) {
                        const std::size_t k = static_cast<std::size_t>(r) * h + c;
                        gx[k] += out.data()[k] * (g[k] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// out[e,c] = alpha[e, head_of(c)] * v[e,c]
inline Tensor head_mul(Tape* tape, const Tensor& alpha, const Tensor& v) {
    const int e = v.rows(), d = v.cols(), heads = alpha.cols();
    if (alpha.rows() != e || d % heads != 0)
        throw std::invalid_argument("head_mul: shape mismatch");
    const int hd = d / heads;
    Tensor out = Tensor::zeros(v.shape());
    for (int i = 0; i < e; ++i) {
        const double* ar = alpha.data() + static_cast<std::size_t>(i) * heads;
        const double* vr = v.data() + static_cast<std::size_t>(i) * d;
        double* orow = out.data() + static_cast<std::size_t>(i) * d;
        for (int h = 0; h < heads; ++h) {
            const double av = ar[h];
            for (int c = h * hd; c < (h + 1) * hd; ++c) orow[c] = av * vr[c];
        }
    }
    if (detail::want_grad(tape, {alpha, v})) {
        out.set_needs_grad(true);
        tape->record([alpha, v, out, e, d, heads, hd]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            for (int i = 0; i < e; ++i) {
                const double* gr = g + static_cast<std::size_t>(i) * d;
                const double* ar = alpha.data() + static_cast<std::size_t>(i) * heads;
                const double* vr = v.data() + static_cast<std::size_t>(i) * d;
                if (v.needs_grad()) {
                    auto& gv = v.grad();
                    double* gvr = gv.data() + static_cast<std::size_t>(i) * d;
                    for (int h = 0; h < heads; ++h) {
                        const double av = ar[h];
                        for (int c = h * hd; c < (h + 1) * hd; ++c)
                            gvr[c] += gr[c] * av;
                    }
                }
                if (alpha.needs_grad()) {
                    auto& ga = alpha.grad();
                    for (int h = 0; h < heads; ++h) {
                        double acc = 0.0;
                        for (int c = h * hd; c < (h + 1) * hd; ++c)
                            acc += gr[c] * vr[c];
                        ga[static_cast<std::size_t>(i) * heads + h] += acc;
                    }
                }
            }
        });
    }
    return out;
}

// Row segments summed, each segment's total scattered into its target row.
inline Tensor segment_sum_to(Tape* tape, const Tensor& v,
                             std::shared_ptr<const std::vector<int>> offsets,
                             std::shared_ptr<const std::vector<int>> targets,
                             int n_out) {
    const int d = v.cols();
    const int nseg = static_cast<int>(offsets->size()) - 1;
    if (static_cast<int>(targets->size()) != nseg)
        throw std::invalid_argument("segment_sum_to: target count mismatch");
    Tensor out = Tensor::zeros({n_out, d});
    for (int s = 0; s < nseg; ++s) {
        double* dst = out.data() + static_cast<std::size_t>((*targets)[s]) * d;
        for (int r = (*offsets)[s]; r < (*offsets)[s + 1]; ++r) {
            const double* src = v.data() + static_cast<std::size_t>(r) * d;
            for (int c = 0; c < d; ++c) dst[c] += src[c];
        }
    }
    if (detail::want_grad(tape, {v})) {
        out.set_needs_grad(true);
        tape->record([v, out, offsets, targets, d, nseg]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            auto& gv = v.grad();
            for (int s = 0; s < nseg; ++s) {
                const double* src = g + static_cast<std::size_t>((*targets)[s]) * d;
                for (int r = (*offsets)[s]; r < (*offsets)[s + 1]; ++r)
                    for (int c = 0; c < d; ++c)
                        gv[static_cast<std::size_t>(r) * d + c] += src[c];
            }
        });
    }
    return out;
}

// ---- inter-fact relational aggregation ----

enum class EdgeDir : std::uint8_t { Forward = 0, Reverse = 1 };
enum class EdgeTau : std::uint8_t { Connected = 0, Atomic = 1, Nested = 2 };

struct RelEdge {
    int recv = 0;
    int send = 0;
    int rel = 0;
    EdgeDir dir = EdgeDir::Forward;
    EdgeTau tau = EdgeTau::Connected;
};

namespace detail {

// Row DFTs of scattered real rows (two per transform, like fft_real_rows);
// src_of maps a slot to its row, spectra land at spec + slot * 2d.
template <typename SrcOf>
void fft_real_rows_gather(SrcOf src_of, const std::vector<int>& slots, int d,
                          double* spec, FftPlan& plan) {
    std::vector<double> z(2 * static_cast<std::size_t>(d));
    std::size_t i = 0;
    for (; i + 1 < slots.size(); i += 2) {
        const double* x = src_of(slots[i]);
        const double* y = src_of(slots[i + 1]);
        for (int c = 0; c < d; ++c) {
            z[2 * c] = x[c];
            z[2 * c + 1] = y[c];
        }
        plan.forward(z.data());
        double* X = spec + static_cast<std::size_t>(slots[i]) * 2 * d;
        double* Y = spec + static_cast<std::size_t>(slots[i + 1]) * 2 * d;
        X[0] = z[0];
        X[1] = 0.0;
        Y[0] = z[1];
        Y[1] = 0.0;
        for (int k = 1; k < d; ++k) {
            const int k2 = d - k;
            const double zr = z[2 * k], zi = z[2 * k + 1];
            const double mr = z[2 * k2], mi = z[2 * k2 + 1];
            X[2 * k] = 0.5 * (zr + mr);
            X[2 * k + 1] = 0.5 * (zi - mi);
            Y[2 * k] = 0.5 * (zi + mi);
            Y[2 * k + 1] = 0.5 * (mr - zr);
        }
    }
    if (i < slots.size()) {
        const double* x = src_of(slots[i]);
        double* X = spec + static_cast<std::size_t>(slots[i]) * 2 * d;
        for (int c = 0; c < d; ++c) {
            X[2 * c] = x[c];
            X[2 * c + 1] = 0.0;
        }
        plan.forward(X);
    }
}

// Inverse DFTs of conjugate-symmetric spectra rows, two per transform via
// z = u + i*v; each slot's real signal lands at dst_of(slot).
template <typename DstOf>
void ifft_sym_rows(const double* spec, const std::vector<int>& slots, int d,
                   FftPlan& plan, bool accumulate, DstOf dst_of) {
    std::vector<double> z(2 * static_cast<std::size_t>(d));
    std::size_t i = 0;
    for (; i + 1 < slots.size(); i += 2) {
        const double* U = spec + static_cast<std::size_t>(slots[i]) * 2 * d;
        const double* V = spec + static_cast<std::size_t>(slots[i + 1]) * 2 * d;
        for (int c = 0; c < d; ++c) {
            z[2 * c] = U[2 * c] - V[2 * c + 1];
            z[2 * c + 1] = U[2 * c + 1] + V[2 * c];
        }
        plan.inverse(z.data());
        double* du = dst_of(slots[i]);
        double* dv = dst_of(slots[i + 1]);
        if (accumulate) {
            for (int c = 0; c < d; ++c) du[c] += z[2 * c];
            for (int c = 0; c < d; ++c) dv[c] += z[2 * c + 1];
        } else {
            for (int c = 0; c < d; ++c) du[c] = z[2 * c];
            for (int c = 0; c < d; ++c) dv[c] = z[2 * c + 1];
        }
    }
    if (i < slots.size()) {
        const double* U = spec + static_cast<std::size_t>(slots[i]) * 2 * d;
        std::copy_n(U, 2 * static_cast<std::size_t>(d), z.data());
        plan.inverse(z.data());
        double* du = dst_of(slots[i]);
        if (accumulate)
            for (int c = 0; c < d; ++c) du[c] += z[2 * c];
        else
            for (int c = 0; c < d; ++c) du[c] = z[2 * c];
    }
}

}  // namespace detail

// Gated circular-correlation aggregation, grouped per (receiver, direction):
//   M_dir[i] = (1/|N(i)|) * sum over edges (i <- j, r) of g(tau) * corr(h_j, e_r)
// |N(i)| counts the node's whole incoming message list (both directions), so
// the two directional messages share one scale and a node's activation stays
// O(1) no matter its degree -- a raw sum drives the tanh that follows into
// saturation on any well-connected graph and stalls training.
// The correlation is linear in the frequency domain, so each node/relation row
// is transformed once (two real rows per FFT), every edge costs one complex
// multiply-accumulate, and paired inverse transforms over touched receivers
// bring the sums back. Spectra live in pooled Tensors as interleaved re,im.
inline std::pair<Tensor, Tensor> relational_aggregate(
    Tape* tape, const Tensor& h, const Tensor& e, const Tensor& omega,
    std::shared_ptr<const std::vector<RelEdge>> edges, bool use_gates) {
    const int n = h.rows(), d = h.cols(), r = e.rows();
    if (e.cols() != d) throw std::invalid_argument("relational_aggregate: dim mismatch");
    if (use_gates && omega.size() != 3)
        throw std::invalid_argument("relational_aggregate: omega must have 3 gates");

    FftPlan& plan = cached_plan(static_cast<std::size_t>(d));
    Tensor fh = Tensor::zeros({n, 2 * d});
    Tensor fe = Tensor::zeros({r, 2 * d});
    fft_real_rows(h.data(), static_cast<std::size_t>(n), static_cast<std::size_t>(d),
                  fh.data(), plan);
    fft_real_rows(e.data(), static_cast<std::size_t>(r), static_cast<std::size_t>(d),
                  fe.data(), plan);

    double gate[3] = {1.0, 1.0, 1.0};
    if (use_gates)
        for (int t = 0; t < 3; ++t)
            gate[t] = 1.0 / (1.0 + std::exp(-omega.data()[t]));

    // Stable bucket order by receiver slot: each accumulator row then stays in
    // cache while its in-edges arrive, and per-receiver sums keep the original
    // edge order.
    const std::size_t ne = edges->size();
    std::vector<int> soff(2 * static_cast<std::size_t>(n) + 1, 0);
    std::vector<double> inv_deg(static_cast<std::size_t>(n), 0.0);
    for (const RelEdge& ed : *edges) {
        ++soff[static_cast<std::size_t>(static_cast<int>(ed.dir) * n + ed.recv) + 1];
        inv_deg[static_cast<std::size_t>(ed.recv)] += 1.0;
    }
    for (double& v : inv_deg)
        if (v > 0.0) v = 1.0 / v;
    for (std::size_t s = 0; s + 1 < soff.size(); ++s) soff[s + 1] += soff[s];
    std::vector<int> order(ne);
    {
        std::vector<int> cur(soff.begin(), soff.end() - 1);
        for (std::size_t i = 0; i < ne; ++i) {
            const RelEdge& ed = (*edges)[i];
            order[cur[static_cast<int>(ed.dir) * n + ed.recv]++] = static_cast<int>(i);
        }
    }

    Tensor acc = Tensor::zeros({2 * n, 2 * d});
    for (int idx : order) {
        const RelEdge& ed = (*edges)[idx];
        const double w =
            gate[static_cast<int>(ed.tau)] * inv_deg[static_cast<std::size_t>(ed.recv)];
        const int slot = static_cast<int>(ed.dir) * n + ed.recv;
        double* dst = acc.data() + static_cast<std::size_t>(slot) * 2 * d;
        const double* a = fh.data() + static_cast<std::size_t>(ed.send) * 2 * d;
        const double* b = fe.data() + static_cast<std::size_t>(ed.rel) * 2 * d;
        // dst += w * conj(a) * b
        for (int c = 0; c < d; ++c) {
            const double ar = a[2 * c], ai = a[2 * c + 1];
            const double br = b[2 * c], bi = b[2 * c + 1];
            dst[2 * c] += w * (ar * br + ai * bi);
            dst[2 * c + 1] += w * (ar * bi - ai * br);
        }
    }

    Tensor m_fwd = Tensor::zeros({n, d});
    Tensor m_rev = Tensor::zeros({n, d});
    {
        std::vector<int> slots;
        for (int s = 0; s < 2 * n; ++s)
            if (soff[s + 1] > soff[s]) slots.push_back(s);
        detail::ifft_sym_rows(acc.data(), slots, d, plan, false, [&](int s) {
            Tensor& m = s < n ? m_fwd : m_rev;
            return m.data() + static_cast<std::size_t>(s % n) * d;
        });
    }

    if (detail::want_grad(tape, {h, e, omega})) {
        m_fwd.set_needs_grad(true);
        m_rev.set_needs_grad(true);
        const bool want_omega = use_gates && omega.needs_grad();
        tape->record([h, e, omega, m_fwd, m_rev, edges, fh, fe, gate0 = gate[0],
                      gate1 = gate[1], gate2 = gate[2], want_omega, n, d, r]() mutable {
            const double* gf = detail::out_grad(m_fwd);
            const double* gr = detail::out_grad(m_rev);
            if (!gf && !gr) return;
            const double gate[3] = {gate0, gate1, gate2};
            FftPlan& plan = cached_plan(static_cast<std::size_t>(d));

            // Frequency-domain grads of each touched receiver's message.
            Tensor fg = Tensor::zeros({2 * n, 2 * d});
            std::vector<std::uint8_t> have_fg(2 * static_cast<std::size_t>(n), 0);
            std::vector<int> gslots;
            for (const RelEdge& ed : *edges) {
                const int dir = static_cast<int>(ed.dir);
                const std::size_t slot = static_cast<std::size_t>(dir) * n + ed.recv;
                if (have_fg[slot]) continue;
                const double* src = dir == 0 ? gf : gr;
                if (!src) {
                    have_fg[slot] = 2;  // known zero
                    continue;
                }
                const double* g = src + static_cast<std::size_t>(ed.recv) * d;
                bool nonzero = false;
                for (int c = 0; c < d; ++c) nonzero = nonzero || g[c] != 0.0;
                if (!nonzero) {
                    have_fg[slot] = 2;
                    continue;
                }
                gslots.push_back(static_cast<int>(slot));
                have_fg[slot] = 1;
            }
            detail::fft_real_rows_gather(
                [&](int s) {
                    const double* src = s < n ? gf : gr;
                    return src + static_cast<std::size_t>(s % n) * d;
                },
                gslots, d, fg.data(), plan);

            Tensor acc_h, acc_e;
            std::vector<std::uint8_t> th, te;
            if (h.needs_grad()) {
                acc_h = Tensor::zeros({n, 2 * d});
                th.assign(n, 0);
            }
            if (e.needs_grad()) {
                acc_e = Tensor::zeros({r, 2 * d});
                te.assign(r, 0);
            }
            double domega[3] = {0.0, 0.0, 0.0};

            std::vector<double> inv_deg(static_cast<std::size_t>(n), 0.0);
            for (const RelEdge& ed : *edges)
                inv_deg[static_cast<std::size_t>(ed.recv)] += 1.0;
            for (double& v : inv_deg)
                if (v > 0.0) v = 1.0 / v;

            // by-send bucket order: sender spectra and their accumulator rows
            // stay hot, leaving the grad spectra as the one scattered read
            std::vector<int> horder(edges->size());
            {
                std::vector<int> cnt(static_cast<std::size_t>(n) + 1, 0);
                for (const RelEdge& ed : *edges) ++cnt[ed.send + 1];
                for (int s = 0; s < n; ++s) cnt[s + 1] += cnt[s];
                for (std::size_t i = 0; i < edges->size(); ++i)
                    horder[cnt[(*edges)[i].send]++] = static_cast<int>(i);
            }
            for (int idx : horder) {
                const RelEdge& ed = (*edges)[idx];
                const int slot = static_cast<int>(ed.dir) * n + ed.recv;
                if (have_fg[slot] != 1) continue;
                const double* g = fg.data() + static_cast<std::size_t>(slot) * 2 * d;
                const double* a = fh.data() + static_cast<std::size_t>(ed.send) * 2 * d;
                const double* b = fe.data() + static_cast<std::size_t>(ed.rel) * 2 * d;
                const double w = gate[static_cast<int>(ed.tau)] *
                                 inv_deg[static_cast<std::size_t>(ed.recv)];
                if (h.needs_grad()) {
                    // d/dh: pair the grad with e as a correlation
                    double* dst = acc_h.data() + static_cast<std::size_t>(ed.send) * 2 * d;
                    for (int c = 0; c < d; ++c) {
                        const double gre = g[2 * c], gim = g[2 * c + 1];
                        const double br = b[2 * c], bi = b[2 * c + 1];
                        dst[2 * c] += w * (gre * br + gim * bi);
                        dst[2 * c + 1] += w * (gre * bi - gim * br);
                    }
                    th[ed.send] = 1;
                }
                if (e.needs_grad()) {
                    // d/de: convolution of grad with h
                    double* dst = acc_e.data() + static_cast<std::size_t>(ed.rel) * 2 * d;
                    for (int c = 0; c < d; ++c) {
                        const double gre = g[2 * c], gim = g[2 * c + 1];
                        const double ar = a[2 * c], ai = a[2 * c + 1];
                        dst[2 * c] += w * (gre * ar - gim * ai);
                        dst[2 * c + 1] += w * (gre * ai + gim * ar);
                    }
                    te[ed.rel] = 1;
                }
                if (want_omega) {
                    // <G, corr(a,b)> = (1/d) Re sum_m G_m a_m conj(b_m)
                    double s = 0.0;
                    for (int c = 0; c < d; ++c) {
                        const double tr = g[2 * c] * a[2 * c] - g[2 * c + 1] * a[2 * c + 1];
                        const double ti = g[2 * c] * a[2 * c + 1] + g[2 * c + 1] * a[2 * c];
                        s += tr * b[2 * c] + ti * b[2 * c + 1];
                    }
                    domega[static_cast<int>(ed.tau)] +=
                        inv_deg[static_cast<std::size_t>(ed.recv)] * s / d;
                }
            }

            std::vector<int> rows;
            if (h.needs_grad()) {
                rows.clear();
                for (int i = 0; i < n; ++i)
                    if (th[i]) rows.push_back(i);
                auto& gh = h.grad();
                detail::ifft_sym_rows(acc_h.data(), rows, d, plan, true, [&](int i) {
                    return gh.data() + static_cast<std::size_t>(i) * d;
                });
            }
            if (e.needs_grad()) {
                rows.clear();
                for (int i = 0; i < r; ++i)
                    if (te[i]) rows.push_back(i);
                auto& ge = e.grad();
                detail::ifft_sym_rows(acc_e.data(), rows, d, plan, true, [&](int i) {
                    return ge.data() + static_cast<std::size_t>(i) * d;
                });
            }
            if (want_omega) {
                auto& go = omega.grad();
                for (int t = 0; t < 3; ++t)
                    go[t] += domega[t] * gate[t] * (1.0 - gate[t]);
            }
        });
    }
    return {m_fwd, m_rev};
}

// ---- decoder sequence attention ----

// Multi-head self-attention over B sequences of width slen packed as
// [B*slen, d]; key positions at or past lens[b] are masked out. Dropout hits
// the attention probabilities.
inline Tensor seq_attention(Tape* tape, const Tensor& q, const Tensor& k,
                            const Tensor& v, int bsz, int slen, int heads,
                            std::shared_ptr<const std::vector<int>> lens,
                            double drop_rate, Rng& rng, bool training) {
    const int d = q.cols();
    if (d % heads != 0) throw std::invalid_argument("seq_attention: heads | d");
    const int hd = d / heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(hd));
    const bool use_drop = training && drop_rate > 0.0;
    const double keep = 1.0 - drop_rate;
    const double inv_keep = use_drop ? 1.0 / keep : 1.0;

    const std::size_t pcount =
        static_cast<std::size_t>(bsz) * heads * slen * slen;
    auto probs = std::make_shared<std::vector<double>>(pcount, 0.0);
    auto mask = use_drop
                    ? std::make_shared<std::vector<std::uint8_t>>(pcount, 1)
                    : std::shared_ptr<std::vector<std::uint8_t>>();

    Tensor out = Tensor::zeros(q.shape());
    std::vector<double> srow;
    for (int b = 0; b < bsz; ++b) {
        const int len = (*lens)[b];
        for (int hh = 0; hh < heads; ++hh) {
            const int co = hh * hd;
            for (int s = 0; s < len; ++s) {
                const std::size_t qrow = static_cast<std::size_t>(b) * slen + s;
                const double* qp = q.data() + qrow * d + co;
                srow.assign(len, 0.0);
                double mx = -1e300;
                for (int t = 0; t < len; ++t) {
                    const double* kp =
                        k.data() + (static_cast<std::size_t>(b) * slen + t) * d + co;
                    double acc = 0.0;
                    for (int c = 0; c < hd; ++c) acc += qp[c] * kp[c];
                    srow[t] = acc * scl;
                    mx = std::max(mx, srow[t]);
                }
                double z = 0.0;
                for (int t = 0; t < len; ++t) {
                    srow[t] = std::exp(srow[t] - mx);
                    z += srow[t];
                }
                const double invz = 1.0 / z;
                double* prow = probs->data() +
                               ((static_cast<std::size_t>(b) * heads + hh) * slen + s) *
                                   slen;
                double* orow = out.data() + qrow * d + co;
                for (int t = 0; t < len; ++t) {
                    double p = srow[t] * invz;
                    prow[t] = p;
                    if (use_drop) {
                        const bool on = rng.uniform_real() < keep;
                        (*mask)[prow - probs->data() + t] = on;
                        p = on ? p * inv_keep : 0.0;
                    }
                    if (p != 0.0) {
                        const double* vp =
                            v.data() +
                            (static_cast<std::size_t>(b) * slen + t) * d + co;
                        for (int c = 0; c < hd; ++c) orow[c] += p * vp[c];
                    }
                }
            }
        }
    }

    if (detail::want_grad(tape, {q, k, v})) {
        out.set_needs_grad(true);
        tape->record([q, k, v, out, probs, mask, lens, bsz, slen, heads, hd, d, scl,
                      inv_keep]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            std::vector<double> dp(slen), ds(slen);
            for (int b = 0; b < bsz; ++b) {
                const int len = (*lens)[b];
                for (int hh = 0; hh < heads; ++hh) {
                    const int co = hh * hd;
                    for (int s = 0; s < len; ++s) {
                        const std::size_t qrow = static_cast<std::size_t>(b) * slen + s;
                        const double* grow = g + qrow * d + co;
                        const double* prow =
                            probs->data() +
                            ((static_cast<std::size_t>(b) * heads + hh) * slen + s) *
                                slen;
                        // dV and d(probs)
                        for (int t = 0; t < len; ++t) {
                            const std::size_t vrow =
                                static_cast<std::size_t>(b) * slen + t;
                            double pdrop = prow[t];
                            if (mask) {
                                pdrop = (*mask)[prow - probs->data() + t]
                                            ? pdrop * inv_keep
                                            : 0.0;
                            }
                            double dot = 0.0;
                            const double* vp = v.data() + vrow * d + co;
                            for (int c = 0; c < hd; ++c) dot += grow[c] * vp[c];
                            if (v.needs_grad() && pdrop != 0.0) {
                                auto& gv = v.grad();
                                for (int c = 0; c < hd; ++c)
                                    gv[vrow * d + co + c] += pdrop * grow[c];
                            }
                            double dpt = dot;
                            if (mask)
                                dpt = (*mask)[prow - probs->data() + t]
                                          ? dpt * inv_keep
                                          : 0.0;
                            dp[t] = dpt;
                        }
                        // softmax jacobian
                        double pdot = 0.0;
                        for (int t = 0; t < len; ++t) pdot += prow[t] * dp[t];
                        for (int t = 0; t < len; ++t)
                            ds[t] = prow[t] * (dp[t] - pdot) * scl;
                        const double* qp = q.data() + qrow * d + co;
                        for (int t = 0; t < len; ++t) {
                            if (ds[t] == 0.0) continue;
                            const std::size_t krow =
                                static_cast<std::size_t>(b) * slen + t;
                            const double* kp = k.data() + krow * d + co;
                            if (q.needs_grad()) {
                                auto& gq = q.grad();
                                for (int c = 0; c < hd; ++c)
                                    gq[qrow * d + co + c] += ds[t] * kp[c];
                            }
                            if (k.needs_grad()) {
                                auto& gk = k.grad();
                                for (int c = 0; c < hd; ++c)
                                    gk[krow * d + co + c] += ds[t] * qp[c];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---- timestamp embedding ----

// rows[i] = omega_p * sin(wp * tau_i + bp) + wnp * tau_i + bnp  (elementwise)
inline Tensor time2vec_rows(Tape* tape, std::shared_ptr<const std::vector<double>> taus,
                            const Tensor& wp, const Tensor& bp, const Tensor& wnp,
                            const Tensor& bnp, const Tensor& omega_p) {
    const int t = static_cast<int>(taus->size());
    const int d = static_cast<int>(wp.size());
    if (bp.size() != wp.size() || wnp.size() != wp.size() || bnp.size() != wp.size())
        throw std::invalid_argument("time2vec_rows: param width mismatch");
    if (omega_p.size() != 1)
        throw std::invalid_argument("time2vec_rows: omega_p must be scalar");
    Tensor out = Tensor::zeros({t, d});
    const double om = omega_p.data()[0];
    for (int i = 0; i < t; ++i) {
        const double tau = (*taus)[i];
        double* orow = out.data() + static_cast<std::size_t>(i) * d;
        for (int c = 0; c < d; ++c)
            orow[c] = om * std::sin(wp.data()[c] * tau + bp.data()[c]) +
                      wnp.data()[c] * tau + bnp.data()[c];
    }
    if (detail::want_grad(tape, {wp, bp, wnp, bnp, omega_p})) {
        out.set_needs_grad(true);
        tape->record([taus, wp, bp, wnp, bnp, omega_p, out, t, d, om]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            for (int i = 0; i < t; ++i) {
                const double tau = (*taus)[i];
                const double* grow = g + static_cast<std::size_t>(i) * d;
                for (int c = 0; c < d; ++c) {
                    const double gv = grow[c];
                    if (gv == 0.0) continue;
                    const double arg = wp.data()[c] * tau + bp.data()[c];
                    const double sn = std::sin(arg), cs = std::cos(arg);
                    if (wp.needs_grad()) wp.grad()[c] += gv * om * cs * tau;
                    if (bp.needs_grad()) bp.grad()[c] += gv * om * cs;
                    if (wnp.needs_grad()) wnp.grad()[c] += gv * tau;
                    if (bnp.needs_grad()) bnp.grad()[c] += gv;
                    if (omega_p.needs_grad()) omega_p.grad()[0] += gv * sn;
                }
            }
        });
    }
    return out;
}

// ---- decoder input assembly ----

struct SlotRef {
    enum Src : std::uint8_t { Node = 0, Edge = 1, Mask = 2, Pad = 3 };
    Src src = Pad;
    int row = 0;
};

// Sequence rows pulled from node table H, edge table E, the learned [M]
// vector, or zero padding.
inline Tensor gather_mixed(Tape* tape, const Tensor& h, const Tensor& e,
                           const Tensor& maskvec,
                           std::shared_ptr<const std::vector<SlotRef>> slots) {
    const int d = h.cols();
    if (e.cols() != d || static_cast<int>(maskvec.size()) != d)
        throw std::invalid_argument("gather_mixed: width mismatch");
    const int n = static_cast<int>(slots->size());
    Tensor out = Tensor::zeros({n, d});
    for (int i = 0; i < n; ++i) {
        const SlotRef& s = (*slots)[i];
        double* dst = out.data() + static_cast<std::size_t>(i) * d;
        switch (s.src) {
            case SlotRef::Node:
                std::copy_n(h.data() + static_cast<std::size_t>(s.row) * d, d, dst);
                break;
            case SlotRef::Edge:
                std::copy_n(e.data() + static_cast<std::size_t>(s.row) * d, d, dst);
                break;
            case SlotRef::Mask:
                std::copy_n(maskvec.data(), d, dst);
                break;
            case SlotRef::Pad:
                break;
        }
    }
    if (detail::want_grad(tape, {h, e, maskvec})) {
        out.set_needs_grad(true);
        tape->record([h, e, maskvec, out, slots, n, d]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            for (int i = 0; i < n; ++i) {
                const SlotRef& s = (*slots)[i];
                const double* src = g + static_cast<std::size_t>(i) * d;
                switch (s.src) {
                    case SlotRef::Node:
                        if (h.needs_grad()) {
                            auto& gh = h.grad();
                            for (int c = 0; c < d; ++c)
                                gh[static_cast<std::size_t>(s.row) * d + c] += src[c];
                        }
                        break;
                    case SlotRef::Edge:
                        if (e.needs_grad()) {
                            auto& ge = e.grad();
                            for (int c = 0; c < d; ++c)
                                ge[static_cast<std::size_t>(s.row) * d + c] += src[c];
                        }
                        break;
                    case SlotRef::Mask:
                        if (maskvec.needs_grad()) {
                            auto& gm = maskvec.grad();
                            for (int c = 0; c < d; ++c) gm[c] += src[c];
                        }
                        break;
                    case SlotRef::Pad:
                        break;
                }
            }
        });
    }
    return out;
}

// ---- small 2D convolution (alternative decoder) ----

// x rows are B images [ih, iw]; kern is [kc, kh*kw]; valid padding, stride 1.
// Output rows are [kc * oh * ow] with channel-major layout.
inline Tensor conv2d_valid(Tape* tape, const Tensor& x, int ih, int iw,
                           const Tensor& kern, int kh, int kw, const Tensor& bias) {
    const int bsz = x.rows();
    const int kc = kern.rows();
    if (x.cols() != ih * iw || kern.cols() != kh * kw ||
        static_cast<int>(bias.size()) != kc)
        throw std::invalid_argument("conv2d_valid: shape mismatch");
    const int oh = ih - kh + 1, ow = iw - kw + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d_valid: kernel too big");
    Tensor out = Tensor::zeros({bsz, kc * oh * ow});
    for (int b = 0; b < bsz; ++b) {
        const double* img = x.data() + static_cast<std::size_t>(b) * ih * iw;
        for (int ch = 0; ch < kc; ++ch) {
            const double* kn = kern.data() + static_cast<std::size_t>(ch) * kh * kw;
            double* orow = out.data() + static_cast<std::size_t>(b) * kc * oh * ow +
                           static_cast<std::size_t>(ch) * oh * ow;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias.data()[ch];
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx)
                            acc += img[(oy + ky) * iw + (ox + kx)] * kn[ky * kw + kx];
                    orow[oy * ow + ox] = acc;
                }
        }
    }
    if (detail::want_grad(tape, {x, kern, bias})) {
        out.set_needs_grad(true);
        tape->record([x, kern, bias, out, bsz, ih, iw, kc, kh, kw, oh, ow]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            for (int b = 0; b < bsz; ++b) {
                const double* img = x.data() + static_cast<std::size_t>(b) * ih * iw;
                for (int ch = 0; ch < kc; ++ch) {
                    const double* kn =
                        kern.data() + static_cast<std::size_t>(ch) * kh * kw;
                    const double* grow =
                        g + static_cast<std::size_t>(b) * kc * oh * ow +
                        static_cast<std::size_t>(ch) * oh * ow;
                    for (int oy = 0; oy < oh; ++oy)
                        for (int ox = 0; ox < ow; ++ox) {
                            const double gv = grow[oy * ow + ox];
                            if (gv == 0.0) continue;
                            if (bias.needs_grad()) bias.grad()[ch] += gv;
                            for (int ky = 0; ky < kh; ++ky)
                                for (int kx = 0; kx < kw; ++kx) {
                                    if (kern.needs_grad())
                                        kern.grad()[static_cast<std::size_t>(ch) * kh * kw +
                                                    ky * kw + kx] +=
                                            gv * img[(oy + ky) * iw + (ox + kx)];
                                    if (x.needs_grad())
                                        x.grad()[static_cast<std::size_t>(b) * ih * iw +
                                                 (oy + ky) * iw + (ox + kx)] +=
                                            gv * kn[ky * kw + kx];
                                }
                        }
                }
            }
        });
    }
    return out;
}

}  // namespace unihr
