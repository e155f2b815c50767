#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

namespace unihr {

using cplx = std::complex<double>;

namespace fft_detail {

constexpr double kTwoPi = 6.283185307179586476925286766559;

inline bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Stage twiddles for a pow-2 transform, packed re,im; the block for butterfly
// half-width `half` starts at complex index `half` (index 0 is padding).
inline std::vector<double> make_twiddles(std::size_t n) {
    std::vector<double> tw(2 * n, 0.0);
    for (std::size_t half = 1; half < n; half <<= 1)
        for (std::size_t k = 0; k < half; ++k) {
            const double ang = -kTwoPi * static_cast<double>(k) /
                               static_cast<double>(2 * half);
            tw[2 * (half + k)] = std::cos(ang);
            tw[2 * (half + k) + 1] = std::sin(ang);
        }
    return tw;
}

// In-place iterative radix-2 Cooley-Tukey over interleaved re,im pairs; n must
// be a power of two and tw comes from make_twiddles(n). The complex arithmetic
// is spelled out in doubles: std::complex multiplies drag in a NaN-recovery
// slow path that keeps the butterfly loop scalar.
inline void fft_pow2(double* a, std::size_t n, bool inverse, const double* tw) {
    if (n < 2) return;
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(a[2 * i], a[2 * j]);
            std::swap(a[2 * i + 1], a[2 * j + 1]);
        }
    }
    const double sgn = inverse ? -1.0 : 1.0;
    for (std::size_t half = 1; half < n; half <<= 1) {
        const double* t = tw + 2 * half;
        for (std::size_t i = 0; i < n; i += 2 * half) {
            double* lo = a + 2 * i;
            double* hi = lo + 2 * half;
            for (std::size_t k = 0; k < half; ++k) {
                const double wr = t[2 * k], wi = sgn * t[2 * k + 1];
                const double xr = hi[2 * k], xi = hi[2 * k + 1];
                const double vr = xr * wr - xi * wi;
                const double vi = xr * wi + xi * wr;
                const double ur = lo[2 * k], ui = lo[2 * k + 1];
                lo[2 * k] = ur + vr;
                lo[2 * k + 1] = ui + vi;
                hi[2 * k] = ur - vr;
                hi[2 * k + 1] = ui - vi;
            }
        }
    }
}

}  // namespace fft_detail

// Precomputed twiddles, plus Bluestein chirp state for non-pow-2 lengths, so
// repeated transforms of one length do no trig and no allocation. One plan per
// distinct length in a transform-heavy loop; cached_plan() memoizes per thread.
class FftPlan {
public:
    explicit FftPlan(std::size_t n) : n_(n) {
        if (n == 0) throw std::invalid_argument("FftPlan: n must be positive");
        if (fft_detail::is_pow2(n)) {
            tw_ = fft_detail::make_twiddles(n);
            return;
        }
        m_ = fft_detail::next_pow2(2 * n - 1);
        tw_ = fft_detail::make_twiddles(m_);
        chirp_.resize(2 * n);
        bfft_.assign(2 * m_, 0.0);
        // chirp[k] = exp(-i*pi*k^2/n); k^2 mod 2n keeps the argument small.
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t k2 = (k * k) % (2 * n);
            const double ang = -fft_detail::kTwoPi * 0.5 *
                               static_cast<double>(k2) / static_cast<double>(n);
            chirp_[2 * k] = std::cos(ang);
            chirp_[2 * k + 1] = std::sin(ang);
        }
        for (std::size_t k = 0; k < n; ++k) {
            bfft_[2 * k] = chirp_[2 * k];
            bfft_[2 * k + 1] = -chirp_[2 * k + 1];
            if (k) {
                bfft_[2 * (m_ - k)] = chirp_[2 * k];
                bfft_[2 * (m_ - k) + 1] = -chirp_[2 * k + 1];
            }
        }
        fft_detail::fft_pow2(bfft_.data(), m_, false, tw_.data());
        work_.resize(2 * m_);
    }

    std::size_t size() const { return n_; }

    // Forward DFT: X[m] = sum_k x[k] exp(-2*pi*i*m*k/n). In place, unscaled.
    void forward(cplx* a) { transform(reinterpret_cast<double*>(a), false); }
    void forward(double* a) { transform(a, false); }

    // Inverse DFT with 1/n scaling.
    void inverse(cplx* a) { inverse(reinterpret_cast<double*>(a)); }
    void inverse(double* a) {
        transform(a, true);
        const double s = 1.0 / static_cast<double>(n_);
        for (std::size_t i = 0; i < 2 * n_; ++i) a[i] *= s;
    }

private:
    std::size_t n_;
    std::size_t m_ = 0;          // Bluestein padded length (0 when radix-2)
    std::vector<double> tw_;
    std::vector<double> chirp_;  // interleaved re,im
    std::vector<double> bfft_;   // FFT of the conjugate chirp
    std::vector<double> work_;

    void transform(double* a, bool inverse) {
        if (m_ == 0) {
            fft_detail::fft_pow2(a, n_, inverse, tw_.data());
            return;
        }
        // Bluestein via chirp-z: handles any n with three pow-2 FFTs.
        // The inverse conjugates in and out; the wrapper rescales.
        const double flip = inverse ? -1.0 : 1.0;
        for (std::size_t k = 0; k < n_; ++k) {
            const double xr = a[2 * k], xi = flip * a[2 * k + 1];
            const double cr = chirp_[2 * k], ci = chirp_[2 * k + 1];
            work_[2 * k] = xr * cr - xi * ci;
            work_[2 * k + 1] = xr * ci + xi * cr;
        }
        std::fill(work_.begin() + 2 * n_, work_.end(), 0.0);
        fft_detail::fft_pow2(work_.data(), m_, false, tw_.data());
        for (std::size_t k = 0; k < m_; ++k) {
            const double xr = work_[2 * k], xi = work_[2 * k + 1];
            const double br = bfft_[2 * k], bi = bfft_[2 * k + 1];
            work_[2 * k] = xr * br - xi * bi;
            work_[2 * k + 1] = xr * bi + xi * br;
        }
        fft_detail::fft_pow2(work_.data(), m_, true, tw_.data());
        const double s = 1.0 / static_cast<double>(m_);
        for (std::size_t k = 0; k < n_; ++k) {
            const double xr = work_[2 * k] * s, xi = work_[2 * k + 1] * s;
            const double cr = chirp_[2 * k], ci = chirp_[2 * k + 1];
            a[2 * k] = xr * cr - xi * ci;
            a[2 * k + 1] = flip * (xr * ci + xi * cr);
        }
    }
};

inline FftPlan& cached_plan(std::size_t n) {
    thread_local std::map<std::size_t, FftPlan> plans;
    auto it = plans.find(n);
    if (it == plans.end()) it = plans.try_emplace(n, n).first;
    return it->second;
}

// Row-wise DFT of a real matrix [nrows, d] into interleaved spectra (2d
// doubles per row). Rows go through two at a time: for z = x + i*y the halves
// split as X[k] = (Z[k] + conj(Z[-k]))/2 and Y[k] = (Z[k] - conj(Z[-k]))/2i.
inline void fft_real_rows(const double* src, std::size_t nrows, std::size_t d,
                          double* spec, FftPlan& plan) {
    std::vector<double> z(2 * d);
    std::size_t i = 0;
    for (; i + 1 < nrows; i += 2) {
        const double* x = src + i * d;
        const double* y = x + d;
        for (std::size_t c = 0; c < d; ++c) {
            z[2 * c] = x[c];
            z[2 * c + 1] = y[c];
        }
        plan.forward(z.data());
        double* X = spec + 2 * i * d;
        double* Y = X + 2 * d;
        X[0] = z[0];
        X[1] = 0.0;
        Y[0] = z[1];
        Y[1] = 0.0;
        for (std::size_t k = 1; k < d; ++k) {
            const std::size_t k2 = d - k;
            const double zr = z[2 * k], zi = z[2 * k + 1];
            const double mr = z[2 * k2], mi = z[2 * k2 + 1];
            X[2 * k] = 0.5 * (zr + mr);
            X[2 * k + 1] = 0.5 * (zi - mi);
            Y[2 * k] = 0.5 * (zi + mi);
            Y[2 * k + 1] = 0.5 * (mr - zr);
        }
    }
    if (i < nrows) {
        const double* x = src + i * d;
        double* X = spec + 2 * i * d;
        for (std::size_t c = 0; c < d; ++c) {
            X[2 * c] = x[c];
            X[2 * c + 1] = 0.0;
        }
        plan.forward(X);
    }
}

inline void fft_forward(std::vector<cplx>& a) { cached_plan(a.size()).forward(a.data()); }

inline void fft_inverse(std::vector<cplx>& a) { cached_plan(a.size()).inverse(a.data()); }

// Reference DFT, O(n^2); the oracle the fast path is tested against.
inline std::vector<cplx> dft_naive(const std::vector<cplx>& x, bool inverse = false) {
    const std::size_t n = x.size();
    std::vector<cplx> out(n, cplx(0.0, 0.0));
    for (std::size_t m = 0; m < n; ++m) {
        for (std::size_t k = 0; k < n; ++k) {
            const double ang = (inverse ? 1.0 : -1.0) * fft_detail::kTwoPi *
                               static_cast<double>((m * k) % n) / static_cast<double>(n);
            out[m] += x[k] * cplx(std::cos(ang), std::sin(ang));
        }
    }
    if (inverse) {
        const double s = 1.0 / static_cast<double>(n);
        for (auto& v : out) v *= s;
    }
    return out;
}

// Circular correlation: out[k] = sum_i a[i] * b[(i+k) mod d],
// computed as IDFT(conj(DFT(a)) . DFT(b)).
inline std::vector<double> circ_corr(const std::vector<double>& a,
                                     const std::vector<double>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("circ_corr: size mismatch");
    const std::size_t d = a.size();
    FftPlan& plan = cached_plan(d);
    std::vector<cplx> fa(d), fb(d);
    for (std::size_t i = 0; i < d; ++i) {
        fa[i] = cplx(a[i], 0.0);
        fb[i] = cplx(b[i], 0.0);
    }
    plan.forward(fa.data());
    plan.forward(fb.data());
    for (std::size_t i = 0; i < d; ++i) fa[i] = std::conj(fa[i]) * fb[i];
    plan.inverse(fa.data());
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) {
        if (std::abs(fa[i].imag()) > 1e-9)
            throw std::runtime_error("circ_corr: non-negligible imaginary residue");
        out[i] = fa[i].real();
    }
    return out;
}

// Circular convolution: out[k] = sum_i a[i] * b[(k-i) mod d].
inline std::vector<double> circ_conv(const std::vector<double>& a,
                                     const std::vector<double>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("circ_conv: size mismatch");
    const std::size_t d = a.size();
    FftPlan& plan = cached_plan(d);
    std::vector<cplx> fa(d), fb(d);
    for (std::size_t i = 0; i < d; ++i) {
        fa[i] = cplx(a[i], 0.0);
        fb[i] = cplx(b[i], 0.0);
    }
    plan.forward(fa.data());
    plan.forward(fb.data());
    for (std::size_t i = 0; i < d; ++i) fa[i] *= fb[i];
    plan.inverse(fa.data());
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = fa[i].real();
    return out;
}

}  // namespace unihr
