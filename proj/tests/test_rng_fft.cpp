#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "unihr/fft.hpp"
#include "unihr/rng.hpp"

using namespace unihr;

namespace {

std::vector<cplx> random_signal(std::size_t n, Rng& rng) {
    std::vector<cplx> v(n);
    for (auto& x : v) x = cplx(rng.uniform_real(-1.0, 1.0), rng.uniform_real(-1.0, 1.0));
    return v;
}

double max_abs_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// reference rotation sum: out_k = sum_i a_i * b_{(i+k) mod d}
std::vector<double> corr_naive(const std::vector<double>& a,
                               const std::vector<double>& b) {
    const std::size_t d = a.size();
    std::vector<double> out(d, 0.0);
    for (std::size_t k = 0; k < d; ++k)
        for (std::size_t i = 0; i < d; ++i) out[k] += a[i] * b[(i + k) % d];
    return out;
}

std::vector<double> conv_naive(const std::vector<double>& a,
                               const std::vector<double>& b) {
    const std::size_t d = a.size();
    std::vector<double> out(d, 0.0);
    for (std::size_t k = 0; k < d; ++k)
        for (std::size_t i = 0; i < d; ++i) out[k] += a[i] * b[(k + d - i) % d];
    return out;
}

}  // namespace

TEST_CASE("rng streams are reproducible", "[rng]") {
    Rng a(123), b(123), c(124);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 64; ++i) {
        const auto x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
        all_equal = all_equal && x == y;
        any_diff = any_diff || x != z;
    }
    REQUIRE(all_equal);
    REQUIRE(any_diff);
}

TEST_CASE("rng fork decorrelates from the parent stream", "[rng]") {
    Rng parent(7);
    Rng child = parent.fork(1);
    Rng child2 = parent.fork(2);
    REQUIRE(child.next_u64() != child2.next_u64());
    // forking must not advance the parent
    Rng fresh(7);
    (void)fresh.fork(1);
    Rng untouched(7);
    REQUIRE(fresh.next_u64() == untouched.next_u64());
}

TEST_CASE("rng uniform draws respect their bounds", "[rng]") {
    Rng rng(99);
    for (int i = 0; i < 10000; ++i) {
        REQUIRE(rng.uniform(7) < 7);
        const double u = rng.uniform_real();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("rng shuffle yields a permutation", "[rng]") {
    Rng rng(5);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    rng.shuffle(v);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) REQUIRE(sorted[i] == i);
}

TEST_CASE("derive_seed separates named substreams", "[rng]") {
    REQUIRE(derive_seed(1, 2) != derive_seed(1, 3));
    REQUIRE(derive_seed(1, 2, 1) != derive_seed(1, 2, 2));
    REQUIRE(derive_seed(1, 2, 1, 5) != derive_seed(1, 2, 1, 6));
    REQUIRE(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("fft matches the quadratic dft on power-of-two sizes", "[fft]") {
    Rng rng(31337);
    for (std::size_t n : {2u, 4u, 8u, 32u, 128u, 512u}) {
        auto x = random_signal(n, rng);
        auto expect = dft_naive(x);
        auto got = x;
        fft_forward(got);
        REQUIRE(max_abs_diff(expect, got) < 1e-9);
    }
}

TEST_CASE("fft matches the quadratic dft on general sizes", "[fft]") {
    Rng rng(404);
    for (std::size_t n : {3u, 5u, 6u, 7u, 12u, 100u, 257u}) {
        auto x = random_signal(n, rng);
        auto expect = dft_naive(x);
        auto got = x;
        fft_forward(got);
        REQUIRE(max_abs_diff(expect, got) < 1e-9);
    }
}

TEST_CASE("inverse fft undoes the forward transform", "[fft]") {
    Rng rng(2718);
    for (std::size_t n : {2u, 3u, 8u, 12u, 100u, 512u}) {
        auto x = random_signal(n, rng);
        auto y = x;
        fft_forward(y);
        fft_inverse(y);
        REQUIRE(max_abs_diff(x, y) < 1e-10);
    }
}

TEST_CASE("circular correlation with a delta is the identity", "[fft]") {
    const std::vector<double> delta = {1.0, 0.0, 0.0, 0.0};
    const std::vector<double> b = {0.5, -2.0, 3.25, 7.0};
    const auto out = circ_corr(delta, b);
    for (std::size_t i = 0; i < b.size(); ++i)
        REQUIRE(out[i] == Catch::Approx(b[i]).margin(1e-12));
}

TEST_CASE("circular correlation of shifted delta rotates left", "[fft]") {
    // corr([0,1], [3,5]) picks b_{(1+k) mod 2} = [5,3]
    const auto two = circ_corr({0.0, 1.0}, {3.0, 5.0});
    REQUIRE(two[0] == Catch::Approx(5.0).margin(1e-12));
    REQUIRE(two[1] == Catch::Approx(3.0).margin(1e-12));
    const auto three = circ_corr({0.0, 1.0, 0.0}, {4.0, 5.0, 6.0});
    REQUIRE(three[0] == Catch::Approx(5.0).margin(1e-12));
    REQUIRE(three[1] == Catch::Approx(6.0).margin(1e-12));
    REQUIRE(three[2] == Catch::Approx(4.0).margin(1e-12));
}

TEST_CASE("circular convolution of shifted delta rotates right", "[fft]") {
    const auto out = circ_conv({0.0, 1.0, 0.0}, {4.0, 5.0, 6.0});
    REQUIRE(out[0] == Catch::Approx(6.0).margin(1e-12));
    REQUIRE(out[1] == Catch::Approx(4.0).margin(1e-12));
    REQUIRE(out[2] == Catch::Approx(5.0).margin(1e-12));
}

TEST_CASE("fft-based correlation matches the rotation sum across widths", "[fft]") {
    Rng rng(1001);
    for (std::size_t d : {2u, 3u, 4u, 6u, 8u, 13u, 16u, 64u, 200u, 512u}) {
        std::vector<double> a(d), b(d);
        for (auto& x : a) x = rng.uniform_real(-1.0, 1.0);
        for (auto& x : b) x = rng.uniform_real(-1.0, 1.0);
        const auto fast = circ_corr(a, b);
        const auto slow = corr_naive(a, b);
        for (std::size_t i = 0; i < d; ++i)
            REQUIRE(fast[i] == Catch::Approx(slow[i]).margin(1e-10));
        const auto fconv = circ_conv(a, b);
        const auto sconv = conv_naive(a, b);
        for (std::size_t i = 0; i < d; ++i)
            REQUIRE(fconv[i] == Catch::Approx(sconv[i]).margin(1e-10));
    }
}
