#pragma once

// Test-side oracles: independent, brute-force reference computations used to
// pin down the library's closed forms. Everything here favors obvious
// correctness over speed and must stay decoupled from the code paths it
// checks.

#include "dforge/qadic.hpp"
#include "dforge/walsh.hpp"

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

namespace oracles {

using dforge::cplx;
using dforge::digit_t;
using dforge::GridCoordinate;
using dforge::PrimeBase;

// integral over [0, x) of conj(wal_k), done by summing constant cells at a
// refinement fine enough that wal_k is constant on each cell.
inline cplx integral_oracle(std::uint64_t k, const GridCoordinate& x) {
    const int needed = (k == 0) ? 1 : dforge::length_of(k, x.base) + 1;
    const int M = std::max(x.m, needed);
    const std::uint64_t scale = dforge::upow(x.base.q(), M - x.m);
    const std::uint64_t cells = x.num * scale;
    const auto qM = static_cast<double>(dforge::upow(x.base.q(), M));
    cplx acc = 0;
    for (std::uint64_t u = 0; u < cells; ++u)
        acc += std::conj(dforge::walsh(k, GridCoordinate(x.base, M, u)));
    return acc / qM;
}

// Walsh character evaluated from first principles: exp(2 pi i / q * sum of
// digit products), no table, digits extracted with plain integer ops.
inline cplx walsh_reference(std::uint64_t j, std::uint64_t num, int m, int q) {
    long long e = 0;
    // digit a of j pairs with fractional digit a+1 of x, which is digit
    // m-1-a of num
    for (int a = 0; a < m; ++a) {
        std::uint64_t jj = j, nn = num;
        for (int i = 0; i < a; ++i) jj /= static_cast<std::uint64_t>(q);
        for (int i = 0; i < m - 1 - a; ++i) nn /= static_cast<std::uint64_t>(q);
        e += static_cast<long long>(jj % static_cast<std::uint64_t>(q)) *
             static_cast<long long>(nn % static_cast<std::uint64_t>(q));
    }
    const double t = 2.0 * 3.14159265358979323846 * static_cast<double>(e % q) / q;
    return {std::cos(t), std::sin(t)};
}

// sum_{n < N} omega^(b . digits(n)) the slow way
inline cplx char_sum_brute(std::uint64_t N, const std::vector<digit_t>& b, int q) {
    cplx acc = 0;
    for (std::uint64_t n = 0; n < N; ++n) {
        long long e = 0;
        std::uint64_t t = n;
        for (std::size_t i = 0; i < b.size() && t != 0; ++i) {
            e += static_cast<long long>(b[i]) * static_cast<long long>(t % static_cast<std::uint64_t>(q));
            t /= static_cast<std::uint64_t>(q);
        }
        const double ang = 2.0 * 3.14159265358979323846 * static_cast<double>(e % q) / q;
        acc += cplx{std::cos(ang), std::sin(ang)};
    }
    return acc;
}

inline double binomial_stderr(double phat, std::uint64_t trials) {
    return std::sqrt(phat * (1.0 - phat) / static_cast<double>(trials));
}

inline bool close(cplx a, cplx b, double tol) { return std::abs(a - b) <= tol; }
inline bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}
