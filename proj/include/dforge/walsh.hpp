#pragma once

#include "dforge/qadic.hpp"

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

namespace dforge {

using cplx = std::complex<double>;

// base^exp in 64 bits; throws std::overflow_error when it does not fit.
std::uint64_t upow(std::uint64_t base, int exp);

// The q complex roots of unity omega_q^e = exp(2*pi*i*e/q), built once per
// base and immutable afterwards; concurrent lookups are safe.
class OmegaTable {
public:
    explicit OmegaTable(PrimeBase base);
    PrimeBase base() const { return base_; }
    // omega_q^e for any integer exponent (reduced mod q internally).
    cplx root(std::int64_t e) const {
        const int q = base_.q();
        auto r = static_cast<int>(e % q);
        if (r < 0) r += q;
        return roots_[static_cast<std::size_t>(r)];
    }

private:
    PrimeBase base_;
    std::vector<cplx> roots_;
};

const OmegaTable& omega_table(PrimeBase base);

// A point of the refinement-m grid: x = num / q^m with 0 <= num < q^m.
// Its fractional digits x = 0.x_1 x_2 ... x_m are the digits of num read
// from the most significant position downwards.
struct GridCoordinate {
    PrimeBase base;
    int m;
    std::uint64_t num;

    GridCoordinate(PrimeBase base_, int m_, std::uint64_t num_);
    double value() const { return static_cast<double>(num) / static_cast<double>(upow(base.q(), m)); }
    // x_{a+1} for a >= 0 (zero beyond the stored precision).
    digit_t frac_digit(int a) const;
};

// wal_j(x) = omega_q^(j_0 x_1 + j_1 x_2 + ...) on a grid point.
cplx walsh(std::uint64_t j, const GridCoordinate& x);

// Same character evaluated on an explicit digit sequence xi_1, xi_2, ... = v[0], v[1], ...
// (the form taken by matrix images).
cplx walsh_digits(std::uint64_t j, std::span<const digit_t> v, PrimeBase base);
cplx walsh_vec(std::uint64_t j, const DigitVec& v);

// (1/q^m) sum over the grid of wal_k * conj(wal_l); equals 1 when the
// first m digits of k and l agree and 0 otherwise.
cplx orthonormality_avg(std::uint64_t k, std::uint64_t l, int m, PrimeBase base);

// J_k(x) = integral over [0, x) of conj(wal_k), in closed form, for grid x
// and k < q^m. The anchor case J_0(x) equals x exactly.
cplx interval_coeff(std::uint64_t k, const GridCoordinate& x);

// Walsh coefficients a_i, i < q^t, of the indicator of [0, q^-t) computed by
// averaging against the refinement-m grid (t <= m); every coefficient
// equals q^-t.
std::vector<cplx> indicator_expansion(int t, int m, PrimeBase base);

}
