#include "dforge/walsh.hpp"

#include "dforge/errors.hpp"

#include <array>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dforge {

std::uint64_t upow(std::uint64_t base, int exp) {
    if (exp < 0) throw std::invalid_argument("upow: negative exponent");
    std::uint64_t r = 1;
    for (int i = 0; i < exp; ++i) {
        if (base != 0 && r > ~0ull / base) throw std::overflow_error("upow: result exceeds 64 bits");
        r *= base;
    }
    return r;
}

OmegaTable::OmegaTable(PrimeBase base) : base_(base) {
    const int q = base.q();
    roots_.reserve(static_cast<std::size_t>(q));
    for (int e = 0; e < q; ++e) {
        const double t = 2.0 * std::numbers::pi * e / q;
        roots_.emplace_back(std::cos(t), std::sin(t));
    }
}

const OmegaTable& omega_table(PrimeBase base) {
    // lock-free fast path over a fixed-size slot array (q <= 257)
    static std::array<std::atomic<const OmegaTable*>, 258> slots{};
    static std::mutex build_mutex;
    auto& slot = slots[static_cast<std::size_t>(base.q())];
    if (const OmegaTable* t = slot.load(std::memory_order_acquire)) return *t;
    std::lock_guard lock(build_mutex);
    if (const OmegaTable* t = slot.load(std::memory_order_acquire)) return *t;
    const auto* built = new OmegaTable(base);  // lives for the whole process
    slot.store(built, std::memory_order_release);
    return *built;
}

GridCoordinate::GridCoordinate(PrimeBase base_, int m_, std::uint64_t num_)
    : base(base_), m(m_), num(num_) {
    if (m < 0) throw std::invalid_argument("GridCoordinate: m must be nonnegative");
    if (num >= upow(base.q(), m))
        throw std::invalid_argument("GridCoordinate: numerator " + std::to_string(num) +
                                    " not below q^m");
}

digit_t GridCoordinate::frac_digit(int a) const {
    // x_{a+1} is digit m-1-a of num
    if (a < 0 || a >= m) return 0;
    const auto q = static_cast<std::uint64_t>(base.q());
    std::uint64_t r = num;
    for (int i = 0; i < m - 1 - a; ++i) r /= q;
    return static_cast<digit_t>(r % q);
}

cplx walsh(std::uint64_t j, const GridCoordinate& x) {
    const int q = x.base.q();
    const auto& om = omega_table(x.base);
    // digits of num, scanned from the most significant fractional position
    std::int64_t e = 0;
    std::uint64_t r = x.num;
    // x_{a+1} = digit m-1-a of num; accumulate j_a * x_{a+1} by walking num's
    // digits upward (digit i of num pairs with digit a = m-1-i of j)
    std::uint64_t jj = j;
    std::array<digit_t, 64> jd{};
    int jlen = 0;
    while (jj != 0 && jlen < 64) {
        jd[static_cast<std::size_t>(jlen++)] = static_cast<digit_t>(jj % static_cast<std::uint64_t>(q));
        jj /= static_cast<std::uint64_t>(q);
    }
    for (int i = 0; i < x.m; ++i) {
        const auto xi = static_cast<int>(r % static_cast<std::uint64_t>(q));
        r /= static_cast<std::uint64_t>(q);
        const int a = x.m - 1 - i;
        if (a < jlen) e += static_cast<std::int64_t>(jd[static_cast<std::size_t>(a)]) * xi;
    }
    return om.root(e);
}

cplx walsh_digits(std::uint64_t j, std::span<const digit_t> v, PrimeBase base) {
    const auto q = static_cast<std::uint64_t>(base.q());
    const auto& om = omega_table(base);
    std::int64_t e = 0;
    std::size_t a = 0;
    while (j != 0 && a < v.size()) {
        e += static_cast<std::int64_t>(j % q) * v[a];
        j /= q;
        ++a;
    }
    return om.root(e);
}

cplx walsh_vec(std::uint64_t j, const DigitVec& v) {
    return walsh_digits(j, v.digits(), v.base());
}

cplx orthonormality_avg(std::uint64_t k, std::uint64_t l, int m, PrimeBase base) {
    const std::uint64_t qm = upow(base.q(), m);
    if (qm > cost_guard())
        throw CostGuardError("orthonormality_avg: q^m exceeds the cost guard");
    cplx acc = 0;
    for (std::uint64_t r = 0; r < qm; ++r) {
        const GridCoordinate x(base, m, r);
        acc += walsh(k, x) * std::conj(walsh(l, x));
    }
    return acc / static_cast<double>(qm);
}

cplx interval_coeff(std::uint64_t k, const GridCoordinate& x) {
    const int q = x.base.q();
    const int m = x.m;
    const auto& om = omega_table(x.base);
    const auto qd = static_cast<double>(q);

    if (k == 0) {
        // 1/2 - 1/(2 q^m) + sum_{c=1..m} sum_{l=1..q-1} conj(wal_{l q^{c-1}}(x)) / (q^c (omega^l - 1))
        cplx acc = 0.5 - 0.5 / static_cast<double>(upow(q, m));
        double qc = 1.0;
        for (int c = 1; c <= m; ++c) {
            qc *= qd;
            const std::uint64_t step = upow(q, c - 1);
            for (int l = 1; l < q; ++l)
                acc += std::conj(walsh(static_cast<std::uint64_t>(l) * step, x)) /
                       (qc * (om.root(l) - 1.0));
        }
        return acc;
    }

    if (k >= upow(q, m))
        throw std::invalid_argument("interval_coeff: k must be below q^m");

    const int a = length_of(k, x.base) + 1;  // digit count of k
    const std::uint64_t qa1 = upow(q, a - 1);
    const auto kappa = static_cast<int>(k / qa1);  // leading digit
    const std::uint64_t kprime = k - static_cast<std::uint64_t>(kappa) * qa1;

    cplx acc = std::conj(walsh(kprime, x)) / (1.0 - om.root(-kappa));
    acc += (0.5 + 1.0 / (om.root(-kappa) - 1.0)) * std::conj(walsh(k, x));
    double qc = 1.0;
    for (int c = 1; c <= m - a; ++c) {
        qc *= qd;
        const std::uint64_t step = upow(q, a + c - 1);
        for (int l = 1; l < q; ++l)
            acc += std::conj(walsh(static_cast<std::uint64_t>(l) * step + k, x)) /
                   (qc * (om.root(l) - 1.0));
    }
    acc -= std::conj(walsh(k, x)) / (2.0 * static_cast<double>(upow(q, m - a)));
    return acc / static_cast<double>(upow(q, a));
}

std::vector<cplx> indicator_expansion(int t, int m, PrimeBase base) {
    if (t < 0 || t > m)
        throw std::invalid_argument("indicator_expansion: need 0 <= t <= m");
    const std::uint64_t qm = upow(base.q(), m);
    const std::uint64_t qt = upow(base.q(), t);
    if (qm > cost_guard())
        throw CostGuardError("indicator_expansion: grid size exceeds the cost guard");
    const std::uint64_t cutoff = upow(base.q(), m - t);  // x < q^-t iff num < q^{m-t}
    std::vector<cplx> coeff(qt, cplx{0.0, 0.0});
    for (std::uint64_t r = 0; r < cutoff; ++r) {
        const GridCoordinate x(base, m, r);
        for (std::uint64_t i = 0; i < qt; ++i)
            coeff[i] += std::conj(walsh(i, x));
    }
    for (auto& c : coeff) c /= static_cast<double>(qm);
    return coeff;
}

}
