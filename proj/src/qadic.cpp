#include "dforge/qadic.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace dforge {

PrimeBase::PrimeBase(int q) : q_(q) {
    if (q < 2 || q > 257)
        throw std::invalid_argument("PrimeBase: q must lie in [2, 257], got " + std::to_string(q));
    for (int d = 2; d * d <= q; ++d)
        if (q % d == 0)
            throw std::invalid_argument("PrimeBase: q must be prime, got " + std::to_string(q));
}

DigitVec::DigitVec(PrimeBase base, std::vector<digit_t> digits)
    : base_(base), digits_(std::move(digits)) {
    for (digit_t d : digits_)
        if (d >= base_.q())
            throw std::invalid_argument("DigitVec: digit " + std::to_string(d) +
                                        " out of range for base " + std::to_string(base_.q()));
    while (!digits_.empty() && digits_.back() == 0) digits_.pop_back();
}

DigitVec digits_of(std::uint64_t n, PrimeBase base) {
    std::vector<digit_t> d;
    const auto q = static_cast<std::uint64_t>(base.q());
    while (n != 0) {
        d.push_back(static_cast<digit_t>(n % q));
        n /= q;
    }
    return DigitVec(base, std::move(d));
}

std::uint64_t value_of(const DigitVec& v) {
    const auto q = static_cast<std::uint64_t>(v.base().q());
    std::uint64_t acc = 0;
    const auto ds = v.digits();
    for (std::size_t i = ds.size(); i-- > 0;) {
        if (acc > (~0ull - ds[i]) / q)
            throw std::overflow_error("value_of: q-adic value exceeds 64 bits");
        acc = acc * q + ds[i];
    }
    return acc;
}

int length_of(std::uint64_t k, PrimeBase base) {
    if (k == 0) throw std::invalid_argument("length_of: undefined for k = 0");
    const auto q = static_cast<std::uint64_t>(base.q());
    int len = 0;
    while (k >= q) {
        k /= q;
        ++len;
    }
    return len;
}

DigitVec digit_add(const DigitVec& a, const DigitVec& b) {
    if (!(a.base() == b.base()))
        throw std::invalid_argument("digit_add: mismatched bases");
    const int q = a.base().q();
    std::vector<digit_t> out(std::max(a.size(), b.size()));
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<digit_t>((a.digit(i) + b.digit(i)) % q);
    return DigitVec(a.base(), std::move(out));
}

DigitVec scalar_mul(int c, const DigitVec& v) {
    const int q = v.base().q();
    if (c < 0 || c >= q)
        throw std::invalid_argument("scalar_mul: scalar must lie in [0, q)");
    std::vector<digit_t> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = static_cast<digit_t>((c * v.digit(i)) % q);
    return DigitVec(v.base(), std::move(out));
}

std::optional<std::size_t> first_nonzero_index(std::span<const digit_t> v) {
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] != 0) return i;
    return std::nullopt;
}

std::optional<std::size_t> first_nonzero_index(const DigitVec& v) {
    return first_nonzero_index(v.digits());
}

bool nu1_at_most(std::span<const digit_t> b, int m) {
    const auto idx = first_nonzero_index(b);
    return !idx || *idx + 1 >= static_cast<std::size_t>(m);
}

bool is_strongly_dependent(std::span<const DigitVec> k, std::span<const DigitVec> l) {
    if (k.empty() || k.size() != l.size())
        throw std::invalid_argument("is_strongly_dependent: tuples must be nonempty and equal length");
    const PrimeBase base = k[0].base();
    for (const auto& v : k)
        if (!(v.base() == base)) throw std::invalid_argument("is_strongly_dependent: mixed bases");
    for (const auto& v : l)
        if (!(v.base() == base)) throw std::invalid_argument("is_strongly_dependent: mixed bases");
    const int q = base.q();
    for (int c = 1; c < q; ++c) {
        bool all = true;
        for (std::size_t j = 0; j < k.size() && all; ++j)
            all = scalar_mul(c, k[j]) == l[j];
        if (all) return true;
    }
    return false;
}

}
