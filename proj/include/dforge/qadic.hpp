#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dforge {

// Digit conventions used everywhere in this library:
//   * digit vectors are little-endian: index 0 holds the least significant
//     digit of the integer they expand;
//   * canonical form has no trailing zero digits, so the zero integer is the
//     empty vector;
//   * for a grid point x = r/q^m the coordinate digits x = 0.x_1 x_2 ... are
//     x_{a+1} = digit m-1-a of r, i.e. reading r's digits from the top.

using digit_t = std::uint16_t;

class PrimeBase {
public:
    explicit PrimeBase(int q);  // throws std::invalid_argument unless q is prime, 2 <= q <= 257
    int q() const { return q_; }
    friend bool operator==(const PrimeBase&, const PrimeBase&) = default;

private:
    int q_;
};

class DigitVec {
public:
    explicit DigitVec(PrimeBase base) : base_(base) {}
    // Canonicalizes (strips trailing zeros) and validates every digit < q.
    DigitVec(PrimeBase base, std::vector<digit_t> digits);

    PrimeBase base() const { return base_; }
    std::span<const digit_t> digits() const { return digits_; }
    std::size_t size() const { return digits_.size(); }
    bool is_zero() const { return digits_.empty(); }
    // Digit at position i; positions beyond the stored length read as 0.
    digit_t digit(std::size_t i) const { return i < digits_.size() ? digits_[i] : 0; }

    friend bool operator==(const DigitVec&, const DigitVec&) = default;

private:
    PrimeBase base_;
    std::vector<digit_t> digits_;
};

// Base-q expansion of n, canonical. digits_of(0) is empty.
DigitVec digits_of(std::uint64_t n, PrimeBase base);

// Reconstructs the integer; throws std::overflow_error if it exceeds 2^64-1.
std::uint64_t value_of(const DigitVec& v);

// Index of the most significant digit: len(k) = floor(log_q k).
// Throws std::invalid_argument for k = 0.
int length_of(std::uint64_t k, PrimeBase base);

// Digitwise sum mod q (the group operation on q-adic expansions).
DigitVec digit_add(const DigitVec& a, const DigitVec& b);

// Digitwise product by the scalar c in [0, q).
DigitVec scalar_mul(int c, const DigitVec& v);

// Position of the first (lowest-index) nonzero entry, or nullopt when all
// entries are zero. This is the single primitive behind both valuation
// conventions: nu1(b) = -(index+1), and the weight w in the character-sum
// closed form is the index itself.
std::optional<std::size_t> first_nonzero_index(std::span<const digit_t> v);
std::optional<std::size_t> first_nonzero_index(const DigitVec& v);

// True iff nu1(b) <= -m, i.e. the first m-1 digits of b vanish (the zero
// vector passes for every m).
bool nu1_at_most(std::span<const digit_t> b, int m);

// True iff some scalar c in {1,...,q-1} has l_j = c*k_j digitwise for all j.
// Tuples must be nonempty and share a base; zero tuples are dependent only
// on zero tuples.
bool is_strongly_dependent(std::span<const DigitVec> k, std::span<const DigitVec> l);

}
