#pragma once

#include "dforge/digitalseq.hpp"
#include "dforge/discrepancy.hpp"
#include "dforge/qadic.hpp"
#include "dforge/walsh.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace dforge {

// Index tuples with leading digit 1: k_j = q^(a_j - 1) + ell_j with
// 0 <= ell_j < q^(a_j - 1). The all-ones tuple (every a_j = 1, ell_j = 0)
// is excluded from enumeration. r_j = a_j - 1 is the digit length of k_j.
struct PCoord {
    int a = 1;
    std::uint64_t ell = 0;
    friend bool operator==(const PCoord&, const PCoord&) = default;
};

struct PTuple {
    PrimeBase base;
    std::vector<PCoord> coords;

    int s() const { return static_cast<int>(coords.size()); }
    int r(int j) const { return coords[static_cast<std::size_t>(j)].a - 1; }
    int sum_r() const;
    std::uint64_t k(int j) const;

    friend bool operator==(const PTuple&, const PTuple&) = default;
};

// Streams every PTuple with sum of lengths <= r_max in nondecreasing sum
// order, ties broken lexicographically on (a_1..a_s, ell_1..ell_s).
class PEnumerator {
public:
    PEnumerator(PrimeBase base, int s, int r_max);
    std::optional<PTuple> next();

private:
    bool advance_ell();
    bool advance_composition();
    void start_level();

    PrimeBase base_;
    int s_;
    int r_max_;
    int level_ = 0;
    bool level_open_ = false;
    bool first_of_level_ = false;
    std::vector<int> r_;
    std::vector<std::uint64_t> ell_;
};

// Test index k* = q^(a*-1) + q^(a*-2) + ell* whose top two digits are 1;
// stripping the top digit gives the P-shaped k~ = q^(a*-2) + ell*.
struct StarIndex {
    PrimeBase base;
    int a_star = 3;
    std::uint64_t ell_star = 0;

    StarIndex(PrimeBase base_, int a_star_, std::uint64_t ell_star_);
    std::uint64_t k_star() const;
    std::uint64_t k_tilde() const;
};

// Lifts coordinate j of a PTuple (needs a_j >= 2 so that a* = a_j + 1 >= 3).
StarIndex star_from_p(const PTuple& t, int j);

// Valuation-depth threshold: q^F = q^(sum r) * (sum r)^s * ln(sum r).
// Requires sum r >= 2.
long double f_exponent(std::span<const int> r, PrimeBase base);
int f_floor(std::span<const int> r, PrimeBase base);

// Digit shift applied to k~ to walk the nonzero-theta family: 0, then
// q^(a*-1), then q^(a*-1) + kappa*q^(a*+t) with u - 2 = t(q-1) + kappa - 1.
std::uint64_t beta_shift(int a_star, std::uint64_t u, PrimeBase base);

// Normalized projection (1/q^m) sum_x J_k(x) wal_{k*}(x), via the three-case
// closed form: nonzero only for k = k~, k = k*, and k = k* + kappa*q^(a*+c-1).
cplx theta(std::uint64_t k, const StarIndex& star, int m);

// Correlation of the local discrepancy with the product character wal_{k*},
// averaged over the full refinement-m grid: (1/q^(ms)) sum_x D(x,N) prod_j
// wal_{k*_j}(x_j). The scan variant also locates max_x |D(x, N)|.
cplx lambda_direct(const GeneratorTuple& T, std::span<const StarIndex> stars,
                   std::uint64_t N, int m);

struct GridScan {
    double max_abs = 0.0;
    std::vector<std::uint64_t> argmax;
};
std::pair<cplx, GridScan> lambda_direct_scan(const GeneratorTuple& T,
                                             std::span<const StarIndex> stars,
                                             std::uint64_t N, int m);

// Same correlation assembled on the Walsh side as a sum over the shift
// lattice u, split at J into main (u = 0), mid (0 < u <= J componentwise),
// and the exactly enumerated tail; tail_bound is the analytic envelope
// c4(q)^s * qN * q^(-sum a*) * sum of q^(-u/q) weights beyond J.
struct LambdaParts {
    cplx lambda;
    cplx main;
    cplx mid;
    cplx tail_exact;
    double tail_bound = 0.0;
};
LambdaParts lambda_spectral(const GeneratorTuple& T, std::span<const StarIndex> stars,
                            std::uint64_t N, int m, int J);

// Certified per-coordinate envelope constant: |theta(k~ + beta(u))| <=
// c4(q) * q^(-a*) * q^(-u/q) for every admissible u.
double theta_envelope_constant(PrimeBase base);

enum class MeasureMode { exhaustive, montecarlo };

struct MeasureResult {
    double estimate = 0.0;
    double stderr_value = 0.0;
    std::uint64_t trials = 0;  // 0 in exhaustive mode
    bool exact = false;
    std::uint64_t num = 0;  // reduced exact probability when exact
    std::uint64_t den = 1;
};

// Probability over random matrix tuples that the combined image of k has
// its first m-1 components zero. Exhaustive mode is exact (rational);
// Monte Carlo reports a frequency and its binomial standard error.
MeasureResult measure_mm(PrimeBase base, int s, int m, std::span<const std::uint64_t> k,
                         MeasureMode mode, std::uint64_t trials, std::uint64_t seed,
                         std::uint64_t stream);

// Product-formula value of the matrix average of wal_i(C^T k_j) across
// coordinates: 1 exactly when i = 0 or every k_j = 0.
double walsh_matrix_integral(PrimeBase base, std::uint64_t i, std::span<const std::uint64_t> k);

// Matrix average of prod_u wal_i(C_u^T k_u) wal_j(C_u^T l_u), in {0,1}.
// Evaluated through the digit condition k_{u,a} i_b + l_{u,a} j_b = 0 and,
// redundantly, through the five-case classification; the two must agree.
double paired_integral(PrimeBase base, std::uint64_t i, std::uint64_t j,
                       std::span<const std::uint64_t> k, std::span<const std::uint64_t> l);

// Probability that the k-image has its first m-1 components zero AND the
// shifted image its first floor(m/2)-1, where m = sum of the k-lengths and
// shifts[j] is either 0 or a digit shift living strictly above k_j's digits.
MeasureResult joint_measure(const PTuple& k, std::span<const std::uint64_t> shifts,
                            MeasureMode mode, std::uint64_t trials, std::uint64_t seed,
                            std::uint64_t stream);

struct WitnessReport {
    Provenance provenance;
    PTuple accepted;
    std::optional<int> valuation{};  // depth idx+1 of the accepted image; empty = zero image
    long double F = 0;
    int m = 0;
    std::uint64_t N = 0;
    cplx lambda{};
    cplx main{};
    cplx mid{};
    cplx tail_exact{};
    double tail_bound = 0.0;
    double certified = 0.0;  // |lambda|
    bool scanned = false;
    double max_abs_d = 0.0;
    std::vector<std::uint64_t> argmax{};
    std::optional<double> predictor{};  // (ln N)^s * ln ln N, defined for N >= 3
    std::optional<double> ratio{};      // certified / predictor
};

// Scans PTuples in enumeration order for the first one whose combined image
// is deep (first floor(F)-1 components zero) while every shifted image with
// u in [0,J]^s \ {0} stays shallow (first nonzero within depth sum_r / 2),
// then evaluates Lambda both ways at N = q^(m-1). NOT_FOUND is the normal
// negative outcome, reported as nullopt.
std::optional<WitnessReport> witness_search(const GeneratorTuple& T, int s, PrimeBase base,
                                            int r_min, int r_max, int J, bool scan);

namespace detail {

// Exact probability that every linear form (rows of `forms`, one coefficient
// per variable) vanishes under iid uniform digit assignments. Enumerates the
// assignment space when it is small, otherwise uses the rank of the
// coefficient matrix over Z_q; both give the same reduced rational.
struct Rational {
    std::uint64_t num = 0;
    std::uint64_t den = 1;
};
Rational forms_zero_probability(PrimeBase base, std::span<const std::vector<digit_t>> forms,
                                bool force_rank = false);

}

}
