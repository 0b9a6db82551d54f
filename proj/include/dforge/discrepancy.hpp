#pragma once

#include "dforge/digitalseq.hpp"
#include "dforge/qadic.hpp"
#include "dforge/walsh.hpp"

#include <cstdint>
#include <span>

namespace dforge {

// Unnormalized local discrepancy at the anchored box [0, x):
//   D(x, N) = #{n < N : point_n in [0, x)} - N * vol(x),
// with the volume handled in exact integer arithmetic before the one final
// division. Points and x must share base and refinement.
struct LocalValue {
    std::uint64_t count = 0;
    double value = 0.0;
};
LocalValue local_direct(std::span<const GridPoint> points, const GridPoint& x, std::uint64_t N);

// sum_{n < N} omega_q^(b . digits(n)) in closed form. b is read at positions
// 0..m-1 and m must satisfy N <= q^m; the value does not depend on which
// such m is used. Costs O(m) instead of O(N).
cplx g_factor(std::uint64_t N, std::span<const digit_t> b, int m, PrimeBase base);

// How often character_sum verifies its closed form against the direct sum.
enum class CheckMode { sampled, always };

// sum_{n < N} prod_j wal_{k_j}(x_{n,j}) computed through the combined image
// and g_factor; cross-checked against the O(N) direct product sum either
// always or on a deterministic 1-in-64 sample of calls. Disagreement beyond
// tolerance raises InternalConsistencyError.
cplx character_sum(const GeneratorTuple& T, std::span<const std::uint64_t> k, std::uint64_t N,
                   CheckMode check = CheckMode::sampled);

// D(x, N) assembled from the Walsh side: sum over nonzero frequency tuples
// k (each k_j < q^m) of prod_j J_{k_j}(x_j) times the character sum at the
// combined image. Imaginary parts must cancel to ~1e-7 or the call raises
// InternalConsistencyError. Term count q^(m s) is cost-guarded.
double local_spectral(const GeneratorTuple& T, const GridPoint& x, std::uint64_t N);

// Exact sup over all anchored boxes [0, x), x in [0,1]^s, of |D(x, N)|,
// computed by corner enumeration on the refinement grid (points lie on it,
// so the sup is attained while approaching a corner from below or above).
// Unnormalized; divide by N for the usual star discrepancy.
double star_grid(std::span<const GridPoint> points, std::uint64_t N);

}
