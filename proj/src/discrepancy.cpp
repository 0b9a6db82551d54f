#include "dforge/discrepancy.hpp"

#include "dforge/errors.hpp"

#include <atomic>
#include <cassert>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace dforge {

namespace {

using i128 = __int128;
using u128 = unsigned __int128;

u128 upow128(int q, int e) {
    u128 r = 1;
    for (int i = 0; i < e; ++i) {
        if (r > (~u128{0}) / static_cast<unsigned>(q))
            throw std::overflow_error("q^(m s) exceeds 128 bits");
        r *= static_cast<unsigned>(q);
    }
    return r;
}

void require_same_grid(const GridPoint& p, const GridPoint& x) {
    if (!(p.base == x.base) || p.m != x.m || p.s() != x.s())
        throw std::invalid_argument("points and box corner must share base, refinement, and dimension");
}

// N <= q^m without materializing q^m
bool fits_pow(std::uint64_t N, int q, int m) {
    std::uint64_t t = (N == 0) ? 0 : N - 1;
    for (int i = 0; i < m && t != 0; ++i) t /= static_cast<std::uint64_t>(q);
    return t == 0;
}

}  // namespace

LocalValue local_direct(std::span<const GridPoint> points, const GridPoint& x, std::uint64_t N) {
    if (points.size() < N)
        throw std::invalid_argument("local_direct: fewer points than N");
    const int s = x.s();
    std::uint64_t count = 0;
    for (std::uint64_t n = 0; n < N; ++n) {
        const GridPoint& p = points[n];
        require_same_grid(p, x);
        bool in = true;
        for (int j = 0; j < s && in; ++j)
            in = p.nums[static_cast<std::size_t>(j)] < x.nums[static_cast<std::size_t>(j)];
        count += in ? 1 : 0;
    }
    const u128 den = upow128(x.base.q(), x.m * s);
    u128 volnum = 1;
    for (int j = 0; j < s; ++j) volnum *= x.nums[static_cast<std::size_t>(j)];
    const i128 dev = static_cast<i128>(u128{count} * den) - static_cast<i128>(u128{N} * volnum);
    return {count, static_cast<double>(static_cast<long double>(dev) / static_cast<long double>(den))};
}

cplx g_factor(std::uint64_t N, std::span<const digit_t> b, int m, PrimeBase base) {
    const auto q = static_cast<std::uint64_t>(base.q());
    if (m < 0 || !fits_pow(N, base.q(), m))
        throw std::invalid_argument("g_factor: need N <= q^m");
    const auto widx = first_nonzero_index(b);
    if (!widx || *widx >= static_cast<std::size_t>(m)) return {static_cast<double>(N), 0.0};
    const auto w = static_cast<int>(*widx);

    const auto& om = omega_table(base);
    const DigitVec Nd = digits_of(N, base);
    std::int64_t e = 0;
    for (int i = w + 1; i < m; ++i)
        e += static_cast<std::int64_t>(i < static_cast<int>(b.size()) ? b[static_cast<std::size_t>(i)] : 0) *
             Nd.digit(static_cast<std::size_t>(i));
    const int bw = b[static_cast<std::size_t>(w)];
    const int Nw = Nd.digit(static_cast<std::size_t>(w));
    const std::uint64_t qw = upow(q, w);
    const double frac = static_cast<double>(N % qw) / static_cast<double>(qw);
    const cplx t1 = (om.root(static_cast<std::int64_t>(bw) * Nw) - 1.0) / (om.root(bw) - 1.0);
    const cplx t2 = om.root(static_cast<std::int64_t>(bw) * Nw) * frac;
    const cplx g = om.root(e) * static_cast<double>(qw) * (t1 + t2);
    assert(std::abs(g) <= static_cast<double>(q) * static_cast<double>(N) + 1e-9);
    return g;
}

cplx character_sum(const GeneratorTuple& T, std::span<const std::uint64_t> k, std::uint64_t N,
                   CheckMode check) {
    if (static_cast<int>(k.size()) != T.s)
        throw std::invalid_argument("character_sum: tuple length must equal s");
    if (!fits_pow(N, T.base.q(), T.cols))
        throw std::invalid_argument("character_sum: N exceeds q^cols");
    for (std::uint64_t kj : k)
        if (kj != 0 && length_of(kj, T.base) + 1 > T.rows)
            throw std::invalid_argument("character_sum: k_j exceeds q^rows");

    const ImageVec b = combined_image(T, k);
    const cplx closed = g_factor(N, b, T.cols, T.base);

    static std::atomic<std::uint64_t> call_count{0};
    const bool verify = check == CheckMode::always || (call_count++ % 64 == 0);
    if (verify) {
        cplx direct = 0;
        for (std::uint64_t n = 0; n < N; ++n) {
            const DigitVec nd = digits_of(n, T.base);
            cplx term = 1;
            for (int j = 0; j < T.s; ++j)
                term *= walsh_digits(k[static_cast<std::size_t>(j)],
                                     apply(T.matrices[static_cast<std::size_t>(j)], nd), T.base);
            direct += term;
        }
        const double tol = std::max(1e-9, static_cast<double>(N) * T.s * 5e-15);
        if (std::abs(direct - closed) > tol)
            throw InternalConsistencyError(
                "character_sum: closed form and direct sum disagree by " +
                std::to_string(std::abs(direct - closed)));
    }
    return closed;
}

double local_spectral(const GeneratorTuple& T, const GridPoint& x, std::uint64_t N) {
    const int s = x.s();
    if (s != T.s) throw std::invalid_argument("local_spectral: dimension mismatch");
    if (!(x.base == T.base)) throw std::invalid_argument("local_spectral: base mismatch");
    const int m = x.m;
    if (m > T.rows) throw std::invalid_argument("local_spectral: refinement exceeds matrix rows");
    const auto q = static_cast<std::uint64_t>(T.base.q());
    if (!fits_pow(N, T.base.q(), T.cols))
        throw std::invalid_argument("local_spectral: N exceeds q^cols");
    const std::uint64_t qm = upow(q, m);
    double terms = 1;
    for (int j = 0; j < s; ++j) terms *= static_cast<double>(qm);
    if (terms > static_cast<double>(cost_guard()))
        throw CostGuardError("local_spectral: q^(m s) exceeds the cost guard");

    // per-coordinate tables of J_k(x_j) and of the transposed image of k
    std::vector<std::vector<cplx>> J(static_cast<std::size_t>(s));
    std::vector<std::vector<ImageVec>> img(static_cast<std::size_t>(s));
    for (int j = 0; j < s; ++j) {
        auto& Jj = J[static_cast<std::size_t>(j)];
        auto& Ij = img[static_cast<std::size_t>(j)];
        Jj.reserve(static_cast<std::size_t>(qm));
        Ij.reserve(static_cast<std::size_t>(qm));
        for (std::uint64_t kk = 0; kk < qm; ++kk) {
            Jj.push_back(interval_coeff(kk, x.coord(j)));
            Ij.push_back(apply_transpose(T.matrices[static_cast<std::size_t>(j)],
                                         digits_of(kk, T.base)));
        }
    }

    const int qi = T.base.q();
    cplx total = 0;
    std::vector<std::uint64_t> kidx(static_cast<std::size_t>(s), 0);
    // running image partial sums, one buffer per recursion depth
    std::vector<ImageVec> partial(static_cast<std::size_t>(s) + 1,
                                  ImageVec(static_cast<std::size_t>(T.cols), 0));
    auto walk = [&](auto&& self, int j, bool all_zero, cplx coeff) -> void {
        if (coeff == cplx{0.0, 0.0}) return;
        if (j == s) {
            if (all_zero) return;
            total += coeff * g_factor(N, partial[static_cast<std::size_t>(s)], T.cols, T.base);
            return;
        }
        for (std::uint64_t kk = 0; kk < qm; ++kk) {
            const auto& add = img[static_cast<std::size_t>(j)][kk];
            auto& dst = partial[static_cast<std::size_t>(j) + 1];
            const auto& src = partial[static_cast<std::size_t>(j)];
            for (std::size_t c = 0; c < dst.size(); ++c)
                dst[c] = static_cast<digit_t>((src[c] + add[c]) % qi);
            self(self, j + 1, all_zero && kk == 0, coeff * J[static_cast<std::size_t>(j)][kk]);
        }
    };
    walk(walk, 0, true, cplx{1.0, 0.0});

    if (std::abs(total.imag()) > 1e-7 * std::max(1.0, static_cast<double>(N)))
        throw InternalConsistencyError("local_spectral: imaginary parts failed to cancel");
    return total.real();
}

double star_grid(std::span<const GridPoint> points, std::uint64_t N) {
    if (N == 0) return 0.0;
    if (points.size() < N)
        throw std::invalid_argument("star_grid: fewer points than N");
    const GridPoint& first = points[0];
    const int s = first.s();
    const int m = first.m;
    const int q = first.base.q();
    const std::uint64_t qm = upow(q, m);
    const std::uint64_t L = qm + 1;

    double total = 1;
    for (int j = 0; j < s; ++j) total *= static_cast<double>(L);
    if (total > static_cast<double>(cost_guard()))
        throw CostGuardError("star_grid: corner grid (q^m + 1)^s exceeds the cost guard");
    const auto cells = static_cast<std::size_t>(total);

    std::vector<std::size_t> stride(static_cast<std::size_t>(s));
    stride[0] = 1;
    for (int j = 1; j < s; ++j)
        stride[static_cast<std::size_t>(j)] = stride[static_cast<std::size_t>(j) - 1] * L;

    // inclusive prefix counts: P[c] = #points with num_j <= c_j for all j
    std::vector<std::uint64_t> P(cells, 0);
    for (std::uint64_t n = 0; n < N; ++n) {
        const GridPoint& p = points[n];
        require_same_grid(p, first);
        std::size_t idx = 0;
        for (int j = 0; j < s; ++j)
            idx += static_cast<std::size_t>(p.nums[static_cast<std::size_t>(j)]) *
                   stride[static_cast<std::size_t>(j)];
        ++P[idx];
    }
    for (int j = 0; j < s; ++j) {
        const std::size_t st = stride[static_cast<std::size_t>(j)];
        for (std::size_t i = 0; i < cells; ++i)
            if ((i / st) % L != 0) P[i] += P[i - st];
    }

    const u128 den = upow128(q, m * s);
    i128 best = 0;
    std::vector<std::uint64_t> c(static_cast<std::size_t>(s), 0);
    for (;;) {
        u128 volnum = 1;
        for (int j = 0; j < s; ++j) volnum *= c[static_cast<std::size_t>(j)];
        const i128 nv = static_cast<i128>(u128{N} * volnum);

        // approaching the corner from above the count is the closed-box count
        std::size_t closed_idx = 0;
        for (int j = 0; j < s; ++j)
            closed_idx += static_cast<std::size_t>(c[static_cast<std::size_t>(j)]) *
                          stride[static_cast<std::size_t>(j)];
        const i128 closed = static_cast<i128>(u128{P[closed_idx]} * den) - nv;
        if (closed > best) best = closed;

        bool open_ok = true;
        std::size_t open_idx = 0;
        for (int j = 0; j < s && open_ok; ++j) {
            const std::uint64_t cj = c[static_cast<std::size_t>(j)];
            if (cj == 0) open_ok = false;
            else open_idx += static_cast<std::size_t>(cj - 1) * stride[static_cast<std::size_t>(j)];
        }
        const i128 open_count = open_ok ? static_cast<i128>(u128{P[open_idx]} * den) : 0;
        const i128 deficit = nv - open_count;
        if (deficit > best) best = deficit;

        // odometer advance over [0, L)^s
        int j = 0;
        for (; j < s; ++j) {
            if (++c[static_cast<std::size_t>(j)] < L) break;
            c[static_cast<std::size_t>(j)] = 0;
        }
        if (j == s) break;
    }
    return static_cast<double>(static_cast<long double>(best) / static_cast<long double>(den));
}

}
