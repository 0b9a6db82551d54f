#include "dforge/metric.hpp"

#include "dforge/errors.hpp"
#include "dforge/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace dforge {

namespace {

// n <= q^m, decided by repeated division so q^m is never materialized.
bool fits_pow(std::uint64_t n, int q, int m) {
    if (n <= 1) return true;
    std::uint64_t r = n - 1;
    for (int i = 0; i < m && r > 0; ++i) r /= static_cast<std::uint64_t>(q);
    return r == 0;
}

std::uint64_t guarded_mul_pow(std::uint64_t acc, std::uint64_t f, int e, const char* what) {
    const unsigned long long guard = cost_guard();
    for (int i = 0; i < e; ++i) {
        if (acc > guard / f) throw CostGuardError(std::string(what) + " exceeds the cost guard");
        acc *= f;
    }
    return acc;
}

int inv_mod(int a, int q) {
    a %= q;
    for (int c = 1; c < q; ++c)
        if (a * c % q == 1) return c;
    throw std::invalid_argument("inv_mod: not invertible");
}

}

int PTuple::sum_r() const {
    int t = 0;
    for (const auto& c : coords) t += c.a - 1;
    return t;
}

std::uint64_t PTuple::k(int j) const {
    const auto& c = coords[static_cast<std::size_t>(j)];
    return upow(static_cast<std::uint64_t>(base.q()), c.a - 1) + c.ell;
}

PEnumerator::PEnumerator(PrimeBase base, int s, int r_max) : base_(base), s_(s), r_max_(r_max) {
    if (s < 1) throw std::invalid_argument("enumerate_p: s must be positive");
    if (r_max < 0) throw std::invalid_argument("enumerate_p: r_max must be nonnegative");
    r_.assign(static_cast<std::size_t>(s), 0);
    ell_.assign(static_cast<std::size_t>(s), 0);
}

void PEnumerator::start_level() {
    std::fill(r_.begin(), r_.end(), 0);
    r_.back() = level_;
    std::fill(ell_.begin(), ell_.end(), 0);
    level_open_ = true;
}

bool PEnumerator::advance_ell() {
    const auto q = static_cast<std::uint64_t>(base_.q());
    for (int j = s_ - 1; j >= 0; --j) {
        const auto ju = static_cast<std::size_t>(j);
        if (++ell_[ju] < upow(q, r_[ju])) return true;
        ell_[ju] = 0;
    }
    return false;
}

bool PEnumerator::advance_composition() {
    int pivot = -1;
    for (int j = s_ - 1; j >= 1; --j) {
        if (r_[static_cast<std::size_t>(j)] > 0) {
            pivot = j - 1;
            break;
        }
    }
    if (pivot < 0) return false;
    int rem = 0;
    for (int j = pivot + 1; j < s_; ++j) {
        rem += r_[static_cast<std::size_t>(j)];
        r_[static_cast<std::size_t>(j)] = 0;
    }
    r_[static_cast<std::size_t>(pivot)] += 1;
    r_[static_cast<std::size_t>(s_ - 1)] = rem - 1;
    std::fill(ell_.begin(), ell_.end(), 0);
    return true;
}

std::optional<PTuple> PEnumerator::next() {
    for (;;) {
        if (level_ > r_max_) return std::nullopt;
        if (!level_open_) {
            start_level();
        } else if (!advance_ell() && !advance_composition()) {
            ++level_;
            level_open_ = false;
            continue;
        }
        if (level_ == 0) continue;  // the lone sum-zero tuple is all-ones, excluded
        PTuple t{base_, {}};
        t.coords.reserve(static_cast<std::size_t>(s_));
        for (int j = 0; j < s_; ++j)
            t.coords.push_back({r_[static_cast<std::size_t>(j)] + 1, ell_[static_cast<std::size_t>(j)]});
        return t;
    }
}

StarIndex::StarIndex(PrimeBase base_, int a_star_, std::uint64_t ell_star_)
    : base(base_), a_star(a_star_), ell_star(ell_star_) {
    if (a_star < 3) throw std::invalid_argument("StarIndex: a* must be at least 3");
    if (ell_star >= upow(static_cast<std::uint64_t>(base.q()), a_star - 2))
        throw std::invalid_argument("StarIndex: ell* must lie below q^(a*-2)");
}

std::uint64_t StarIndex::k_star() const {
    const auto q = static_cast<std::uint64_t>(base.q());
    return upow(q, a_star - 1) + upow(q, a_star - 2) + ell_star;
}

std::uint64_t StarIndex::k_tilde() const {
    return upow(static_cast<std::uint64_t>(base.q()), a_star - 2) + ell_star;
}

StarIndex star_from_p(const PTuple& t, int j) {
    if (j < 0 || j >= t.s()) throw std::out_of_range("star_from_p: coordinate out of range");
    const auto& c = t.coords[static_cast<std::size_t>(j)];
    if (c.a < 2) throw std::invalid_argument("star_from_p: coordinate needs length at least 1");
    return StarIndex(t.base, c.a + 1, c.ell);
}

long double f_exponent(std::span<const int> r, PrimeBase base) {
    if (r.empty()) throw std::invalid_argument("f_exponent: empty length vector");
    long long total = 0;
    for (int v : r) {
        if (v < 0) throw std::invalid_argument("f_exponent: lengths must be nonnegative");
        total += v;
    }
    if (total < 2) throw std::invalid_argument("f_exponent: total length must be at least 2");
    const auto T = static_cast<long double>(total);
    const long double lq = std::log(static_cast<long double>(base.q()));
    return T + static_cast<long double>(r.size()) * std::log(T) / lq + std::log(std::log(T)) / lq;
}

int f_floor(std::span<const int> r, PrimeBase base) {
    const long double F = f_exponent(r, base);
    long long total = 0;
    for (int v : r) total += v;
    const auto q = static_cast<long double>(base.q());
    const auto T = static_cast<long double>(total);
    const long double target = std::pow(T, static_cast<long double>(r.size())) * std::log(T);
    // largest m with q^(m - total) <= T^s ln T; start from the float floor and
    // settle ties explicitly so rounding in F cannot shift the result
    int m = static_cast<int>(std::floor(F));
    while (std::pow(q, static_cast<long double>(m - total)) > target) --m;
    while (std::pow(q, static_cast<long double>(m + 1 - total)) <= target) ++m;
    return m;
}

std::uint64_t beta_shift(int a_star, std::uint64_t u, PrimeBase base) {
    if (a_star < 3) throw std::invalid_argument("beta_shift: a* must be at least 3");
    const auto q = static_cast<std::uint64_t>(base.q());
    if (u == 0) return 0;
    if (u == 1) return upow(q, a_star - 1);
    const std::uint64_t t = (u - 2) / (q - 1);
    const std::uint64_t kappa = u - 1 - t * (q - 1);
    return upow(q, a_star - 1) + kappa * upow(q, a_star + static_cast<int>(t));
}

cplx theta(std::uint64_t k, const StarIndex& star, int m) {
    const int q = star.base.q();
    const int a = star.a_star;
    if (m < a) throw std::invalid_argument("theta: refinement m must be at least a*");
    const std::uint64_t qm = upow(static_cast<std::uint64_t>(q), m);
    if (k >= qm) throw std::invalid_argument("theta: k must lie below q^m");
    const auto& om = omega_table(star.base);
    const std::uint64_t ks = star.k_star();
    const double qa = static_cast<double>(upow(static_cast<std::uint64_t>(q), a));
    if (k == ks) {
        const cplx edge = 0.5 + 1.0 / (om.root(-1) - 1.0);
        return edge / qa - 1.0 / (2.0 * static_cast<double>(qm));
    }
    if (k == star.k_tilde()) return 1.0 / (qa * (om.root(1) - 1.0));
    if (k > ks) {
        std::uint64_t d = k - ks;
        int p = 0;
        while (d % q == 0) {
            d /= static_cast<std::uint64_t>(q);
            ++p;
        }
        if (d < static_cast<std::uint64_t>(q) && p >= a) {
            const double qp = static_cast<double>(qa) * std::pow(static_cast<double>(q), p + 1 - a);
            return 1.0 / (qp * (1.0 - om.root(-static_cast<std::int64_t>(d))));
        }
    }
    return cplx{0.0, 0.0};
}

double theta_envelope_constant(PrimeBase base) {
    const int q = base.q();
    const double anchor = 1.0 / (2.0 * std::sin(std::numbers::pi / q));
    const auto& om = omega_table(base);
    const cplx edge = 0.5 + 1.0 / (om.root(-1) - 1.0);
    const double first = (std::abs(edge) + 0.5) * std::pow(static_cast<double>(q), 1.0 / q);
    return std::max(anchor, first);
}

namespace {

std::pair<cplx, GridScan> lambda_impl(const GeneratorTuple& T, std::span<const StarIndex> stars,
                                      std::uint64_t N, int m, bool scan) {
    const int s = T.s;
    const int q = T.base.q();
    if (static_cast<int>(stars.size()) != s)
        throw std::invalid_argument("lambda: one star index per coordinate required");
    for (const auto& st : stars) {
        if (!(st.base == T.base)) throw std::invalid_argument("lambda: base mismatch");
        if (st.a_star > m) throw std::invalid_argument("lambda: a* exceeds the refinement m");
    }
    if (m < 1 || m > T.rows)
        throw std::invalid_argument("lambda: refinement must satisfy 1 <= m <= rows");
    if (!fits_pow(N, q, T.cols)) throw std::invalid_argument("lambda: N exceeds q^cols");

    const std::uint64_t L = guarded_mul_pow(1, static_cast<std::uint64_t>(q), m, "lambda: grid size");
    const std::uint64_t total = guarded_mul_pow(1, L, s, "lambda: grid size");

    // histogram of the first N points, then inclusive prefix counts per axis
    std::vector<std::uint64_t> pref(total, 0);
    for (std::uint64_t n = 0; n < N; ++n) {
        const GridPoint pt = point(T, n, m);
        std::uint64_t idx = 0;
        for (int j = 0; j < s; ++j) idx = idx * L + pt.nums[static_cast<std::size_t>(j)];
        ++pref[idx];
    }
    std::uint64_t stride = 1;
    for (int axis = s - 1; axis >= 0; --axis) {
        for (std::uint64_t idx = 0; idx < total; ++idx)
            if ((idx / stride) % L > 0) pref[idx] += pref[idx - stride];
        stride *= L;
    }

    std::vector<std::vector<cplx>> wal(static_cast<std::size_t>(s));
    for (int j = 0; j < s; ++j) {
        auto& w = wal[static_cast<std::size_t>(j)];
        w.resize(L);
        const std::uint64_t kj = stars[j].k_star();
        for (std::uint64_t c = 0; c < L; ++c) w[c] = walsh(kj, GridCoordinate(T.base, m, c));
    }

    // every corner with a zero coordinate has an empty box and contributes
    // nothing, so only c = d + 1 with d in [0, L-1)^s is walked
    const auto den = static_cast<__int128>(total);
    cplx acc{0.0, 0.0};
    GridScan gs;
    __int128 best = -1;
    std::vector<std::uint64_t> d(static_cast<std::size_t>(s), 0);
    for (;;) {
        std::uint64_t idx = 0;
        __int128 vol = 1;
        for (int j = 0; j < s; ++j) {
            idx = idx * L + d[static_cast<std::size_t>(j)];
            vol *= static_cast<__int128>(d[static_cast<std::size_t>(j)] + 1);
        }
        const __int128 dev = static_cast<__int128>(pref[idx]) * den - static_cast<__int128>(N) * vol;
        if (dev != 0) {
            cplx w{1.0, 0.0};
            for (int j = 0; j < s; ++j) w *= wal[static_cast<std::size_t>(j)][d[static_cast<std::size_t>(j)] + 1];
            acc += static_cast<double>(static_cast<long double>(dev) / static_cast<long double>(den)) * w;
        }
        if (scan) {
            const __int128 mag = dev < 0 ? -dev : dev;
            if (mag > best) {
                best = mag;
                gs.argmax.resize(static_cast<std::size_t>(s));
                for (int j = 0; j < s; ++j) gs.argmax[static_cast<std::size_t>(j)] = d[static_cast<std::size_t>(j)] + 1;
            }
        }
        int j = s - 1;
        for (; j >= 0; --j) {
            if (++d[static_cast<std::size_t>(j)] < L - 1) break;
            d[static_cast<std::size_t>(j)] = 0;
        }
        if (j < 0) break;
    }
    acc /= static_cast<double>(static_cast<long double>(den));
    if (scan && best >= 0) gs.max_abs = static_cast<double>(static_cast<long double>(best) / static_cast<long double>(den));
    return {acc, gs};
}

}

cplx lambda_direct(const GeneratorTuple& T, std::span<const StarIndex> stars, std::uint64_t N, int m) {
    return lambda_impl(T, stars, N, m, false).first;
}

std::pair<cplx, GridScan> lambda_direct_scan(const GeneratorTuple& T, std::span<const StarIndex> stars,
                                             std::uint64_t N, int m) {
    return lambda_impl(T, stars, N, m, true);
}

LambdaParts lambda_spectral(const GeneratorTuple& T, std::span<const StarIndex> stars,
                            std::uint64_t N, int m, int J) {
    const int s = T.s;
    const int q = T.base.q();
    if (static_cast<int>(stars.size()) != s)
        throw std::invalid_argument("lambda: one star index per coordinate required");
    if (m < 1 || m > T.rows)
        throw std::invalid_argument("lambda: refinement must satisfy 1 <= m <= rows");
    if (!fits_pow(N, q, T.cols)) throw std::invalid_argument("lambda: N exceeds q^cols");
    if (J < 0) throw std::invalid_argument("lambda: J must be nonnegative");
    for (const auto& st : stars) {
        if (!(st.base == T.base)) throw std::invalid_argument("lambda: base mismatch");
        if (st.a_star > m) throw std::invalid_argument("lambda: a* exceeds the refinement m");
    }

    // per coordinate: every shift u whose index k~ + beta(u) stays below q^m,
    // with its theta weight and its transposed image
    struct Shift {
        std::uint64_t u;
        cplx th;
        ImageVec img;
    };
    std::vector<std::vector<Shift>> sh(static_cast<std::size_t>(s));
    for (int j = 0; j < s; ++j) {
        const auto& st = stars[j];
        const int a = st.a_star;
        const std::uint64_t umax =
            a <= m - 1 ? 1 + static_cast<std::uint64_t>(m - a) * static_cast<std::uint64_t>(q - 1) : 1;
        for (std::uint64_t u = 0; u <= umax; ++u) {
            const std::uint64_t k = st.k_tilde() + beta_shift(a, u, T.base);
            sh[static_cast<std::size_t>(j)].push_back(
                {u, theta(k, st, m), apply_transpose(T.matrices[static_cast<std::size_t>(j)], digits_of(k, T.base))});
        }
    }

    std::uint64_t lattice = 1;
    for (int j = 0; j < s; ++j)
        lattice = guarded_mul_pow(lattice, sh[static_cast<std::size_t>(j)].size(), 1, "lambda: shift lattice");
    (void)lattice;

    LambdaParts out{};
    std::vector<std::size_t> iu(static_cast<std::size_t>(s), 0);
    std::vector<digit_t> img(static_cast<std::size_t>(T.cols), 0);
    for (;;) {
        std::fill(img.begin(), img.end(), 0);
        cplx thp{1.0, 0.0};
        bool zero_u = true;
        bool within = true;
        for (int j = 0; j < s; ++j) {
            const Shift& e = sh[static_cast<std::size_t>(j)][iu[static_cast<std::size_t>(j)]];
            thp *= e.th;
            zero_u = zero_u && e.u == 0;
            within = within && e.u <= static_cast<std::uint64_t>(J);
            for (int i = 0; i < T.cols; ++i) {
                const auto iu_ = static_cast<std::size_t>(i);
                img[iu_] = static_cast<digit_t>((img[iu_] + e.img[iu_]) % q);
            }
        }
        const cplx term = thp * g_factor(N, img, T.cols, T.base);
        if (zero_u)
            out.main += term;
        else if (within)
            out.mid += term;
        else
            out.tail_exact += term;
        int j = s - 1;
        for (; j >= 0; --j) {
            if (++iu[static_cast<std::size_t>(j)] < sh[static_cast<std::size_t>(j)].size()) break;
            iu[static_cast<std::size_t>(j)] = 0;
        }
        if (j < 0) break;
    }
    out.lambda = out.main + out.mid + out.tail_exact;

    // analytic envelope for the whole lattice outside [0, J]^s: each factor
    // obeys |theta| <= c4 q^(-a*) q^(-u/q) and |G| <= qN
    const double c4 = theta_envelope_constant(T.base);
    const long double x = std::pow(static_cast<long double>(q), -1.0L / q);
    const long double w_full = 1.0L / (1.0L - x);
    const long double w_box = (1.0L - std::pow(x, static_cast<long double>(J) + 1.0L)) / (1.0L - x);
    long double a_sum = 0;
    for (const auto& st : stars) a_sum += st.a_star;
    const long double envelope = std::pow(static_cast<long double>(c4), static_cast<long double>(s)) *
                                 static_cast<long double>(q) * static_cast<long double>(N) *
                                 std::pow(static_cast<long double>(q), -a_sum) *
                                 (std::pow(w_full, static_cast<long double>(s)) -
                                  std::pow(w_box, static_cast<long double>(s)));
    out.tail_bound = static_cast<double>(envelope);
    return out;
}

namespace detail {

Rational forms_zero_probability(PrimeBase base, std::span<const std::vector<digit_t>> forms,
                                bool force_rank) {
    const int q = base.q();
    if (forms.empty()) return {1, 1};
    std::size_t width = 0;
    for (const auto& f : forms) width = std::max(width, f.size());

    // keep only the variables some form actually touches
    std::vector<std::vector<int>> cols;
    for (std::size_t b = 0; b < width; ++b) {
        std::vector<int> col(forms.size(), 0);
        bool nz = false;
        for (std::size_t f = 0; f < forms.size(); ++f) {
            const int c = b < forms[f].size() ? forms[f][b] % q : 0;
            col[f] = c;
            nz = nz || c != 0;
        }
        if (nz) cols.push_back(std::move(col));
    }
    const std::size_t V = cols.size();
    const std::size_t R = forms.size();
    if (V == 0) return {1, 1};

    std::uint64_t space = 1;
    bool enumerable = !force_rank;
    for (std::size_t v = 0; v < V && enumerable; ++v) {
        if (space > (1ull << 21) / static_cast<std::uint64_t>(q))
            enumerable = false;
        else
            space *= static_cast<std::uint64_t>(q);
    }

    if (enumerable) {
        // odometer over assignments with running form values; a wrapped digit
        // has absorbed q increments, which cancel mod q on their own
        std::vector<int> x(V, 0), sums(R, 0);
        std::uint64_t hits = 0;
        std::uint64_t remaining = space;
        for (;;) {
            bool allz = true;
            for (std::size_t f = 0; f < R; ++f)
                if (sums[f] != 0) {
                    allz = false;
                    break;
                }
            if (allz) ++hits;
            if (--remaining == 0) break;
            for (std::size_t v = V; v-- > 0;) {
                for (std::size_t f = 0; f < R; ++f) sums[f] = (sums[f] + cols[v][f]) % q;
                if (++x[v] < q) break;
                x[v] = 0;
            }
        }
        const std::uint64_t g = std::gcd(hits, space);
        return {hits / g, space / g};
    }

    // rank over Z_q: the solution space of a rank-r system has q^(V-r) points
    std::vector<std::vector<int>> rows(R, std::vector<int>(V, 0));
    for (std::size_t v = 0; v < V; ++v)
        for (std::size_t f = 0; f < R; ++f) rows[f][v] = cols[v][f];
    int rank = 0;
    std::size_t lead = 0;
    for (std::size_t f = 0; f < R && lead < V; ++lead) {
        std::size_t piv = f;
        while (piv < R && rows[piv][lead] == 0) ++piv;
        if (piv == R) continue;
        std::swap(rows[f], rows[piv]);
        const int inv = inv_mod(rows[f][lead], q);
        for (std::size_t v = lead; v < V; ++v) rows[f][v] = rows[f][v] * inv % q;
        for (std::size_t g = 0; g < R; ++g) {
            if (g == f || rows[g][lead] == 0) continue;
            const int c = rows[g][lead];
            for (std::size_t v = lead; v < V; ++v)
                rows[g][v] = ((rows[g][v] - c * rows[f][v]) % q + q) % q;
        }
        ++rank;
        ++f;
    }
    return {1, upow(static_cast<std::uint64_t>(q), rank)};
}

}

namespace {

detail::Rational rational_mul_pow(detail::Rational acc, detail::Rational p, int e, const char* what) {
    if (e > 0 && p.num == 0) return {0, 1};
    for (int i = 0; i < e; ++i) {
        if ((p.num > 1 && acc.num > UINT64_MAX / p.num) || (p.den > 1 && acc.den > UINT64_MAX / p.den))
            throw std::overflow_error(std::string(what) + ": exact probability overflows");
        acc.num *= p.num;
        acc.den *= p.den;
    }
    const std::uint64_t g = std::gcd(acc.num, acc.den);
    if (g > 1) {
        acc.num /= g;
        acc.den /= g;
    }
    return acc;
}

MeasureResult finish_exact(detail::Rational p) {
    MeasureResult r;
    r.exact = true;
    r.num = p.num;
    r.den = p.den;
    r.estimate = static_cast<double>(static_cast<long double>(p.num) / static_cast<long double>(p.den));
    return r;
}

MeasureResult finish_montecarlo(std::uint64_t hits, std::uint64_t trials) {
    MeasureResult r;
    r.trials = trials;
    r.estimate = static_cast<double>(hits) / static_cast<double>(trials);
    r.stderr_value = std::sqrt(r.estimate * (1.0 - r.estimate) / static_cast<double>(trials));
    return r;
}

}

MeasureResult measure_mm(PrimeBase base, int s, int m, std::span<const std::uint64_t> k,
                         MeasureMode mode, std::uint64_t trials, std::uint64_t seed,
                         std::uint64_t stream) {
    if (s < 1 || static_cast<int>(k.size()) != s)
        throw std::invalid_argument("measure_mm: k needs one entry per coordinate");
    if (m < 1) throw std::invalid_argument("measure_mm: m must be positive");
    const int q = base.q();

    // one linear form per image component, identical across the m-1
    // constrained components because the matrix entries are disjoint
    std::vector<digit_t> form;
    for (int j = 0; j < s; ++j) {
        const DigitVec d = digits_of(k[static_cast<std::size_t>(j)], base);
        form.insert(form.end(), d.digits().begin(), d.digits().end());
    }

    if (mode == MeasureMode::exhaustive) {
        const std::vector<std::vector<digit_t>> forms{form};
        const detail::Rational p = detail::forms_zero_probability(base, forms);
        return finish_exact(rational_mul_pow({1, 1}, p, m - 1, "measure_mm"));
    }

    if (trials == 0) throw std::invalid_argument("measure_mm: montecarlo needs at least one trial");
    std::uint64_t hits = 0;
    const CounterRng root(seed, stream);
    for (std::uint64_t t = 0; t < trials; ++t) {
        CounterRng rng = root.substream(t);
        bool ok = true;
        for (int c = 0; c + 1 < m && ok; ++c) {
            int sum = 0;
            for (const digit_t coef : form) sum = (sum + coef * rng.digit(q)) % q;
            ok = sum == 0;
        }
        hits += ok ? 1 : 0;
    }
    return finish_montecarlo(hits, trials);
}

double walsh_matrix_integral(PrimeBase base, std::uint64_t i, std::span<const std::uint64_t> k) {
    const int q = base.q();
    const DigitVec id = digits_of(i, base);
    for (const std::uint64_t kj : k) {
        const DigitVec kd = digits_of(kj, base);
        for (const digit_t ka : kd.digits())
            for (const digit_t ib : id.digits())
                if (ka * ib % q != 0) return 0.0;
    }
    return 1.0;
}

double paired_integral(PrimeBase base, std::uint64_t i, std::uint64_t j,
                       std::span<const std::uint64_t> k, std::span<const std::uint64_t> l) {
    if (k.empty() || k.size() != l.size())
        throw std::invalid_argument("paired_integral: k and l must be nonempty and equally long");
    const int q = base.q();
    const DigitVec id = digits_of(i, base);
    const DigitVec jd = digits_of(j, base);

    // digit condition: every cross term k_{u,a} i_b + l_{u,a} j_b must vanish
    double direct = 1.0;
    const std::size_t blen = std::max(id.size(), jd.size());
    for (std::size_t u = 0; u < k.size() && direct != 0.0; ++u) {
        const DigitVec kd = digits_of(k[u], base);
        const DigitVec ld = digits_of(l[u], base);
        const std::size_t alen = std::max(kd.size(), ld.size());
        for (std::size_t a = 0; a < alen && direct != 0.0; ++a)
            for (std::size_t b = 0; b < blen; ++b)
                if ((kd.digit(a) * id.digit(b) + ld.digit(a) * jd.digit(b)) % q != 0) {
                    direct = 0.0;
                    break;
                }
    }

    // case split: trivial factors, or a proportionality l -> c k paired with
    // the opposite scaling i -> -c j
    bool zk = true, zl = true;
    for (const auto v : k) zk = zk && v == 0;
    for (const auto v : l) zl = zl && v == 0;
    const bool zi = i == 0, zj = j == 0;
    double split = 0.0;
    if ((zi && zj) || (zk && zl) || (zi && zl) || (zj && zk)) {
        split = 1.0;
    } else {
        for (int c = 1; c < q && split == 0.0; ++c) {
            bool ok = true;
            for (std::size_t u = 0; u < k.size() && ok; ++u)
                ok = digits_of(k[u], base) == scalar_mul(c, digits_of(l[u], base));
            if (ok && jd == scalar_mul(q - c, id)) split = 1.0;
        }
    }
    if (direct != split)
        throw InternalConsistencyError("paired_integral: digit condition and case split disagree");
    return direct;
}

MeasureResult joint_measure(const PTuple& k, std::span<const std::uint64_t> shifts, MeasureMode mode,
                            std::uint64_t trials, std::uint64_t seed, std::uint64_t stream) {
    const int s = k.s();
    if (s < 1) throw std::invalid_argument("joint_measure: empty tuple");
    if (static_cast<int>(shifts.size()) != s)
        throw std::invalid_argument("joint_measure: one shift per coordinate required");
    const PrimeBase base = k.base;
    const int q = base.q();
    const int m = k.sum_r();
    if (m < 2) throw std::invalid_argument("joint_measure: total length must be at least 2");
    bool any = false;
    for (int j = 0; j < s; ++j) {
        if (shifts[j] == 0) continue;
        any = true;
        if (shifts[j] % upow(static_cast<std::uint64_t>(q), k.coords[static_cast<std::size_t>(j)].a) != 0)
            throw std::invalid_argument("joint_measure: shift digits must sit strictly above the index digits");
    }
    if (!any) throw std::invalid_argument("joint_measure: at least one shift must be nonzero");
    const int m2 = m / 2;

    // aligned coefficient rows over the shared variable blocks
    std::vector<digit_t> f1, f2;
    for (int j = 0; j < s; ++j) {
        const DigitVec kd = digits_of(k.k(j), base);
        const DigitVec sd = digits_of(k.k(j) + shifts[static_cast<std::size_t>(j)], base);
        const std::size_t w = std::max(kd.size(), sd.size());
        for (std::size_t i = 0; i < w; ++i) {
            f1.push_back(kd.digit(i));
            f2.push_back(sd.digit(i));
        }
    }

    if (mode == MeasureMode::exhaustive) {
        const std::vector<std::vector<digit_t>> pair{f1, f2};
        const std::vector<std::vector<digit_t>> single{f1};
        const detail::Rational pp = detail::forms_zero_probability(base, pair);
        const detail::Rational ps = detail::forms_zero_probability(base, single);
        // components 0 .. m2-2 constrain both images, m2-1 .. m-2 only the first
        detail::Rational acc = rational_mul_pow({1, 1}, pp, m2 - 1, "joint_measure");
        if (acc.num != 0) acc = rational_mul_pow(acc, ps, m - m2, "joint_measure");
        return finish_exact(acc);
    }

    if (trials == 0) throw std::invalid_argument("joint_measure: montecarlo needs at least one trial");
    std::uint64_t hits = 0;
    const CounterRng root(seed, stream);
    for (std::uint64_t t = 0; t < trials; ++t) {
        CounterRng rng = root.substream(t);
        bool ok = true;
        for (int c = 0; c + 1 < m && ok; ++c) {
            int s1 = 0, s2 = 0;
            for (std::size_t v = 0; v < f1.size(); ++v) {
                const int e = rng.digit(q);
                s1 = (s1 + f1[v] * e) % q;
                s2 = (s2 + f2[v] * e) % q;
            }
            ok = s1 == 0 && (c + 1 >= m2 || s2 == 0);
        }
        hits += ok ? 1 : 0;
    }
    return finish_montecarlo(hits, trials);
}

std::optional<WitnessReport> witness_search(const GeneratorTuple& T, int s, PrimeBase base,
                                            int r_min, int r_max, int J, bool scan) {
    if (!(T.base == base)) throw std::invalid_argument("witness_search: base mismatch");
    if (T.s != s) throw std::invalid_argument("witness_search: coordinate count mismatch");
    if (s < 1) throw std::invalid_argument("witness_search: s must be positive");
    if (J < 0) throw std::invalid_argument("witness_search: J must be nonnegative");
    if (r_max < r_min) throw std::invalid_argument("witness_search: empty length range");
    const int q = base.q();
    // the depth threshold needs total length >= 2, and a star index per
    // coordinate needs every individual length >= 1
    const int r_lo = std::max(r_min, 2);

    PEnumerator en(base, s, r_max);
    std::vector<int> rv(static_cast<std::size_t>(s), 0);
    std::vector<std::uint64_t> kt(static_cast<std::size_t>(s), 0);
    while (auto t = en.next()) {
        bool usable = t->sum_r() >= r_lo;
        for (int j = 0; usable && j < s; ++j) usable = t->r(j) >= 1;
        if (!usable) continue;

        for (int j = 0; j < s; ++j) rv[static_cast<std::size_t>(j)] = t->r(j);
        const long double F = f_exponent(rv, base);
        const int m = f_floor(rv, base);
        // the test character k* = q^(a*-1) + ... must fit the refinement-m
        // window, or the correlation cannot be formed; small tuples sit below
        // that regime and are never candidates
        bool window = true;
        for (int j = 0; window && j < s; ++j)
            window = t->coords[static_cast<std::size_t>(j)].a + 1 <= m;
        if (!window) continue;
        if (m > T.cols || m > T.rows)
            throw std::invalid_argument("witness_search: truncation too small for depth m = " +
                                        std::to_string(m));
        for (int j = 0; j < s; ++j) {
            const int a = t->coords[static_cast<std::size_t>(j)].a + 1;
            int top = a - 1;
            if (J >= 2) top = std::max(top, a + (J - 2) / (q - 1));
            if (top >= T.rows)
                throw std::invalid_argument("witness_search: truncation too small for the shift window");
        }

        for (int j = 0; j < s; ++j) kt[static_cast<std::size_t>(j)] = t->k(j);
        const ImageVec img = combined_image(T, kt);
        if (!nu1_at_most(img, m)) continue;

        // every shifted image must come back shallow: first nonzero component
        // within depth sum_r / 2
        const int half = t->sum_r();
        bool shallow = true;
        std::vector<std::uint64_t> u(static_cast<std::size_t>(s), 0);
        std::vector<std::uint64_t> shifted(static_cast<std::size_t>(s), 0);
        for (;;) {
            int j = s - 1;
            for (; j >= 0; --j) {
                if (++u[static_cast<std::size_t>(j)] <= static_cast<std::uint64_t>(J)) break;
                u[static_cast<std::size_t>(j)] = 0;
            }
            if (j < 0) break;
            for (int jj = 0; jj < s; ++jj)
                shifted[static_cast<std::size_t>(jj)] =
                    kt[static_cast<std::size_t>(jj)] +
                    beta_shift(t->coords[static_cast<std::size_t>(jj)].a + 1, u[static_cast<std::size_t>(jj)], base);
            const auto idx = first_nonzero_index(combined_image(T, shifted));
            if (!idx || 2 * static_cast<int>(*idx + 1) > half) {
                shallow = false;
                break;
            }
        }
        if (!shallow) continue;

        WitnessReport rep{T.provenance, *t};
        const auto deep = first_nonzero_index(img);
        if (deep) rep.valuation = static_cast<int>(*deep + 1);
        rep.F = F;
        rep.m = m;
        rep.N = upow(static_cast<std::uint64_t>(q), m - 1);

        std::vector<StarIndex> stars;
        stars.reserve(static_cast<std::size_t>(s));
        for (int j = 0; j < s; ++j) stars.push_back(star_from_p(*t, j));

        const LambdaParts lp = lambda_spectral(T, stars, rep.N, m, J);
        rep.lambda = lp.lambda;
        rep.main = lp.main;
        rep.mid = lp.mid;
        rep.tail_exact = lp.tail_exact;
        rep.tail_bound = lp.tail_bound;
        rep.certified = std::abs(lp.lambda);

        cplx direct;
        if (scan) {
            auto [ld, gs] = lambda_direct_scan(T, stars, rep.N, m);
            direct = ld;
            rep.scanned = true;
            rep.max_abs_d = gs.max_abs;
            rep.argmax = std::move(gs.argmax);
        } else {
            direct = lambda_direct(T, stars, rep.N, m);
        }
        if (std::abs(direct - lp.lambda) > 1e-7)
            throw InternalConsistencyError("witness_search: spectral and direct averages disagree");
        if (rep.scanned && rep.max_abs_d + 1e-9 < rep.certified)
            throw InternalConsistencyError("witness_search: grid maximum fell below the certified average");

        if (rep.N >= 3) {
            const double ln_n = std::log(static_cast<double>(rep.N));
            const double pred = std::pow(ln_n, s) * std::log(ln_n);
            rep.predictor = pred;
            if (pred > 0) rep.ratio = rep.certified / pred;
        }
        return rep;
    }
    return std::nullopt;
}

}
