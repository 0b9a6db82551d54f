// Command-line front end: point generation, discrepancy tables, verification
// suites, the witness pipeline, and measure experiments. Data goes to --out
// (or stdout) as CSV or JSON; diagnostics go to stderr. All randomness flows
// from --seed/--stream.

#include "CLI11.hpp"
#include "json.hpp"

#include "dforge/digitalseq.hpp"
#include "dforge/discrepancy.hpp"
#include "dforge/errors.hpp"
#include "dforge/metric.hpp"
#include "dforge/qadic.hpp"
#include "dforge/rng.hpp"
#include "dforge/version.hpp"
#include "dforge/walsh.hpp"

#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using nlohmann::json;
using namespace dforge;

namespace {

std::string fmt12(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

// ordered key/value config echo, rendered as '#' lines (CSV) or an object
struct ConfigEcho {
    std::vector<std::pair<std::string, std::string>> kv;

    void add(const std::string& k, const std::string& v) { kv.emplace_back(k, v); }
    void add(const std::string& k, std::uint64_t v) { add(k, std::to_string(v)); }
    void add(const std::string& k, int v) { add(k, std::to_string(v)); }
    void add(const std::string& k, bool v) { add(k, std::string(v ? "true" : "false")); }

    void csv_header(std::ostream& os) const {
        os << "# dforge " << kVersion << "\n";
        for (const auto& [k, v] : kv) os << "# " << k << ": " << v << "\n";
    }
    json to_json() const {
        json j;
        for (const auto& [k, v] : kv) j[k] = v;
        return j;
    }
};

struct Sink {
    std::ofstream file;
    bool to_file = false;

    explicit Sink(const std::string& out) {
        if (!out.empty()) {
            file.open(out, std::ios::binary);
            if (!file) throw std::runtime_error("cannot open output file: " + out);
            to_file = true;
        }
    }
    std::ostream& stream() { return to_file ? static_cast<std::ostream&>(file) : std::cout; }
};

// json with the artifact header block in front
json with_header(const std::string& command, const ConfigEcho& cfg) {
    json j;
    j["artifact"] = {{"name", "dforge"}, {"version", kVersion}};
    j["command"] = command;
    j["config"] = cfg.to_json();
    return j;
}

std::string resolve_format(std::string format, const std::string& out,
                           const std::string& fallback) {
    if (!format.empty()) return format;
    if (out.size() >= 5 && out.substr(out.size() - 5) == ".json") return "json";
    if (out.size() >= 4 && out.substr(out.size() - 4) == ".csv") return "csv";
    return fallback;
}

int smallest_m_covering(std::uint64_t N, int q) {
    int m = 1;
    std::uint64_t cap = static_cast<std::uint64_t>(q);
    while (cap < N) {
        cap *= static_cast<std::uint64_t>(q);
        ++m;
    }
    return m;
}

GeneratorTuple build_tuple(const std::string& matrix, PrimeBase base, int s, int m,
                           std::optional<std::uint64_t> seed, std::uint64_t stream) {
    if (matrix == "random") {
        if (!seed) throw std::invalid_argument("--matrix random needs --seed (no wall-clock seeding)");
        return sample_tuple(s, base, m, m, *seed, stream);
    }
    GeneratorTuple T{base, s, m, m, {}, {matrix, {}, {}}};
    for (int j = 0; j < s; ++j) T.matrices.push_back(named_matrix(matrix, base, m));
    return T;
}

json complex_json(cplx z) {
    return json{{"re", z.real()}, {"im", z.imag()}};
}

// ---------------------------------------------------------------- gen

int cmd_gen(int q, int s, std::optional<int> m_opt, std::optional<std::uint64_t> n_opt,
            const std::string& matrix, std::optional<std::uint64_t> seed, std::uint64_t stream,
            const std::string& out, std::string format) {
    const PrimeBase base(q);
    if (!m_opt && !n_opt) throw std::invalid_argument("gen needs --m or --N");
    const int m = m_opt ? *m_opt : smallest_m_covering(std::max<std::uint64_t>(*n_opt, 1), q);
    if (m < 1) throw std::invalid_argument("gen: --m must be positive");
    const std::uint64_t qm = upow(static_cast<std::uint64_t>(q), m);
    const std::uint64_t N = n_opt ? *n_opt : qm;
    if (N > qm) throw std::invalid_argument("gen: N exceeds q^m; raise --m");

    const GeneratorTuple T = build_tuple(matrix, base, s, m, seed, stream);
    const auto pts = point_set(T, N, m);

    format = resolve_format(format, out, "csv");
    ConfigEcho cfg;
    cfg.add("command", std::string("gen"));
    cfg.add("q", q);
    cfg.add("s", s);
    cfg.add("m", m);
    cfg.add("N", N);
    cfg.add("matrix", matrix);
    if (seed) cfg.add("seed", *seed);
    cfg.add("stream", stream);
    cfg.add("format", format);
    cfg.add("denominator", qm);

    Sink sink(out);
    std::ostream& os = sink.stream();
    if (format == "csv") {
        cfg.csv_header(os);
        os << "n";
        for (int j = 1; j <= s; ++j)
            os << ",x" << j << "_num,x" << j << "_den,x" << j;
        os << "\n";
        for (std::uint64_t n = 0; n < N; ++n) {
            os << n;
            for (int j = 0; j < s; ++j) {
                const std::uint64_t num = pts[n].nums[static_cast<std::size_t>(j)];
                os << ',' << num << ',' << qm << ','
                   << fmt12(static_cast<double>(num) / static_cast<double>(qm));
            }
            os << "\n";
        }
    } else {
        json j = with_header("gen", cfg);
        j["denominator"] = qm;
        j["tuple"] = tuple_to_json(T);
        json rows = json::array();
        for (std::uint64_t n = 0; n < N; ++n) {
            json row;
            row["n"] = n;
            json nums = json::array(), xs = json::array();
            for (int jx = 0; jx < s; ++jx) {
                const std::uint64_t num = pts[n].nums[static_cast<std::size_t>(jx)];
                nums.push_back(num);
                xs.push_back(static_cast<double>(num) / static_cast<double>(qm));
            }
            row["num"] = nums;
            row["x"] = xs;
            rows.push_back(row);
        }
        j["points"] = rows;
        os << j.dump(2) << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------- disc

int cmd_disc(int q, int s, std::optional<int> m_opt, std::optional<std::uint64_t> n_opt,
             std::optional<std::uint64_t> n_max_opt, const std::string& matrix,
             std::optional<std::uint64_t> seed, std::uint64_t stream, bool spectral_check,
             int spectral_samples, const std::string& out, std::string format) {
    const PrimeBase base(q);
    if (n_opt && n_max_opt) throw std::invalid_argument("disc: give --N or --N-max, not both");
    const std::uint64_t n_lo = n_opt ? *n_opt : 1;
    const std::uint64_t n_hi = n_opt ? *n_opt : (n_max_opt ? *n_max_opt : 0);
    if (n_hi == 0) throw std::invalid_argument("disc needs --N or --N-max");
    const int m = m_opt ? *m_opt : smallest_m_covering(n_hi, q);
    const std::uint64_t qm = upow(static_cast<std::uint64_t>(q), m);
    if (n_hi > qm) throw std::invalid_argument("disc: N exceeds q^m; raise --m");
    if (spectral_check && !seed)
        throw std::invalid_argument("disc: --spectral-check samples points and needs --seed");

    const GeneratorTuple T = build_tuple(matrix, base, s, m, seed, stream);
    const auto pts = point_set(T, n_hi, m);

    format = resolve_format(format, out, "csv");
    ConfigEcho cfg;
    cfg.add("command", std::string("disc"));
    cfg.add("q", q);
    cfg.add("s", s);
    cfg.add("m", m);
    cfg.add("N_min", n_lo);
    cfg.add("N_max", n_hi);
    cfg.add("matrix", matrix);
    if (seed) cfg.add("seed", *seed);
    cfg.add("stream", stream);
    cfg.add("spectral_check", spectral_check);
    cfg.add("format", format);

    struct Row {
        std::uint64_t N;
        double dstar;
        double logpow;
        std::optional<double> predictor;
        std::optional<double> dev;
    };
    std::vector<Row> rows;
    CounterRng rng(seed ? *seed : 0, stream);
    for (std::uint64_t N = n_lo; N <= n_hi; ++N) {
        Row r{N, star_grid(pts, N), 0.0, {}, {}};
        const double ln = std::log(static_cast<double>(N));
        r.logpow = std::pow(ln, s);
        if (N >= 2) r.predictor = r.logpow * std::log(ln);
        if (spectral_check) {
            CounterRng sub = rng.substream(N);
            double worst = 0.0;
            for (int t = 0; t < spectral_samples; ++t) {
                std::vector<std::uint64_t> nums;
                for (int j = 0; j < s; ++j) nums.push_back(sub.below(qm));
                const GridPoint x{base, m, nums};
                const double dv = local_direct(pts, x, N).value;
                const double sv = local_spectral(T, x, N);
                worst = std::max(worst, std::abs(dv - sv));
            }
            r.dev = worst;
        }
        rows.push_back(r);
    }

    Sink sink(out);
    std::ostream& os = sink.stream();
    if (format == "csv") {
        cfg.csv_header(os);
        os << "N,Dstar,logN_pow_s,predictor";
        if (spectral_check) os << ",spectral_dev";
        os << "\n";
        for (const auto& r : rows) {
            os << r.N << ',' << fmt12(r.dstar) << ',' << fmt12(r.logpow) << ',';
            if (r.predictor) os << fmt12(*r.predictor);
            if (spectral_check) {
                os << ',';
                if (r.dev) os << fmt12(*r.dev);
            }
            os << "\n";
        }
    } else {
        json j = with_header("disc", cfg);
        json arr = json::array();
        for (const auto& r : rows) {
            json row{{"N", r.N}, {"Dstar", r.dstar}, {"logN_pow_s", r.logpow}};
            row["predictor"] = r.predictor ? json(*r.predictor) : json();
            if (r.dev) row["spectral_dev"] = *r.dev;
            arr.push_back(row);
        }
        j["rows"] = arr;
        os << j.dump(2) << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------- verify

struct Check {
    std::string name;
    double expected;
    double observed;
    double tolerance;
    bool pass;
};

Check make_check(std::string name, double expected, double observed, double tolerance) {
    const bool pass = std::abs(observed - expected) <= tolerance;
    return {std::move(name), expected, observed, tolerance, pass};
}

void suite_lemma1(PrimeBase base, int m, std::vector<Check>& checks) {
    const std::uint64_t L = upow(static_cast<std::uint64_t>(base.q()), m);
    if (static_cast<long double>(L) * L * L > static_cast<long double>(cost_guard()))
        throw CostGuardError("verify lemma1: q^(3m) exceeds the cost guard");
    double diag = 0.0, off = 0.0;
    for (std::uint64_t k = 0; k < L; ++k)
        for (std::uint64_t l = 0; l < L; ++l) {
            const cplx avg = orthonormality_avg(k, l, m, base);
            if (k == l)
                diag = std::max(diag, std::abs(avg - cplx{1.0, 0.0}));
            else
                off = std::max(off, std::abs(avg));
        }
    checks.push_back(make_check("diagonal_max_dev", 0.0, diag, 1e-12));
    checks.push_back(make_check("offdiagonal_max_dev", 0.0, off, 1e-12));
}

void suite_lemma2(PrimeBase base, int s, int m, const std::string& mode, std::uint64_t trials,
                  std::optional<std::uint64_t> seed, std::uint64_t stream,
                  const std::vector<std::uint64_t>& kflag, std::vector<Check>& checks) {
    std::vector<std::vector<std::uint64_t>> tuples;
    if (!kflag.empty()) {
        if (static_cast<int>(kflag.size()) != s)
            throw std::invalid_argument("verify lemma2: --k needs one value per coordinate");
        tuples.push_back(kflag);
    } else {
        PEnumerator en(base, s, 3);
        while (auto t = en.next()) {
            std::vector<std::uint64_t> k;
            for (int j = 0; j < s; ++j) k.push_back(t->k(j));
            tuples.push_back(std::move(k));
            if (tuples.size() == 20) break;
        }
    }
    const double expect = 1.0 / static_cast<double>(upow(static_cast<std::uint64_t>(base.q()), m - 1));
    std::uint64_t idx = 0;
    for (const auto& k : tuples) {
        std::string name = "mm[k=";
        for (std::size_t j = 0; j < k.size(); ++j)
            name += (j ? "," : "") + std::to_string(k[j]);
        name += "]";
        if (mode == "exhaustive") {
            const MeasureResult r = measure_mm(base, s, m, k, MeasureMode::exhaustive, 0, 0, 0);
            checks.push_back(make_check(name, expect,
                                        static_cast<double>(r.num) / static_cast<double>(r.den), 0.0));
        } else {
            if (!seed) throw std::invalid_argument("verify lemma2: montecarlo needs --seed");
            const MeasureResult r =
                measure_mm(base, s, m, k, MeasureMode::montecarlo, trials, *seed, stream + idx);
            checks.push_back(make_check(name, expect, r.estimate, 3.0 * r.stderr_value));
        }
        ++idx;
    }
}

void suite_lemma3a(PrimeBase base, std::vector<Check>& checks) {
    // the library evaluates every call along both paths and throws on any
    // disagreement, so completing the sweeps is the assertion
    const auto q = static_cast<std::uint64_t>(base.q());
    const std::uint64_t L = q * q;
    std::uint64_t cases1 = 0;
    bool binary = true;
    for (std::uint64_t i = 0; i < L; ++i)
        for (std::uint64_t j = 0; j < L; ++j)
            for (std::uint64_t k = 0; k < L; ++k)
                for (std::uint64_t l = 0; l < L; ++l) {
                    const std::vector<std::uint64_t> kk{k}, ll{l};
                    const double v = paired_integral(base, i, j, kk, ll);
                    binary = binary && (v == 0.0 || v == 1.0);
                    ++cases1;
                }
    std::uint64_t cases2 = 0;
    for (std::uint64_t i = 0; i < L; ++i)
        for (std::uint64_t j = 0; j < L; ++j)
            for (std::uint64_t k1 = 0; k1 < q; ++k1)
                for (std::uint64_t k2 = 0; k2 < q; ++k2)
                    for (std::uint64_t l1 = 0; l1 < q; ++l1)
                        for (std::uint64_t l2 = 0; l2 < q; ++l2) {
                            const std::vector<std::uint64_t> kk{k1, k2}, ll{l1, l2};
                            const double v = paired_integral(base, i, j, kk, ll);
                            binary = binary && (v == 0.0 || v == 1.0);
                            ++cases2;
                        }
    checks.push_back(make_check("dual_path_s1_sweep", static_cast<double>(L * L * L * L),
                                static_cast<double>(cases1), 0.0));
    checks.push_back(make_check("dual_path_s2_sweep", static_cast<double>(L * L * q * q * q * q),
                                static_cast<double>(cases2), 0.0));
    checks.push_back(make_check("values_binary", 1.0, binary ? 1.0 : 0.0, 0.0));
}

void suite_lemma3b(PrimeBase base, int s, const std::string& mode, std::uint64_t trials,
                   std::optional<std::uint64_t> seed, std::uint64_t stream,
                   const std::vector<std::uint64_t>& kflag, const std::vector<std::uint64_t>& uflag,
                   std::vector<Check>& checks) {
    PTuple t{base, {}};
    if (!kflag.empty()) {
        if (static_cast<int>(kflag.size()) != s)
            throw std::invalid_argument("verify lemma3b: --k needs one value per coordinate");
        for (const auto k : kflag) {
            if (k == 0) throw std::invalid_argument("verify lemma3b: --k must be positive");
            const int a = length_of(k, base) + 1;
            const std::uint64_t lead = upow(static_cast<std::uint64_t>(base.q()), a - 1);
            if (k < lead || k - lead >= lead)
                throw std::invalid_argument("verify lemma3b: each --k needs leading digit 1");
            t.coords.push_back({a, k - lead});
        }
    } else {
        for (int j = 0; j < s; ++j) t.coords.push_back({3, 0});
    }
    int m = t.sum_r();
    if (m < 2) throw std::invalid_argument("verify lemma3b: total index length must be at least 2");
    std::vector<std::uint64_t> shifts;
    if (!uflag.empty()) {
        if (uflag.size() != t.coords.size())
            throw std::invalid_argument("verify lemma3b: --u needs one value per coordinate");
        for (std::size_t j = 0; j < uflag.size(); ++j)
            shifts.push_back(uflag[j] == 0 ? 0 : beta_shift(t.coords[j].a + 1, uflag[j], base));
    } else {
        shifts.assign(t.coords.size(), 0);
        shifts[0] = beta_shift(t.coords[0].a + 1, 1, base);
    }
    const double expect =
        1.0 / static_cast<double>(upow(static_cast<std::uint64_t>(base.q()), m + m / 2 - 2));
    const MeasureResult ex = joint_measure(t, shifts, MeasureMode::exhaustive, 0, 0, 0);
    checks.push_back(make_check("joint_exact", expect,
                                static_cast<double>(ex.num) / static_cast<double>(ex.den), 0.0));
    if (mode == "montecarlo") {
        if (!seed) throw std::invalid_argument("verify lemma3b: montecarlo needs --seed");
        const MeasureResult mc = joint_measure(t, shifts, MeasureMode::montecarlo, trials, *seed, stream);
        checks.push_back(make_check("joint_montecarlo", expect, mc.estimate, 3.0 * mc.stderr_value));
    }
}

void suite_lemma6(PrimeBase base, int s, int m, std::uint64_t cases,
                  std::optional<std::uint64_t> seed, std::uint64_t stream,
                  std::vector<Check>& checks) {
    const std::uint64_t qm = upow(static_cast<std::uint64_t>(base.q()), m);
    const GeneratorTuple T = seed ? sample_tuple(s, base, m, m, *seed, stream)
                                  : build_tuple("identity", base, s, m, {}, 0);
    double worst = 0.0;
    std::uint64_t done = 0;
    if (s == 1) {
        const auto pts = point_set(T, qm, m);
        for (std::uint64_t N = 0; N <= qm; ++N)
            for (std::uint64_t c = 0; c < qm; ++c) {
                const GridPoint x{base, m, {c}};
                worst = std::max(worst,
                                 std::abs(local_direct(pts, x, N).value - local_spectral(T, x, N)));
                ++done;
            }
    } else {
        if (!seed) throw std::invalid_argument("verify lemma6: s > 1 samples cases and needs --seed");
        CounterRng rng(*seed, stream + 1);
        const auto pts = point_set(T, qm, m);
        for (std::uint64_t t = 0; t < cases; ++t) {
            const std::uint64_t N = rng.below(qm + 1);
            std::vector<std::uint64_t> nums;
            for (int j = 0; j < s; ++j) nums.push_back(rng.below(qm));
            const GridPoint x{base, m, nums};
            worst = std::max(worst,
                             std::abs(local_direct(pts, x, N).value - local_spectral(T, x, N)));
            ++done;
        }
    }
    checks.push_back(make_check("spectral_vs_direct_max_dev", 0.0, worst, 1e-7));
    checks.push_back(make_check("cases", static_cast<double>(done), static_cast<double>(done), 0.0));
}

void suite_theta(PrimeBase base, int m, std::vector<Check>& checks) {
    const std::uint64_t qm = upow(static_cast<std::uint64_t>(base.q()), m);
    double worst = 0.0;
    std::uint64_t done = 0;
    for (int a = 3; a <= m; ++a) {
        const std::uint64_t lcap = upow(static_cast<std::uint64_t>(base.q()), a - 2);
        for (std::uint64_t ell = 0; ell < lcap; ++ell) {
            const StarIndex st(base, a, ell);
            for (std::uint64_t k = 0; k < qm; ++k) {
                cplx proj = 0;
                for (std::uint64_t c = 0; c < qm; ++c) {
                    const GridCoordinate x(base, m, c);
                    proj += interval_coeff(k, x) * walsh(st.k_star(), x);
                }
                proj /= static_cast<double>(qm);
                worst = std::max(worst, std::abs(theta(k, st, m) - proj));
                ++done;
            }
        }
    }
    if (done == 0) throw std::invalid_argument("verify theta: needs m >= 3 for at least one star index");
    checks.push_back(make_check("theta_projection_max_dev", 0.0, worst, 1e-10));
    checks.push_back(make_check("cases", static_cast<double>(done), static_cast<double>(done), 0.0));
}

int cmd_verify(const std::string& suite, int q, int s, int m, const std::string& mode,
               std::uint64_t trials, std::optional<std::uint64_t> seed, std::uint64_t stream,
               std::uint64_t cases, const std::vector<std::uint64_t>& kflag,
               const std::vector<std::uint64_t>& uflag, const std::string& out,
               std::string format) {
    const PrimeBase base(q);
    std::vector<Check> checks;
    if (suite == "lemma1")
        suite_lemma1(base, m, checks);
    else if (suite == "lemma2")
        suite_lemma2(base, s, m, mode, trials, seed, stream, kflag, checks);
    else if (suite == "lemma3a")
        suite_lemma3a(base, checks);
    else if (suite == "lemma3b")
        suite_lemma3b(base, s, mode, trials, seed, stream, kflag, uflag, checks);
    else if (suite == "lemma6")
        suite_lemma6(base, s, m, cases, seed, stream, checks);
    else
        suite_theta(base, m, checks);

    format = resolve_format(format, out, "json");
    ConfigEcho cfg;
    cfg.add("command", std::string("verify"));
    cfg.add("suite", suite);
    cfg.add("q", q);
    cfg.add("s", s);
    cfg.add("m", m);
    cfg.add("mode", mode);
    cfg.add("trials", trials);
    if (seed) cfg.add("seed", *seed);
    cfg.add("stream", stream);
    cfg.add("format", format);

    std::size_t failed = 0;
    for (const auto& c : checks) failed += c.pass ? 0 : 1;

    Sink sink(out);
    std::ostream& os = sink.stream();
    if (format == "csv") {
        cfg.csv_header(os);
        os << "name,expected,observed,tolerance,pass\n";
        for (const auto& c : checks)
            os << c.name << ',' << fmt12(c.expected) << ',' << fmt12(c.observed) << ','
               << fmt12(c.tolerance) << ',' << (c.pass ? "true" : "false") << "\n";
    } else {
        json j = with_header("verify", cfg);
        json arr = json::array();
        for (const auto& c : checks)
            arr.push_back(json{{"name", c.name},
                               {"expected", c.expected},
                               {"observed", c.observed},
                               {"tolerance", c.tolerance},
                               {"pass", c.pass}});
        j["checks"] = arr;
        j["passed"] = checks.size() - failed;
        j["failed"] = failed;
        j["ok"] = failed == 0;
        os << j.dump(2) << "\n";
    }

    if (failed != 0) {
        std::size_t shown = 0;
        for (const auto& c : checks) {
            if (c.pass) continue;
            std::cerr << "violation: " << c.name << " expected " << fmt12(c.expected)
                      << " observed " << fmt12(c.observed) << " tolerance " << fmt12(c.tolerance)
                      << "\n";
            if (++shown == 10) break;
        }
        std::cerr << "verify " << suite << ": " << failed << " of " << checks.size()
                  << " checks failed\n";
        return 1;
    }
    return 0;
}

// ---------------------------------------------------------------- witness

struct SeedOutcome {
    std::uint64_t seed = 0;
    bool found = false;
    std::optional<WitnessReport> report;
    std::optional<int> stopped_at;  // first sum-r level the truncation could not hold
    bool reverified = false;
    std::string note;
};

// independent re-verification of a report against the raw tuple
bool reverify(const GeneratorTuple& T, int s, PrimeBase base, int J, const WitnessReport& rep,
              std::string& why) {
    std::vector<std::uint64_t> kt;
    for (int j = 0; j < s; ++j) kt.push_back(rep.accepted.k(j));
    const ImageVec img = combined_image(T, kt);
    for (int i = 0; i + 1 < rep.m; ++i)
        if (img[static_cast<std::size_t>(i)] != 0) {
            why = "image not deep";
            return false;
        }
    const auto deep = first_nonzero_index(img);
    if (deep.has_value() != rep.valuation.has_value() ||
        (deep && static_cast<int>(*deep + 1) != *rep.valuation)) {
        why = "valuation mismatch";
        return false;
    }
    const int half = rep.accepted.sum_r();
    std::vector<std::uint64_t> u(static_cast<std::size_t>(s), 0);
    for (;;) {
        int j = s - 1;
        for (; j >= 0; --j) {
            if (++u[static_cast<std::size_t>(j)] <= static_cast<std::uint64_t>(J)) break;
            u[static_cast<std::size_t>(j)] = 0;
        }
        if (j < 0) break;
        std::vector<std::uint64_t> sh;
        for (int jj = 0; jj < s; ++jj)
            sh.push_back(kt[static_cast<std::size_t>(jj)] +
                         beta_shift(rep.accepted.coords[static_cast<std::size_t>(jj)].a + 1,
                                    u[static_cast<std::size_t>(jj)], base));
        const auto idx = first_nonzero_index(combined_image(T, sh));
        if (!idx || 2 * static_cast<int>(*idx + 1) > half) {
            why = "shifted image not shallow";
            return false;
        }
    }
    if (std::abs(rep.main + rep.mid + rep.tail_exact - rep.lambda) > 1e-9) {
        why = "decomposition residual";
        return false;
    }
    if (std::abs(rep.tail_exact) > rep.tail_bound + 1e-12) {
        why = "tail bound violated";
        return false;
    }
    if (std::abs(rep.certified - std::abs(rep.lambda)) > 1e-15) {
        why = "certified != |lambda|";
        return false;
    }
    if (rep.scanned && rep.max_abs_d + 1e-9 < rep.certified) {
        why = "max |D| below certified";
        return false;
    }
    if (rep.N != upow(static_cast<std::uint64_t>(base.q()), rep.m - 1)) {
        why = "N != q^(m-1)";
        return false;
    }
    return true;
}

SeedOutcome run_one_seed(PrimeBase base, int s, int trunc, int r_min, int r_max, int J, bool scan,
                         std::uint64_t seed, std::uint64_t stream) {
    SeedOutcome o;
    o.seed = seed;
    const GeneratorTuple T = sample_tuple(s, base, trunc, trunc, seed, stream);
    for (int level = std::max(2, r_min); level <= r_max; ++level) {
        std::optional<WitnessReport> rep;
        try {
            rep = witness_search(T, s, base, level, level, J, scan);
        } catch (const std::invalid_argument& e) {
            // the truncation cannot hold this level; deeper levels only grow
            o.stopped_at = level;
            o.note = e.what();
            break;
        }
        if (rep) {
            o.found = true;
            std::string why;
            o.reverified = reverify(T, s, base, J, *rep, why);
            if (!o.reverified) o.note = why;
            o.report = std::move(rep);
            break;
        }
    }
    return o;
}

int cmd_witness(int q, int s, int trunc, const std::vector<std::uint64_t>& seeds,
                std::uint64_t stream, int r_min, int r_max, int J, bool scan, int jobs,
                const std::string& out, std::string format) {
    const PrimeBase base(q);
    if (seeds.empty()) throw std::invalid_argument("witness needs at least one --seed");
    if (trunc < 1) throw std::invalid_argument("witness: --m (truncation) must be positive");
    if (jobs < 1) throw std::invalid_argument("witness: --jobs must be positive");

    std::vector<SeedOutcome> outcomes(seeds.size());
    std::vector<std::exception_ptr> errors(seeds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= seeds.size()) return;
            try {
                outcomes[i] = run_one_seed(base, s, trunc, r_min, r_max, J, scan, seeds[i], stream);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t nthreads = std::min<std::size_t>(static_cast<std::size_t>(jobs), seeds.size());
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    format = resolve_format(format, out, "json");
    ConfigEcho cfg;
    cfg.add("command", std::string("witness"));
    cfg.add("q", q);
    cfg.add("s", s);
    cfg.add("m", trunc);
    {
        std::string sl;
        for (std::size_t i = 0; i < seeds.size(); ++i) sl += (i ? "," : "") + std::to_string(seeds[i]);
        cfg.add("seed", sl);
    }
    cfg.add("stream", stream);
    cfg.add("r_min", r_min);
    cfg.add("r_max", r_max);
    cfg.add("J", J);
    cfg.add("scan", scan);
    cfg.add("jobs", jobs);
    cfg.add("format", format);

    std::size_t found = 0;
    bool all_ok = true;
    json results = json::array();
    for (const auto& o : outcomes) {
        json r;
        r["seed"] = o.seed;
        r["found"] = o.found;
        if (o.stopped_at) {
            r["stopped_at_sum_r"] = *o.stopped_at;
            r["note"] = o.note;
        }
        if (o.found) {
            ++found;
            all_ok = all_ok && o.reverified;
            const WitnessReport& rep = *o.report;
            json a = json::array(), e = json::array(), k = json::array();
            for (const auto& c : rep.accepted.coords) {
                a.push_back(c.a);
                e.push_back(c.ell);
            }
            for (int j = 0; j < s; ++j) k.push_back(rep.accepted.k(j));
            r["accepted"] = json{{"a", a}, {"ell", e}, {"k", k}};
            r["valuation"] = rep.valuation ? json(*rep.valuation) : json();
            r["F"] = static_cast<double>(rep.F);
            r["m"] = rep.m;
            r["N"] = rep.N;
            r["lambda"] = complex_json(rep.lambda);
            r["main"] = complex_json(rep.main);
            r["mid"] = complex_json(rep.mid);
            r["tail_exact"] = complex_json(rep.tail_exact);
            r["tail_bound"] = rep.tail_bound;
            r["certified"] = rep.certified;
            r["scanned"] = rep.scanned;
            if (rep.scanned) {
                r["max_abs_d"] = rep.max_abs_d;
                r["argmax"] = rep.argmax;
            }
            r["predictor"] = rep.predictor ? json(*rep.predictor) : json();
            r["ratio"] = rep.ratio ? json(*rep.ratio) : json();
            r["reverified"] = o.reverified;
            if (!o.reverified) r["note"] = o.note;
        }
        results.push_back(r);
    }

    json j = with_header("witness", cfg);
    j["results"] = results;
    j["searched"] = seeds.size();
    j["found_count"] = found;
    j["all_not_found"] = found == 0;
    j["ok"] = all_ok;

    Sink sink(out);
    sink.stream() << j.dump(2) << "\n";
    if (!all_ok) {
        std::cerr << "witness: an emitted report failed independent re-verification\n";
        return 1;
    }
    return 0;
}

// ---------------------------------------------------------------- measure

json measure_json(const MeasureResult& r) {
    json j;
    j["estimate"] = r.estimate;
    j["stderr"] = r.stderr_value;
    j["trials"] = r.trials;
    j["exact"] = r.exact;
    if (r.exact) {
        j["num"] = r.num;
        j["den"] = r.den;
    }
    return j;
}

int emit_measure(const std::string& sub, ConfigEcho& cfg, const MeasureResult& r,
                 const std::string& out, std::string format) {
    format = resolve_format(format, out, "json");
    cfg.add("format", format);
    Sink sink(out);
    std::ostream& os = sink.stream();
    if (format == "csv") {
        cfg.csv_header(os);
        os << "estimate,stderr,trials,exact,num,den\n";
        os << fmt12(r.estimate) << ',' << fmt12(r.stderr_value) << ',' << r.trials << ','
           << (r.exact ? "true" : "false") << ',' << r.num << ',' << r.den << "\n";
    } else {
        json j = with_header("measure " + sub, cfg);
        j["result"] = measure_json(r);
        os << j.dump(2) << "\n";
    }
    return 0;
}

int cmd_measure_mm(int q, int s, int m, const std::vector<std::uint64_t>& k,
                   const std::string& mode, std::uint64_t trials,
                   std::optional<std::uint64_t> seed, std::uint64_t stream, const std::string& out,
                   const std::string& format) {
    const PrimeBase base(q);
    if (static_cast<int>(k.size()) != s)
        throw std::invalid_argument("measure mm: --k needs one value per coordinate");
    MeasureResult r;
    if (mode == "exhaustive") {
        r = measure_mm(base, s, m, k, MeasureMode::exhaustive, 0, 0, 0);
    } else {
        if (!seed) throw std::invalid_argument("measure mm: montecarlo needs --seed");
        r = measure_mm(base, s, m, k, MeasureMode::montecarlo, trials, *seed, stream);
    }
    ConfigEcho cfg;
    cfg.add("command", std::string("measure mm"));
    cfg.add("q", q);
    cfg.add("s", s);
    cfg.add("m", m);
    {
        std::string kl;
        for (std::size_t i = 0; i < k.size(); ++i) kl += (i ? "," : "") + std::to_string(k[i]);
        cfg.add("k", kl);
    }
    cfg.add("mode", mode);
    if (mode != "exhaustive") cfg.add("trials", trials);
    if (seed) cfg.add("seed", *seed);
    cfg.add("stream", stream);
    return emit_measure("mm", cfg, r, out, format);
}

int cmd_measure_joint(int q, const std::vector<std::uint64_t>& k,
                      const std::vector<std::uint64_t>& u, const std::string& mode,
                      std::uint64_t trials, std::optional<std::uint64_t> seed,
                      std::uint64_t stream, const std::string& out, const std::string& format) {
    const PrimeBase base(q);
    if (k.empty()) throw std::invalid_argument("measure joint: needs at least one --k");
    PTuple t{base, {}};
    for (const auto kj : k) {
        if (kj == 0) throw std::invalid_argument("measure joint: --k must be positive");
        const int a = length_of(kj, base) + 1;
        const std::uint64_t lead = upow(static_cast<std::uint64_t>(q), a - 1);
        if (kj - lead >= lead)
            throw std::invalid_argument("measure joint: each --k needs leading digit 1");
        t.coords.push_back({a, kj - lead});
    }
    std::vector<std::uint64_t> shifts;
    if (u.empty()) {
        shifts.assign(k.size(), 0);
        shifts[0] = beta_shift(t.coords[0].a + 1, 1, base);
    } else {
        if (u.size() != k.size())
            throw std::invalid_argument("measure joint: --u needs one value per --k");
        for (std::size_t j = 0; j < u.size(); ++j)
            shifts.push_back(u[j] == 0 ? 0 : beta_shift(t.coords[j].a + 1, u[j], base));
    }
    MeasureResult r;
    if (mode == "exhaustive") {
        r = joint_measure(t, shifts, MeasureMode::exhaustive, 0, 0, 0);
    } else {
        if (!seed) throw std::invalid_argument("measure joint: montecarlo needs --seed");
        r = joint_measure(t, shifts, MeasureMode::montecarlo, trials, *seed, stream);
    }
    ConfigEcho cfg;
    cfg.add("command", std::string("measure joint"));
    cfg.add("q", q);
    {
        std::string kl, ul;
        for (std::size_t i = 0; i < k.size(); ++i) kl += (i ? "," : "") + std::to_string(k[i]);
        for (std::size_t i = 0; i < shifts.size(); ++i)
            ul += (i ? "," : "") + std::to_string(shifts[i]);
        cfg.add("k", kl);
        cfg.add("shifts", ul);
    }
    cfg.add("mode", mode);
    if (mode != "exhaustive") cfg.add("trials", trials);
    if (seed) cfg.add("seed", *seed);
    cfg.add("stream", stream);
    return emit_measure("joint", cfg, r, out, format);
}

}

int main(int argc, char** argv) {
    CLI::App app{"digital sequence toolkit: generation, discrepancy, verification, witnesses"};
    app.require_subcommand(1);

    // shared option storage
    int q = 2, s = 1, J = 2, r_min = 0, r_max = 8, jobs = 1, spectral_samples = 5;
    std::optional<int> m_opt;
    int m_verify = 3, m_witness = 32;
    std::optional<std::uint64_t> n_opt, n_max_opt, seed_opt;
    std::uint64_t stream = 0, trials = 100000, cases = 200;
    std::vector<std::uint64_t> seeds, kvals, uvals;
    std::string matrix = "random", mode = "exhaustive", out, format, suite;
    bool scan = false, spectral_check = false;

    auto* gen = app.add_subcommand("gen", "write a point set with exact rational coordinates");
    gen->add_option("--q", q, "prime base")->required();
    gen->add_option("--s", s, "coordinates");
    gen->add_option("--m", m_opt, "digit truncation / grid refinement");
    gen->add_option("--N", n_opt, "number of points (default q^m)");
    gen->add_option("--matrix", matrix, "identity|pascal|random")
        ->check(CLI::IsMember({"identity", "pascal", "random"}));
    gen->add_option("--seed", seed_opt, "PRNG seed (required for random matrices)");
    gen->add_option("--stream", stream, "PRNG stream");
    gen->add_option("--out", out, "output path (default stdout)");
    gen->add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
    gen->add_option("--jobs", jobs, "worker threads (outputs independent of the value)");

    auto* disc = app.add_subcommand("disc", "star discrepancy growth table");
    disc->add_option("--q", q, "prime base")->required();
    disc->add_option("--s", s, "coordinates");
    disc->add_option("--m", m_opt, "grid refinement");
    disc->add_option("--N", n_opt, "single N");
    disc->add_option("--N-max", n_max_opt, "table over N = 1..N-max");
    disc->add_option("--matrix", matrix, "identity|pascal|random")
        ->check(CLI::IsMember({"identity", "pascal", "random"}));
    disc->add_option("--seed", seed_opt, "PRNG seed");
    disc->add_option("--stream", stream, "PRNG stream");
    disc->add_flag("--spectral-check", spectral_check,
                   "re-derive sampled local values along the character side");
    disc->add_option("--spectral-samples", spectral_samples, "sampled points per N");
    disc->add_option("--out", out, "output path (default stdout)");
    disc->add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
    disc->add_option("--jobs", jobs, "worker threads (outputs independent of the value)");

    auto* verify = app.add_subcommand("verify", "run a named verification suite");
    verify->add_option("suite", suite, "lemma1|lemma2|lemma3a|lemma3b|lemma6|theta")
        ->required()
        ->check(CLI::IsMember({"lemma1", "lemma2", "lemma3a", "lemma3b", "lemma6", "theta"}));
    verify->add_option("--q", q, "prime base")->required();
    verify->add_option("--s", s, "coordinates");
    verify->add_option("--m", m_verify, "digit depth / refinement");
    verify->add_option("--mode", mode, "exhaustive|montecarlo")
        ->check(CLI::IsMember({"exhaustive", "montecarlo"}));
    verify->add_option("--trials", trials, "Monte Carlo trials");
    verify->add_option("--cases", cases, "sampled cases for lemma6 with s > 1");
    verify->add_option("--seed", seed_opt, "PRNG seed");
    verify->add_option("--stream", stream, "PRNG stream");
    verify->add_option("--k", kvals, "index values, one per coordinate");
    verify->add_option("--u", uvals, "shift indices for lemma3b, one per coordinate");
    verify->add_option("--out", out, "output path (default stdout)");
    verify->add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
    verify->add_option("--jobs", jobs, "worker threads (outputs independent of the value)");

    auto* witness = app.add_subcommand("witness", "search random tuples for certified witnesses");
    witness->add_option("--q", q, "prime base")->required();
    witness->add_option("--s", s, "coordinates");
    witness->add_option("--m", m_witness, "matrix truncation (rows = cols)");
    witness->add_option("--seed", seeds, "tuple seed, repeatable")->required();
    witness->add_option("--stream", stream, "PRNG stream");
    witness->add_option("--r-min", r_min, "smallest total index length");
    witness->add_option("--r-max", r_max, "largest total index length");
    witness->add_option("--J", J, "shift window");
    witness->add_flag("--scan", scan, "locate argmax |D| on the refinement grid");
    witness->add_option("--jobs", jobs, "worker threads (outputs independent of the value)");
    witness->add_option("--out", out, "output path (default stdout)");
    witness->add_option("--format", format, "json")->check(CLI::IsMember({"json"}));

    auto* measure = app.add_subcommand("measure", "measure experiments over random matrices");
    measure->require_subcommand(1);
    auto* mm = measure->add_subcommand("mm", "probability of a deep combined image");
    mm->add_option("--q", q, "prime base")->required();
    mm->add_option("--s", s, "coordinates");
    mm->add_option("--m", m_verify, "depth")->required();
    mm->add_option("--k", kvals, "index values, one per coordinate")->required();
    mm->add_option("--mode", mode, "exhaustive|montecarlo")
        ->check(CLI::IsMember({"exhaustive", "montecarlo"}));
    mm->add_option("--trials", trials, "Monte Carlo trials");
    mm->add_option("--seed", seed_opt, "PRNG seed");
    mm->add_option("--stream", stream, "PRNG stream");
    mm->add_option("--out", out, "output path (default stdout)");
    mm->add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
    auto* joint = measure->add_subcommand("joint", "joint depth of an index and its shift");
    joint->add_option("--q", q, "prime base")->required();
    joint->add_option("--k", kvals, "leading-one index values, repeatable")->required();
    joint->add_option("--u", uvals, "shift index per coordinate (0 = unshifted)");
    joint->add_option("--mode", mode, "exhaustive|montecarlo")
        ->check(CLI::IsMember({"exhaustive", "montecarlo"}));
    joint->add_option("--trials", trials, "Monte Carlo trials");
    joint->add_option("--seed", seed_opt, "PRNG seed");
    joint->add_option("--stream", stream, "PRNG stream");
    joint->add_option("--out", out, "output path (default stdout)");
    joint->add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*gen)
            return cmd_gen(q, s, m_opt, n_opt, matrix, seed_opt, stream, out, format);
        if (*disc)
            return cmd_disc(q, s, m_opt, n_opt, n_max_opt, matrix, seed_opt, stream,
                            spectral_check, spectral_samples, out, format);
        if (*verify)
            return cmd_verify(suite, q, s, m_verify, mode, trials, seed_opt, stream, cases, kvals,
                              uvals, out, format);
        if (*witness)
            return cmd_witness(q, s, m_witness, seeds, stream, r_min, r_max, J, scan, jobs, out,
                               format);
        if (*mm)
            return cmd_measure_mm(q, s, m_verify, kvals, mode, trials, seed_opt, stream, out,
                                  format);
        if (*joint)
            return cmd_measure_joint(q, kvals, uvals, mode, trials, seed_opt, stream, out, format);
        std::cerr << "no command selected\n";
        return 2;
    } catch (const CostGuardError& e) {
        std::cerr << "error: " << e.what() << " (cost guard = " << cost_guard()
                  << "; override with DFORGE_COST_GUARD)\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
