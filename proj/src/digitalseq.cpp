#include "dforge/digitalseq.hpp"

#include "dforge/rng.hpp"

#include <stdexcept>
#include <string>

namespace dforge {

GeneratorMatrix::GeneratorMatrix(PrimeBase base_, int rows_, int cols_)
    : base(base_), rows(rows_), cols(cols_) {
    if (rows <= 0 || cols <= 0)
        throw std::invalid_argument("GeneratorMatrix: dimensions must be positive");
    entries.assign(static_cast<std::size_t>(rows) * cols, 0);
}

GeneratorTuple sample_tuple(int s, PrimeBase base, int rows, int cols,
                            std::uint64_t seed, std::uint64_t stream) {
    if (s <= 0) throw std::invalid_argument("sample_tuple: s must be positive");
    GeneratorTuple T{base, s, rows, cols, {}, {"random", seed, stream}};
    CounterRng rng(seed, stream);
    T.matrices.reserve(static_cast<std::size_t>(s));
    for (int j = 0; j < s; ++j) {
        GeneratorMatrix C(base, rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                C.set(r, c, static_cast<digit_t>(rng.digit(base.q())));
        T.matrices.push_back(std::move(C));
    }
    return T;
}

GeneratorMatrix named_matrix(const std::string& kind, PrimeBase base, int m) {
    GeneratorMatrix C(base, m, m);
    if (kind == "identity") {
        for (int i = 0; i < m; ++i) C.set(i, i, 1);
        return C;
    }
    if (kind == "pascal") {
        // binomial(j, i) mod q via the Pascal recurrence, kept reduced
        std::vector<std::vector<int>> binom(static_cast<std::size_t>(m),
                                            std::vector<int>(static_cast<std::size_t>(m), 0));
        for (int j = 0; j < m; ++j) {
            binom[0][static_cast<std::size_t>(j)] = 1;
            for (int i = 1; i <= j; ++i)
                binom[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    (binom[static_cast<std::size_t>(i) - 1][static_cast<std::size_t>(j) - 1] +
                     binom[static_cast<std::size_t>(i)][static_cast<std::size_t>(j) - 1]) %
                    base.q();
        }
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j)
                C.set(i, j, static_cast<digit_t>(binom[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
        return C;
    }
    throw std::invalid_argument("named_matrix: unknown kind '" + kind + "'");
}

ImageVec apply(const GeneratorMatrix& C, const DigitVec& n) {
    if (!(n.base() == C.base)) throw std::invalid_argument("apply: base mismatch");
    if (n.size() > static_cast<std::size_t>(C.cols))
        throw std::invalid_argument("apply: n has more digits than the matrix has columns");
    const int q = C.base.q();
    ImageVec out(static_cast<std::size_t>(C.rows), 0);
    for (std::size_t c = 0; c < n.size(); ++c) {
        const int nc = n.digit(c);
        if (nc == 0) continue;
        for (int r = 0; r < C.rows; ++r)
            out[static_cast<std::size_t>(r)] = static_cast<digit_t>(
                (out[static_cast<std::size_t>(r)] + C.at(r, static_cast<int>(c)) * nc) % q);
    }
    return out;
}

ImageVec apply_transpose(const GeneratorMatrix& C, const DigitVec& k) {
    if (!(k.base() == C.base)) throw std::invalid_argument("apply_transpose: base mismatch");
    if (k.size() > static_cast<std::size_t>(C.rows))
        throw std::invalid_argument("apply_transpose: k has more digits than the matrix has rows");
    const int q = C.base.q();
    ImageVec out(static_cast<std::size_t>(C.cols), 0);
    for (std::size_t r = 0; r < k.size(); ++r) {
        const int kr = k.digit(r);
        if (kr == 0) continue;
        for (int c = 0; c < C.cols; ++c)
            out[static_cast<std::size_t>(c)] = static_cast<digit_t>(
                (out[static_cast<std::size_t>(c)] + C.at(static_cast<int>(r), c) * kr) % q);
    }
    return out;
}

ImageVec combined_image(const GeneratorTuple& T, std::span<const std::uint64_t> k) {
    if (static_cast<int>(k.size()) != T.s)
        throw std::invalid_argument("combined_image: tuple length must equal s");
    const int q = T.base.q();
    ImageVec out(static_cast<std::size_t>(T.cols), 0);
    for (int j = 0; j < T.s; ++j) {
        const ImageVec part = apply_transpose(T.matrices[static_cast<std::size_t>(j)],
                                              digits_of(k[static_cast<std::size_t>(j)], T.base));
        for (std::size_t c = 0; c < out.size(); ++c)
            out[c] = static_cast<digit_t>((out[c] + part[c]) % q);
    }
    return out;
}

GridPoint point(const GeneratorTuple& T, std::uint64_t n, int m) {
    if (m < 0 || m > T.rows)
        throw std::invalid_argument("point: refinement m must lie in [0, rows]");
    const auto q = static_cast<std::uint64_t>(T.base.q());
    const DigitVec nd = digits_of(n, T.base);
    GridPoint p{T.base, m, {}};
    p.nums.reserve(static_cast<std::size_t>(T.s));
    for (int j = 0; j < T.s; ++j) {
        const ImageVec img = apply(T.matrices[static_cast<std::size_t>(j)], nd);
        std::uint64_t num = 0;
        for (int i = 0; i < m; ++i) num = num * q + img[static_cast<std::size_t>(i)];
        p.nums.push_back(num);
    }
    return p;
}

std::vector<GridPoint> point_set(const GeneratorTuple& T, std::uint64_t N, int m) {
    std::vector<GridPoint> pts;
    pts.reserve(static_cast<std::size_t>(N));
    for (std::uint64_t n = 0; n < N; ++n) pts.push_back(point(T, n, m));
    return pts;
}

nlohmann::json tuple_to_json(const GeneratorTuple& T) {
    nlohmann::json j;
    j["q"] = T.base.q();
    j["s"] = T.s;
    j["rows"] = T.rows;
    j["cols"] = T.cols;
    nlohmann::json prov;
    prov["kind"] = T.provenance.kind;
    if (T.provenance.seed) prov["seed"] = *T.provenance.seed;
    if (T.provenance.stream) prov["stream"] = *T.provenance.stream;
    j["provenance"] = prov;
    nlohmann::json mats = nlohmann::json::array();
    for (const auto& C : T.matrices) {
        nlohmann::json rows = nlohmann::json::array();
        for (digit_t e : C.entries) rows.push_back(static_cast<int>(e));
        mats.push_back(std::move(rows));
    }
    j["matrices"] = std::move(mats);
    return j;
}

GeneratorTuple tuple_from_json(const nlohmann::json& j) {
    const PrimeBase base(j.at("q").get<int>());
    const int s = j.at("s").get<int>();
    const int rows = j.at("rows").get<int>();
    const int cols = j.at("cols").get<int>();
    if (s <= 0) throw std::invalid_argument("tuple_from_json: s must be positive");
    GeneratorTuple T{base, s, rows, cols, {}, {}};
    const auto& prov = j.at("provenance");
    T.provenance.kind = prov.at("kind").get<std::string>();
    if (prov.contains("seed")) T.provenance.seed = prov.at("seed").get<std::uint64_t>();
    if (prov.contains("stream")) T.provenance.stream = prov.at("stream").get<std::uint64_t>();
    const auto& mats = j.at("matrices");
    if (static_cast<int>(mats.size()) != s)
        throw std::invalid_argument("tuple_from_json: matrix count does not match s");
    for (const auto& flat : mats) {
        GeneratorMatrix C(base, rows, cols);
        if (flat.size() != C.entries.size())
            throw std::invalid_argument("tuple_from_json: matrix entry count mismatch");
        for (std::size_t i = 0; i < C.entries.size(); ++i) {
            const int v = flat[i].get<int>();
            if (v < 0 || v >= base.q())
                throw std::invalid_argument("tuple_from_json: entry out of digit range");
            C.entries[i] = static_cast<digit_t>(v);
        }
        T.matrices.push_back(std::move(C));
    }
    return T;
}

}
