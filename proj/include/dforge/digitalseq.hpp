#pragma once

#include "dforge/qadic.hpp"
#include "dforge/walsh.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dforge {

// Generating matrix over Z_q, row-major, rows x cols. Row index is the
// output digit position (fractional digit i+1 of the coordinate), column
// index pairs with the input digit position of n.
struct GeneratorMatrix {
    PrimeBase base;
    int rows = 0;
    int cols = 0;
    std::vector<digit_t> entries;

    GeneratorMatrix(PrimeBase base_, int rows_, int cols_);

    digit_t at(int r, int c) const { return entries[static_cast<std::size_t>(r) * cols + c]; }
    void set(int r, int c, digit_t v) { entries[static_cast<std::size_t>(r) * cols + c] = v; }

    friend bool operator==(const GeneratorMatrix&, const GeneratorMatrix&) = default;
};

struct Provenance {
    std::string kind;  // "random" or a named construction
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> stream;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct GeneratorTuple {
    PrimeBase base;
    int s = 0;
    int rows = 0;
    int cols = 0;
    std::vector<GeneratorMatrix> matrices;
    Provenance provenance;

    friend bool operator==(const GeneratorTuple&, const GeneratorTuple&) = default;
};

// s matrices with iid uniform entries, drawn from CounterRng(seed, stream)
// in (matrix, row, column) order.
GeneratorTuple sample_tuple(int s, PrimeBase base, int rows, int cols,
                            std::uint64_t seed, std::uint64_t stream);

// Deterministic constructions: "identity", or "pascal" with entry(i,j) =
// binomial(j, i) mod q (upper triangular, unit diagonal).
GeneratorMatrix named_matrix(const std::string& kind, PrimeBase base, int m);

// A matrix image: digit sequence of length rows (apply) or cols
// (apply_transpose), index 0 first.
using ImageVec = std::vector<digit_t>;

// C applied to the digit column of n; requires n < q^cols.
ImageVec apply(const GeneratorMatrix& C, const DigitVec& n);

// C^T applied to the digit column of k; requires k < q^rows.
ImageVec apply_transpose(const GeneratorMatrix& C, const DigitVec& k);

// sum over coordinates of C_j^T applied to k_j (the frequency image behind
// the character-sum identities).
ImageVec combined_image(const GeneratorTuple& T, std::span<const std::uint64_t> k);

// Point of the sequence at refinement m: coordinate j has fractional digits
// equal to the first m components of C_j applied to n's digits.
struct GridPoint {
    PrimeBase base;
    int m = 0;
    std::vector<std::uint64_t> nums;  // numerators over q^m, one per coordinate

    int s() const { return static_cast<int>(nums.size()); }
    GridCoordinate coord(int j) const { return GridCoordinate(base, m, nums[static_cast<std::size_t>(j)]); }
};

GridPoint point(const GeneratorTuple& T, std::uint64_t n, int m);
std::vector<GridPoint> point_set(const GeneratorTuple& T, std::uint64_t N, int m);

nlohmann::json tuple_to_json(const GeneratorTuple& T);
GeneratorTuple tuple_from_json(const nlohmann::json& j);

}
