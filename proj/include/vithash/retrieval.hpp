#pragma once

// Binary code store, Hamming ranking, mAP@K, and precision-recall curves.
// The desk-scale databases are exhaustively rankable, so no index structure.

#include <cstdint>
#include <string>
#include <vector>

#include "vithash/errors.hpp"
#include "vithash/labels.hpp"

namespace vith {

struct BinaryCodeSet {
    std::size_t bits = 0;
    std::vector<std::uint64_t> words;                 // size() * words_per_code(), pad bits zero
    std::vector<std::vector<std::uint32_t>> labels;   // sorted ascending per item
    std::vector<std::uint64_t> ids;

    std::size_t size() const { return ids.size(); }
    std::size_t words_per_code() const { return (bits + 63) / 64; }
    const std::uint64_t* code(std::size_t i) const { return words.data() + i * words_per_code(); }

    void push(std::uint64_t id, std::vector<std::uint32_t> item_labels,
              const std::vector<std::uint64_t>& code_words);
    void validate() const;  // sizes agree, pad bits clear
};

std::size_t hamming(const std::uint64_t* a, const std::uint64_t* b, std::size_t bits_a,
                    std::size_t bits_b);

inline std::size_t hamming(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b,
                           std::size_t bits) {
    return hamming(a.data(), b.data(), bits, bits);
}

// Database indices by ascending distance to the query code, ties by
// ascending index, truncated to topk (0 = all).
std::vector<std::uint32_t> rank(const std::uint64_t* query, std::size_t query_bits,
                                const BinaryCodeSet& db, std::size_t topk = 0);

// AP over a ranked 0/1 relevance list: mean of precision@r over relevant
// ranks r within the cutoff, divided per `norm` below; 0 when nothing
// relevant lands in the cutoff.
enum class ApNorm {
    HitsInCutoff,       // divide by the number of relevant items inside the cutoff
    MinCutoffRelevant,  // divide by min(cutoff, total relevant in the full list)
};

double average_precision(const std::vector<std::uint8_t>& relevance, std::size_t cutoff,
                         ApNorm norm = ApNorm::HitsInCutoff);

struct EvalOptions {
    std::size_t cutoff = 0;          // 0 = database size
    bool exclude_self = false;       // drop db items whose id equals the query id
    ApNorm norm = ApNorm::HitsInCutoff;
};

struct MapResult {
    double map = 0.0;
    std::vector<double> per_query_ap;
};

MapResult map_at_k(const BinaryCodeSet& queries, const BinaryCodeSet& db, const EvalOptions& opt);

// Macro-averaged precision at the fixed recall grid {0, 0.05, ..., 1.0}.
// Per query, precision is taken at the smallest rank reaching each recall
// level; queries with no relevant database item are skipped and counted.
struct PrCurve {
    std::vector<double> recall;     // the grid
    std::vector<double> precision;  // macro average per grid point
    std::size_t queries_used = 0;
    std::size_t queries_skipped = 0;
};

PrCurve pr_curve(const BinaryCodeSet& queries, const BinaryCodeSet& db,
                 bool exclude_self = false);

std::string pr_curve_csv(const PrCurve& pr);

}  // namespace vith
