#include "vithash/retrieval.hpp"

#include <algorithm>
#include <bit>

namespace vith {

void BinaryCodeSet::push(std::uint64_t id, std::vector<std::uint32_t> item_labels,
                         const std::vector<std::uint64_t>& code_words) {
    if (code_words.size() != words_per_code())
        throw ContractError("code set push: got " + std::to_string(code_words.size()) +
                            " words, want " + std::to_string(words_per_code()));
    ids.push_back(id);
    std::sort(item_labels.begin(), item_labels.end());
    labels.push_back(std::move(item_labels));
    words.insert(words.end(), code_words.begin(), code_words.end());
}

void BinaryCodeSet::validate() const {
    if (labels.size() != ids.size() || words.size() != ids.size() * words_per_code())
        throw ContractError("code set: inconsistent sizes");
    const std::size_t tail = bits % 64;
    if (tail == 0) return;
    const std::uint64_t pad = ~((std::uint64_t{1} << tail) - 1);
    for (std::size_t i = 0; i < size(); ++i)
        if (code(i)[words_per_code() - 1] & pad)
            throw ContractError("code set: nonzero pad bits in item " + std::to_string(i));
}

std::size_t hamming(const std::uint64_t* a, const std::uint64_t* b, std::size_t bits_a,
                    std::size_t bits_b) {
    if (bits_a != bits_b)
        throw ContractError("hamming: code widths differ (" + std::to_string(bits_a) + " vs " +
                            std::to_string(bits_b) + ")");
    std::size_t d = 0;
    for (std::size_t w = 0; w < (bits_a + 63) / 64; ++w) d += std::popcount(a[w] ^ b[w]);
    return d;
}

namespace {

// distances bucketed by value; iterating the db in index order makes each
// bucket ascending, which is exactly the tie rule
std::vector<std::uint32_t> rank_by_buckets(const std::uint64_t* query, const BinaryCodeSet& db,
                                           std::size_t topk) {
    const std::size_t wpc = db.words_per_code();
    std::vector<std::vector<std::uint32_t>> buckets(db.bits + 1);
    for (std::size_t i = 0; i < db.size(); ++i) {
        std::size_t d = 0;
        const std::uint64_t* c = db.code(i);
        for (std::size_t w = 0; w < wpc; ++w) d += std::popcount(query[w] ^ c[w]);
        buckets[d].push_back(std::uint32_t(i));
    }
    std::vector<std::uint32_t> out;
    out.reserve(topk ? topk : db.size());
    for (const auto& bucket : buckets) {
        for (std::uint32_t i : bucket) {
            out.push_back(i);
            if (topk && out.size() == topk) return out;
        }
    }
    return out;
}

}  // namespace

std::vector<std::uint32_t> rank(const std::uint64_t* query, std::size_t query_bits,
                                const BinaryCodeSet& db, std::size_t topk) {
    if (db.size() == 0) throw ContractError("rank: empty database");
    if (query_bits != db.bits)
        throw ContractError("rank: query has " + std::to_string(query_bits) + " bits, db has " +
                            std::to_string(db.bits));
    if (topk > db.size()) throw ContractError("rank: topk exceeds database size");
    return rank_by_buckets(query, db, topk);
}

double average_precision(const std::vector<std::uint8_t>& relevance, std::size_t cutoff,
                         ApNorm norm) {
    if (cutoff > relevance.size())
        throw ContractError("average_precision: cutoff " + std::to_string(cutoff) +
                            " exceeds list length " + std::to_string(relevance.size()));
    std::size_t hits = 0;
    double sum_prec = 0.0;
    for (std::size_t r = 0; r < cutoff; ++r) {
        if (relevance[r]) {
            ++hits;
            sum_prec += double(hits) / double(r + 1);
        }
    }
    std::size_t denom = hits;
    if (norm == ApNorm::MinCutoffRelevant) {
        std::size_t total = 0;
        for (auto v : relevance) total += v;
        denom = std::min(cutoff, total);
    }
    return denom == 0 ? 0.0 : sum_prec / double(denom);
}

MapResult map_at_k(const BinaryCodeSet& queries, const BinaryCodeSet& db, const EvalOptions& opt) {
    if (queries.size() == 0) throw ContractError("map_at_k: no queries");
    if (db.size() == 0) throw ContractError("map_at_k: empty database");
    if (queries.bits != db.bits) throw ContractError("map_at_k: bit width mismatch");
    MapResult res;
    res.per_query_ap.reserve(queries.size());
    std::vector<std::uint8_t> rel;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        auto order = rank_by_buckets(queries.code(q), db, 0);
        rel.clear();
        rel.reserve(order.size());
        for (std::uint32_t i : order) {
            if (opt.exclude_self && db.ids[i] == queries.ids[q]) continue;
            rel.push_back(labels_intersect(queries.labels[q], db.labels[i]) ? 1 : 0);
        }
        const std::size_t cutoff =
            opt.cutoff == 0 ? rel.size() : std::min(opt.cutoff, rel.size());
        res.per_query_ap.push_back(average_precision(rel, cutoff, opt.norm));
    }
    double sum = 0.0;
    for (double ap : res.per_query_ap) sum += ap;
    res.map = sum / double(res.per_query_ap.size());
    return res;
}

PrCurve pr_curve(const BinaryCodeSet& queries, const BinaryCodeSet& db, bool exclude_self) {
    if (queries.size() == 0) throw ContractError("pr_curve: no queries");
    if (db.size() == 0) throw ContractError("pr_curve: empty database");
    if (queries.bits != db.bits) throw ContractError("pr_curve: bit width mismatch");
    constexpr std::size_t kPoints = 21;
    PrCurve pr;
    pr.recall.resize(kPoints);
    pr.precision.assign(kPoints, 0.0);
    for (std::size_t g = 0; g < kPoints; ++g) pr.recall[g] = double(g) * 0.05;
    std::vector<std::uint8_t> rel;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        auto order = rank_by_buckets(queries.code(q), db, 0);
        rel.clear();
        rel.reserve(order.size());
        std::size_t total_rel = 0;
        for (std::uint32_t i : order) {
            if (exclude_self && db.ids[i] == queries.ids[q]) continue;
            const std::uint8_t r = labels_intersect(queries.labels[q], db.labels[i]) ? 1 : 0;
            rel.push_back(r);
            total_rel += r;
        }
        if (total_rel == 0) {
            ++pr.queries_skipped;
            continue;
        }
        ++pr.queries_used;
        // precision at the smallest rank k (1-based) whose recall reaches
        // each grid point; integer test 20*hits >= g*total_rel avoids float
        // fuzz on the grid
        std::size_t hits = 0, k = 0;
        for (std::size_t g = 0; g < kPoints; ++g) {
            while (k < rel.size() && (k == 0 || 20 * hits < g * total_rel)) {
                hits += rel[k];
                ++k;
            }
            pr.precision[g] += double(hits) / double(k);
        }
    }
    if (pr.queries_used == 0) throw ContractError("pr_curve: every query had zero relevant items");
    for (auto& p : pr.precision) p /= double(pr.queries_used);
    return pr;
}

std::string pr_curve_csv(const PrCurve& pr) {
    char buf[64];
    std::string out = "recall,precision\n";
    for (std::size_t i = 0; i < pr.recall.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", pr.recall[i], pr.precision[i]);
        out += buf;
    }
    return out;
}

}  // namespace vith
