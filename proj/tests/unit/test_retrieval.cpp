#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "helpers.hpp"
#include "vithash/retrieval.hpp"
#include "vithash/rng.hpp"

using namespace vith;

namespace {

// independent per-bit reference for the packed popcount distance
std::size_t naive_hamming(std::uint64_t a, std::uint64_t b, std::size_t bits) {
    std::size_t d = 0;
    for (std::size_t i = 0; i < bits; ++i)
        d += ((a >> i) & 1) != ((b >> i) & 1) ? 1 : 0;
    return d;
}

BinaryCodeSet make_set(std::size_t bits) {
    BinaryCodeSet s;
    s.bits = bits;
    return s;
}

// database of n random codes over `classes` labels, single-label
BinaryCodeSet random_db(std::size_t n, std::size_t bits, std::size_t classes, Prng& rng,
                        std::uint64_t id0 = 0) {
    auto db = make_set(bits);
    const std::size_t wpc = (bits + 63) / 64;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::uint64_t> w(wpc);
        for (auto& x : w) x = rng.next_u64();
        if (bits % 64) w.back() &= (std::uint64_t{1} << (bits % 64)) - 1;
        db.push(id0 + i, {std::uint32_t(rng.next_u64() % classes)}, w);
    }
    return db;
}

}  // namespace

TEST_CASE("hamming distance: hand cases and packed vs per-bit") {
    std::vector<std::uint64_t> a = {0b1010}, b = {0b0110};
    CHECK(hamming(a, b, 4) == 2);
    CHECK(hamming(a, a, 4) == 0);
    CHECK_THROWS_AS(hamming(a.data(), b.data(), 4, 8), ContractError);

    Prng rng(42);
    for (int trial = 0; trial < 100000; ++trial) {
        const std::uint64_t x = rng.next_u64(), y = rng.next_u64();
        std::vector<std::uint64_t> xa = {x}, ya = {y};
        if (hamming(xa, ya, 64) != naive_hamming(x, y, 64)) {
            REQUIRE(hamming(xa, ya, 64) == naive_hamming(x, y, 64));
        }
    }
    // multi-word codes
    std::vector<std::uint64_t> m1 = {~0ull, 0b1}, m2 = {0ull, 0b0};
    CHECK(hamming(m1, m2, 65) == 65);
}

TEST_CASE("ranking: order and tie rule") {
    auto db = make_set(4);
    db.push(0, {0}, {0b0000});
    db.push(1, {0}, {0b1111});
    db.push(2, {0}, {0b0011});
    std::uint64_t q = 0b0000;
    auto order = rank(&q, 4, db);
    CHECK(order == std::vector<std::uint32_t>{0, 2, 1});

    // all-equal codes: ties broken by ascending index
    auto tie = make_set(4);
    for (std::size_t i = 0; i < 5; ++i) tie.push(i, {0}, {0b1010});
    auto t = rank(&q, 4, tie);
    CHECK(t == std::vector<std::uint32_t>{0, 1, 2, 3, 4});

    // topk truncates, topk > size is a contract error
    CHECK(rank(&q, 4, db, 2) == std::vector<std::uint32_t>{0, 2});
    CHECK_THROWS_AS(rank(&q, 4, db, 9), ContractError);
    auto empty = make_set(4);
    CHECK_THROWS_AS(rank(&q, 4, empty), ContractError);
    CHECK_THROWS_AS(rank(&q, 8, db), ContractError);
}

TEST_CASE("ranking matches a full sort with the same tie rule") {
    Prng rng(7);
    auto db = random_db(200, 16, 4, rng);
    std::uint64_t q = rng.next_u64() & 0xFFFF;
    auto got = rank(&q, 16, db);

    std::vector<std::uint32_t> want(200);
    for (std::uint32_t i = 0; i < 200; ++i) want[i] = i;
    std::stable_sort(want.begin(), want.end(), [&](std::uint32_t x, std::uint32_t y) {
        return hamming(db.code(x), &q, 16, 16) < hamming(db.code(y), &q, 16, 16);
    });
    CHECK(got == want);
}

TEST_CASE("average precision: hand cases") {
    using V = std::vector<std::uint8_t>;
    // hits at ranks 1 and 3: (1/1 + 2/3) / 2 = 5/6
    CHECK(average_precision(V{1, 0, 1}, 3) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(average_precision(V{1, 1, 1}, 3) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(average_precision(V{0, 0, 0}, 3) == 0.0);
    // cutoff shorter than the list
    CHECK(average_precision(V{0, 1, 1, 1}, 2) == doctest::Approx(0.5 / 1.0).epsilon(1e-12));
    // the other normalization divides by min(cutoff, total relevant)
    CHECK(average_precision(V{1, 0, 1, 1}, 2, ApNorm::MinCutoffRelevant) ==
          doctest::Approx(1.0 / 2.0).epsilon(1e-12));
    CHECK(average_precision(V{1, 0, 1}, 3, ApNorm::MinCutoffRelevant) ==
          doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
    CHECK_THROWS_AS(average_precision(V{1, 0}, 3), ContractError);
}

TEST_CASE("map matches a brute-force reference") {
    for (std::size_t bits : {16u, 32u, 64u}) {
        Prng rng(100 + bits);
        auto db = random_db(200, bits, 4, rng);
        auto queries = random_db(20, bits, 4, rng, 1000);
        EvalOptions opt;
        opt.cutoff = 50;
        auto got = map_at_k(queries, db, opt);

        // independent reference: unpack bits, sort indices, accumulate AP
        double total = 0;
        for (std::size_t qi = 0; qi < queries.size(); ++qi) {
            std::vector<std::uint32_t> order(db.size());
            for (std::uint32_t i = 0; i < db.size(); ++i) order[i] = i;
            auto dist = [&](std::uint32_t i) {
                std::size_t d = 0;
                for (std::size_t bb = 0; bb < bits; ++bb) {
                    const bool qa = (queries.code(qi)[bb / 64] >> (bb % 64)) & 1;
                    const bool da = (db.code(i)[bb / 64] >> (bb % 64)) & 1;
                    d += qa != da ? 1 : 0;
                }
                return d;
            };
            std::stable_sort(order.begin(), order.end(),
                             [&](std::uint32_t x, std::uint32_t y) { return dist(x) < dist(y); });
            double ap = 0;
            std::size_t hits = 0;
            for (std::size_t r = 0; r < 50; ++r) {
                const bool rel = labels_intersect(queries.labels[qi], db.labels[order[r]]);
                if (rel) {
                    ++hits;
                    ap += double(hits) / double(r + 1);
                }
            }
            total += hits ? ap / double(hits) : 0.0;
        }
        CHECK(got.map == doctest::Approx(total / 20.0).epsilon(1e-12));
        CHECK(got.per_query_ap.size() == 20);
    }
}

TEST_CASE("map is order-invariant when distances are unique") {
    // ties break by database index, so insertion order matters only among
    // equidistant codes; make every distance distinct to isolate the rest
    Prng rng(9);
    auto db = make_set(64);
    for (std::size_t i = 0; i < 60; ++i) {
        // code i = i low bits set -> distance i from the all-zero query
        const std::uint64_t w = i == 0 ? 0 : (i == 64 ? ~0ull : (std::uint64_t{1} << i) - 1);
        db.push(i, {std::uint32_t(rng.next_u64() % 3)}, {w});
    }
    auto queries = make_set(64);
    for (std::size_t i = 0; i < 5; ++i) queries.push(1000 + i, {std::uint32_t(i % 3)}, {0});

    auto rev = make_set(64);
    for (std::size_t i = db.size(); i > 0; --i)
        rev.push(db.ids[i - 1], db.labels[i - 1], {db.code(i - 1)[0]});

    EvalOptions opt;
    opt.cutoff = 25;
    CHECK(map_at_k(queries, db, opt).map ==
          doctest::Approx(map_at_k(queries, rev, opt).map).epsilon(1e-12));
}

TEST_CASE("self-exclusion drops matching ids") {
    auto db = make_set(8);
    db.push(1, {0}, {0b1});
    db.push(2, {0}, {0b11});
    db.push(3, {1}, {0xFF});
    auto q = make_set(8);
    q.push(1, {0}, {0b1});  // present in the db under the same id

    EvalOptions opt;
    opt.cutoff = 2;
    opt.exclude_self = true;
    auto r = map_at_k(q, db, opt);
    // candidates are items 2 and 3 only; item 2 shares the label at rank 1
    CHECK(r.map == doctest::Approx(1.0).epsilon(1e-12));

    opt.exclude_self = false;
    auto r2 = map_at_k(q, db, opt);
    CHECK(r2.map == doctest::Approx(1.0).epsilon(1e-12));  // exact dup ranks first anyway

    // a cutoff above the database size clamps to the full list
    EvalOptions big;
    big.cutoff = 10;
    EvalOptions all;
    all.cutoff = 3;
    CHECK(map_at_k(q, db, big).map == doctest::Approx(map_at_k(q, db, all).map).epsilon(1e-12));
}

TEST_CASE("pr curve: perfect, inverted, and skip accounting") {
    // db of 10: one relevant item per query at the nearest position
    auto db = make_set(8);
    for (std::size_t i = 0; i < 10; ++i)
        db.push(i, {i == 0 ? 0u : 1u}, {std::uint64_t(i)});
    auto q = make_set(8);
    q.push(100, {0}, {0});  // distance 0 to the only relevant item

    auto pr = pr_curve(q, db);
    REQUIRE(pr.recall.size() == 21);
    REQUIRE(pr.precision.size() == 21);
    CHECK(pr.recall.front() == 0.0);
    CHECK(pr.recall.back() == 1.0);
    for (std::size_t g = 0; g + 1 < pr.recall.size(); ++g)
        CHECK(pr.recall[g] < pr.recall[g + 1]);
    for (double p : pr.precision) CHECK(p == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pr.queries_used == 1);
    CHECK(pr.queries_skipped == 0);

    // inverted: the one relevant item ranks last out of 10
    auto qb = make_set(8);
    qb.push(101, {0}, {0xFF});
    // code 0xFF: distances to db codes 0..9 put item 0 (the relevant one,
    // code 0) at the very end
    auto pr2 = pr_curve(qb, db);
    // recall 1 needs the full list: precision 1/10; recall 0 is precision@1
    // and the top-ranked item is irrelevant
    CHECK(pr2.precision.back() == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(pr2.precision.front() == 0.0);

    // a query whose label never appears in the db is skipped and counted
    auto qc = make_set(8);
    qc.push(102, {7}, {0});
    qc.push(103, {0}, {0});
    auto pr3 = pr_curve(qc, db);
    CHECK(pr3.queries_used == 1);
    CHECK(pr3.queries_skipped == 1);

    auto qd = make_set(8);
    qd.push(104, {7}, {0});
    CHECK_THROWS_AS(pr_curve(qd, db), ContractError);

    auto csv = pr_curve_csv(pr);
    CHECK(csv.find("recall,precision") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 22);  // header + 21 grid rows
}

TEST_CASE("code set validation") {
    auto s = make_set(8);
    s.push(0, {2, 1}, {0b1});
    CHECK(s.labels[0] == std::vector<std::uint32_t>{1, 2});  // push sorts labels
    s.validate();

    // pad bits must be zero
    auto bad = make_set(8);
    bad.push(0, {0}, {0x100});
    CHECK_THROWS_AS(bad.validate(), ContractError);

    // word count must match the bit width
    auto wrong = make_set(65);
    CHECK_THROWS_AS(wrong.push(0, {0}, {0b1}), ContractError);
}
