#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "unihr/eval.hpp"
#include "unihr/kg.hpp"

using namespace unihr;

namespace {

// independent full-sort oracle: drop filtered competitors, sort descending,
// place the gold tie block at its average position rounded up
int rank_oracle(const std::vector<double>& sc, int gold, std::vector<int> filt) {
    std::sort(filt.begin(), filt.end());
    const double gs = sc[static_cast<std::size_t>(gold)];
    std::vector<double> kept;
    for (int i = 0; i < static_cast<int>(sc.size()); ++i) {
        if (i != gold && std::binary_search(filt.begin(), filt.end(), i)) continue;
        kept.push_back(sc[static_cast<std::size_t>(i)]);
    }
    std::sort(kept.begin(), kept.end(), std::greater<>());
    const auto lo = std::lower_bound(kept.begin(), kept.end(), gs, std::greater<>());
    const auto hi = std::upper_bound(kept.begin(), kept.end(), gs, std::greater<>());
    const int first = static_cast<int>(lo - kept.begin());
    const int cnt = static_cast<int>(hi - lo);
    return first + (cnt + 2) / 2;
}

struct EvalRig {
    SourceDataset ds;
    HidrGraph g;
    EncoderBinding b;
    ParamStore ps;
    EncoderConfig ecfg;
    DecoderConfig dcfg;

    explicit EvalRig(Flavor fl, std::uint64_t seed = 11, bool all_fact_nodes = false,
                     int n_facts = 40) {
        SyntheticSpec spec;
        spec.flavor = fl;
        spec.n_entities = 9;
        spec.n_relations = 3;
        spec.n_facts = n_facts;
        spec.rule = "none";
        spec.seed = seed;
        ds = generate_synthetic(spec);
        LiftOptions opts;
        opts.all_fact_nodes = all_fact_nodes;
        g = lift(train_view(ds), opts);
        b = bind_graph(g);
        ecfg.d = 8;
        ecfg.layers = 1;
        ecfg.intra_heads = 2;
        ecfg.intra_dropout = 0.0;
        ecfg.inter_dropout = 0.0;
        dcfg.layers = 1;
        dcfg.heads = 2;
        dcfg.dropout = 0.0;
        dcfg.max_seq_len = 16;
        Rng rng(derive_seed(seed, 0xeba1));
        init_encoder_params(ps, b, ecfg, rng);
        init_decoder_params(ps, dcfg, ecfg.d, rng);
    }
};

// a small hand-built HKG with controlled filter collisions
SourceDataset filter_fixture() {
    SourceDataset ds;
    ds.flavor = Flavor::HKG;
    for (const char* e : {"a", "b", "c", "d", "v", "w"}) ds.entities.add(e);
    ds.relations.add("r");
    ds.relations.add("k");
    auto fact = [&](const char* h, const char* t, const char* qv) {
        Fact f;
        f.main = {ds.entities.find(h), 0, ds.entities.find(t)};
        f.quals = {{1, ds.entities.find(qv)}};
        return f;
    };
    ds.train = {fact("a", "b", "v"), fact("a", "c", "v"), fact("a", "d", "w"),
                fact("b", "c", "w"), fact("c", "a", "v"), fact("d", "b", "w")};
    ds.valid = {fact("b", "a", "v")};
    ds.test = {fact("a", "b", "w")};
    return ds;
}

}  // namespace

TEST_CASE("rank matches a full-sort oracle on randomized instances", "[eval]") {
    Rng rng(517);
    for (int it = 0; it < 1000; ++it) {
        const int n = 2 + static_cast<int>(rng.uniform_real() * 49);
        std::vector<double> sc(static_cast<std::size_t>(n));
        const bool coarse = rng.uniform_real() < 0.5;  // force score ties
        for (double& s : sc) {
            s = rng.uniform_real();
            if (coarse) s = std::floor(s * 4.0) / 4.0;
        }
        const int gold = static_cast<int>(rng.uniform_real() * n);
        std::vector<int> filt;
        for (int i = 0; i < n; ++i)
            if (rng.uniform_real() < 0.3) filt.push_back(i);
        if (rng.uniform_real() < 0.5) filt.push_back(gold);
        REQUIRE(rank_of(sc, gold, filt) == rank_oracle(sc, gold, filt));
    }
}

TEST_CASE("rank handles edge placements", "[eval]") {
    SECTION("unique maximum ranks first") {
        REQUIRE(rank_of({0.1, 0.9, 0.3}, 1, {}) == 1);
    }
    SECTION("filtered competitors vanish") {
        // both better scores are known answers
        REQUIRE(rank_of({0.9, 0.8, 0.1}, 2, {0, 1, 2}) == 1);
    }
    SECTION("gold never drops out of its own filter set") {
        REQUIRE(rank_of({0.9, 0.1}, 1, {1}) == 2);
    }
    SECTION("two-way tie resolves to the worse half") {
        REQUIRE(rank_of({0.5, 0.5}, 0, {}) == 2);
        // three-way tie: positions 1..3 average to 2
        REQUIRE(rank_of({0.5, 0.5, 0.5}, 1, {}) == 2);
    }
}

TEST_CASE("metric aggregation reproduces hand-computed values", "[eval]") {
    const CategoryMetrics m = aggregate_ranks({1, 2, 10});
    REQUIRE(m.n == 3);
    REQUIRE(m.mr == Catch::Approx(13.0 / 3.0).margin(1e-12));
    REQUIRE(m.mrr == Catch::Approx((1.0 + 0.5 + 0.1) / 3.0).margin(1e-12));
    REQUIRE(m.hits1 == Catch::Approx(1.0 / 3.0).margin(1e-12));
    REQUIRE(m.hits3 == Catch::Approx(2.0 / 3.0).margin(1e-12));
    REQUIRE(m.hits10 == Catch::Approx(1.0).margin(1e-12));

    SECTION("perfect scorer gives unit metrics") {
        const CategoryMetrics p = aggregate_ranks(std::vector<int>(50, 1));
        REQUIRE(p.mr == 1.0);
        REQUIRE(p.mrr == 1.0);
        REQUIRE(p.hits1 == 1.0);
    }
    SECTION("antioracle scores zero hits when enough candidates survive") {
        // gold strictly worst among 20 unfiltered candidates
        std::vector<double> sc(20);
        for (int i = 0; i < 20; ++i) sc[static_cast<std::size_t>(i)] = 1.0 - 0.01 * i;
        const int r = rank_of(sc, 19, {});
        REQUIRE(r == 20);
        const CategoryMetrics a = aggregate_ranks({r});
        REQUIRE(a.hits10 == 0.0);
    }
    SECTION("a distractor below gold changes no metric") {
        Rng rng(91);
        for (int it = 0; it < 200; ++it) {
            const int n = 3 + static_cast<int>(rng.uniform_real() * 20);
            std::vector<double> sc(static_cast<std::size_t>(n));
            for (double& s : sc) s = rng.uniform_real();
            const int gold = static_cast<int>(rng.uniform_real() * n);
            const int base = rank_of(sc, gold, {});
            sc.push_back(sc[static_cast<std::size_t>(gold)] - 0.5);
            REQUIRE(rank_of(sc, gold, {}) == base);
        }
    }
}

TEST_CASE("strict filter keys span full facts, loose keys the main triple", "[eval]") {
    const SourceDataset ds = filter_fixture();
    const int a = 0, b = 1, c = 2, d = 3;

    SECTION("shared full query collects every tail") {
        const FilterIndex ix = build_filter_index(ds, true);
        // (a, r, ?) with k:v holds for tails b and c, but not d (k:w)
        Fact probe = ds.train[0];
        const auto* tails = ix.find_entity(eval_detail::entity_key(probe, 1, true));
        REQUIRE(tails != nullptr);
        REQUIRE(*tails == std::vector<int>{b, c});
    }
    SECTION("loose keys ignore the qualifiers") {
        const FilterIndex ix = build_filter_index(ds, false);
        Fact probe = ds.train[0];
        const auto* tails = ix.find_entity(eval_detail::entity_key(probe, 1, false));
        REQUIRE(tails != nullptr);
        // k:v and k:w variants of (a, r, ?) merge, and the test fact adds b again
        REQUIRE(*tails == std::vector<int>{b, c, d});
    }
    SECTION("gold is always inside its own set") {
        for (const bool strict : {true, false}) {
            const FilterIndex ix = build_filter_index(ds, strict);
            for (const auto* split : {&ds.train, &ds.valid, &ds.test})
                for (const Fact& f : *split) {
                    const auto* hs = ix.find_entity(eval_detail::entity_key(f, 0, strict));
                    REQUIRE(hs != nullptr);
                    REQUIRE(std::count(hs->begin(), hs->end(), f.main.h) == 1);
                    const auto* ts = ix.find_entity(eval_detail::entity_key(f, 1, strict));
                    REQUIRE(ts != nullptr);
                    REQUIRE(std::count(ts->begin(), ts->end(), f.main.t) == 1);
                    const auto* vs = ix.find_entity(eval_detail::entity_key(f, 2, strict));
                    REQUIRE(vs != nullptr);
                    REQUIRE(std::count(vs->begin(), vs->end(), f.quals[0].second) == 1);
                }
        }
    }
    SECTION("qualifier order does not split strict keys") {
        Fact x, y;
        x.main = {a, 0, b};
        x.quals = {{1, 4}, {0, 5}};
        y.main = {a, 0, b};
        y.quals = {{0, 5}, {1, 4}};
        REQUIRE(eval_detail::entity_key(x, 0, true) ==
                eval_detail::entity_key(y, 0, true));
    }
}

TEST_CASE("build_queries emits one query per maskable slot", "[eval]") {
    EvalRig rig(Flavor::HKG);
    SECTION("subject/object masks exactly head and tail") {
        TaskSpec task{TaskKind::HkgLP, MaskRoles::SubjectObject};
        const QuerySet qs = build_queries(rig.ds, task, rig.b, true);
        REQUIRE(qs.queries.size() == 2 * rig.ds.test.size());
        for (std::size_t i = 0; i < qs.queries.size(); ++i) {
            const EvalQuery& q = qs.queries[i];
            REQUIRE(q.main_slot);
            REQUIRE(q.q.mask_pos == (i % 2 == 0 ? 0 : 2));
            REQUIRE(q.q.space == CandidateSpace::Entities);
            // strict filter always contains the gold filler
            REQUIRE(std::count(q.filtered.begin(), q.filtered.end(), q.q.gold) == 1);
        }
    }
    SECTION("all-entities adds the qualifier values") {
        TaskSpec task{TaskKind::HkgLP, MaskRoles::AllEntities};
        const QuerySet qs = build_queries(rig.ds, task, rig.b, true);
        std::size_t expect = 0;
        for (const Fact& f : rig.ds.test) expect += 2 + f.quals.size();
        REQUIRE(qs.queries.size() == expect);
        for (const EvalQuery& q : qs.queries)
            REQUIRE(std::count(q.filtered.begin(), q.filtered.end(), q.q.gold) == 1);
    }
    SECTION("task and flavor must agree") {
        TaskSpec task{TaskKind::TkgLP, MaskRoles::SubjectObject};
        REQUIRE_THROWS_AS(build_queries(rig.ds, task, rig.b, true),
                          std::invalid_argument);
    }
    SECTION("subset restricts the source facts") {
        TaskSpec task{TaskKind::HkgLP, MaskRoles::SubjectObject};
        const std::vector<int> pick = {0};
        const QuerySet qs = build_queries(rig.ds, task, rig.b, true, &pick);
        REQUIRE(qs.queries.size() == 2);
    }
}

TEST_CASE("evaluate is deterministic and schema-shaped", "[eval]") {
    EvalRig rig(Flavor::HKG);
    TaskSpec task{TaskKind::HkgLP, MaskRoles::AllEntities};
    const RankingReport r1 =
        evaluate(rig.b, rig.ps, rig.ecfg, rig.dcfg, rig.ds, task, true);
    const RankingReport r2 =
        evaluate(rig.b, rig.ps, rig.ecfg, rig.dcfg, rig.ds, task, true);
    REQUIRE(r1.to_json().dump() == r2.to_json().dump());
    REQUIRE(r1.ranks == r2.ranks);

    REQUIRE(r1.task == "hkg-lp");
    REQUIRE(r1.filter_mode == "strict");
    REQUIRE(r1.categories.count("subject_object") == 1);
    REQUIRE(r1.categories.count("all_entities") == 1);
    const CategoryMetrics& so = r1.categories.at("subject_object");
    const CategoryMetrics& ae = r1.categories.at("all_entities");
    REQUIRE(static_cast<std::size_t>(ae.n) == r1.ranks.size());
    REQUIRE(so.n == 2 * static_cast<int>(rig.ds.test.size()));
    for (const CategoryMetrics* m : {&so, &ae}) {
        REQUIRE(m->mr >= 1.0);
        REQUIRE(m->mrr > 0.0);
        REQUIRE(m->mrr <= 1.0);
        REQUIRE(m->hits1 <= m->hits3);
        REQUIRE(m->hits3 <= m->hits10);
    }
    for (int r : r1.ranks) {
        REQUIRE(r >= 1);
        REQUIRE(r <= rig.g.n_entities);
    }

    SECTION("json object carries the declared keys in order") {
        const auto j = r1.to_json();
        REQUIRE(j.contains("task"));
        REQUIRE(j.contains("filter_mode"));
        REQUIRE(j.contains("categories"));
        const auto& cat = j.at("categories").at("subject_object");
        const std::vector<std::string> keys = {"mr", "mrr", "hits1", "hits3", "hits10", "n"};
        std::size_t at = 0;
        for (auto it = cat.begin(); it != cat.end(); ++it, ++at)
            REQUIRE(it.key() == keys.at(at));
    }
    SECTION("rank dump is newline-delimited") {
        const std::string dump = r1.dump_ranks();
        REQUIRE(std::count(dump.begin(), dump.end(), '\n') ==
                static_cast<long>(r1.ranks.size()));
    }
    SECTION("loose filtering is reported and at least as harsh on competitors") {
        const RankingReport loose =
            evaluate(rig.b, rig.ps, rig.ecfg, rig.dcfg, rig.ds, task, false);
        REQUIRE(loose.filter_mode == "loose");
        REQUIRE(loose.ranks.size() == r1.ranks.size());
    }
}

TEST_CASE("unseen test timestamps ride on appended rows", "[eval]") {
    SourceDataset ds;
    ds.flavor = Flavor::TKG;
    for (const char* e : {"a", "b", "c"}) ds.entities.add(e);
    ds.relations.add("r");
    auto timed = [&](int h, int t, std::int64_t tb, std::int64_t te) {
        Fact f;
        f.main = {h, 0, t};
        f.has_time = true;
        f.begin = tb;
        f.end = te;
        return f;
    };
    ds.train = {timed(0, 1, 0, 10), timed(1, 2, 5, 10), timed(2, 0, 0, 5)};
    ds.test = {timed(0, 2, 7, 25)};  // 7 and 25 are not train timestamps

    const HidrGraph g = lift(train_view(ds));
    const EncoderBinding b = bind_graph(g);
    EncoderConfig ecfg;
    ecfg.d = 8;
    ecfg.layers = 1;
    ecfg.intra_heads = 2;
    ecfg.intra_dropout = 0.0;
    ecfg.inter_dropout = 0.0;
    DecoderConfig dcfg;
    dcfg.layers = 1;
    dcfg.heads = 2;
    dcfg.dropout = 0.0;
    ParamStore ps;
    Rng rng(7);
    init_encoder_params(ps, b, ecfg, rng);
    init_decoder_params(ps, dcfg, ecfg.d, rng);

    TaskSpec task{TaskKind::TkgLP, MaskRoles::SubjectObject};
    const QuerySet qs = build_queries(ds, task, b, true);
    REQUIRE(qs.aux.taus->size() == 2);
    const RankingReport rep = evaluate(b, ps, ecfg, dcfg, ds, task, true);
    REQUIRE(rep.ranks.size() == 2);
    REQUIRE(rep.categories.at("subject_object").n == 2);
}

TEST_CASE("triple prediction ranks fact nodes", "[eval]") {
    EvalRig rig(Flavor::NKG, 23, /*all_fact_nodes=*/true);
    REQUIRE(!rig.ds.nested_test.empty());
    TaskSpec task{TaskKind::TriplePrediction, MaskRoles::FactSlots};
    const QuerySet qs = build_queries(rig.ds, task, rig.b, true);
    REQUIRE(qs.space == CandidateSpace::FactNodes);
    REQUIRE(qs.queries.size() == 2 * rig.ds.nested_test.size());
    for (const EvalQuery& q : qs.queries) {
        REQUIRE(q.q.gold >= 0);
        REQUIRE(q.q.gold < rig.g.n_fact_nodes);
        REQUIRE(std::count(q.filtered.begin(), q.filtered.end(), q.q.gold) == 1);
    }

    const RankingReport r1 =
        evaluate(rig.b, rig.ps, rig.ecfg, rig.dcfg, rig.ds, task, true);
    const RankingReport r2 =
        evaluate(rig.b, rig.ps, rig.ecfg, rig.dcfg, rig.ds, task, true);
    REQUIRE(r1.to_json().dump() == r2.to_json().dump());
    REQUIRE(r1.task == "triple-prediction");
    REQUIRE(r1.categories.count("triple_prediction") == 1);
    REQUIRE(r1.categories.at("triple_prediction").n ==
            static_cast<int>(qs.queries.size()));
    for (int r : r1.ranks) {
        REQUIRE(r >= 1);
        REQUIRE(r <= rig.g.n_fact_nodes);
    }
}

TEST_CASE("conve scorers evaluate main-triple queries", "[eval]") {
    EvalRig rig(Flavor::HKG, 31);
    Rng crng(derive_seed(31, 0xc0));
    init_conve_params(rig.ps, rig.ecfg.d, rig.g.n_source_relations, crng);
    TaskSpec task{TaskKind::HkgLP, MaskRoles::SubjectObject};

    for (const char* kind : {"conve-sh", "conve-sf"}) {
        DecoderConfig dcfg = rig.dcfg;
        dcfg.kind = kind;
        const RankingReport r1 =
            evaluate(rig.b, rig.ps, rig.ecfg, dcfg, rig.ds, task, true);
        const RankingReport r2 =
            evaluate(rig.b, rig.ps, rig.ecfg, dcfg, rig.ds, task, true);
        REQUIRE(r1.to_json().dump() == r2.to_json().dump());
        REQUIRE(r1.ranks.size() == 2 * rig.ds.test.size());
        for (int r : r1.ranks) {
            REQUIRE(r >= 1);
            REQUIRE(r <= rig.g.n_entities);
        }
    }

    SECTION("qualifier slots are out of reach") {
        DecoderConfig dcfg = rig.dcfg;
        dcfg.kind = "conve-sh";
        TaskSpec all{TaskKind::HkgLP, MaskRoles::AllEntities};
        REQUIRE_THROWS_AS(evaluate(rig.b, rig.ps, rig.ecfg, dcfg, rig.ds, all, true),
                          std::invalid_argument);
    }
    SECTION("fact-node queries are out of reach") {
        EvalRig nrig(Flavor::NKG, 23, true);
        Rng nrng(derive_seed(23, 0xc1));
        init_conve_params(nrig.ps, nrig.ecfg.d, nrig.g.n_source_relations, nrng);
        DecoderConfig dcfg = nrig.dcfg;
        dcfg.kind = "conve-sf";
        TaskSpec tp{TaskKind::TriplePrediction, MaskRoles::FactSlots};
        REQUIRE_THROWS_AS(evaluate(nrig.b, nrig.ps, nrig.ecfg, dcfg, nrig.ds, tp, true),
                          std::invalid_argument);
    }
}
