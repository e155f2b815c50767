#pragma once
// Query generation, strict filtered ranking, and metric aggregation.

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "unihr/decoder.hpp"
#include "unihr/encoder.hpp"

namespace unihr {

// ---- tasks ----

enum class TaskKind { BaseLP, HkgLP, TkgLP, HtkgLP, TriplePrediction };
enum class MaskRoles { SubjectObject, AllEntities, FactSlots };

struct TaskSpec {
    TaskKind kind = TaskKind::BaseLP;
    MaskRoles roles = MaskRoles::SubjectObject;

    void validate() const {
        if ((kind == TaskKind::TriplePrediction) != (roles == MaskRoles::FactSlots))
            throw std::invalid_argument(
                "TaskSpec: fact-slot masking and triple prediction go together");
    }
};

inline std::string task_name(TaskKind k) {
    switch (k) {
        case TaskKind::BaseLP: return "base-lp";
        case TaskKind::HkgLP: return "hkg-lp";
        case TaskKind::TkgLP: return "tkg-lp";
        case TaskKind::HtkgLP: return "htkg-lp";
        case TaskKind::TriplePrediction: return "triple-prediction";
    }
    throw std::logic_error("task_name: bad kind");
}

inline TaskKind default_task(Flavor f) {
    switch (f) {
        case Flavor::Triple: return TaskKind::BaseLP;
        case Flavor::HKG: return TaskKind::HkgLP;
        case Flavor::TKG: return TaskKind::TkgLP;
        case Flavor::HTKG: return TaskKind::HtkgLP;
        case Flavor::NKG: return TaskKind::BaseLP;  // atomic level unless asked
    }
    throw std::logic_error("default_task: bad flavor");
}

inline void check_task_flavor(TaskKind k, Flavor f) {
    const bool ok = (k == TaskKind::BaseLP && (f == Flavor::Triple || f == Flavor::NKG)) ||
                    (k == TaskKind::HkgLP && f == Flavor::HKG) ||
                    (k == TaskKind::TkgLP && f == Flavor::TKG) ||
                    (k == TaskKind::HtkgLP && f == Flavor::HTKG) ||
                    (k == TaskKind::TriplePrediction && f == Flavor::NKG);
    if (!ok) throw std::invalid_argument("task does not match the dataset flavor");
}

// ---- filter index ----

namespace eval_detail {

// Canonical key for one masked slot: the fact with -1 at the hole and its
// qualifiers sorted, so reordered qualifier lists describe the same query.
// Roles: 0 head, 1 tail, 2 qualifier value (which one is implied by the hole).
inline std::pair<int, Fact> entity_key(const Fact& f, int role, bool strict) {
    Fact k;
    int out_role = role;
    if (strict) {
        k = f;
        if (role == 0)
            k.main.h = -1;
        else if (role == 1)
            k.main.t = -1;
        else
            k.quals[role - 2].second = -1;
        if (role >= 2) out_role = 2;
    } else {
        // loose keys keep the main triple (plus the queried key alone)
        k.main = f.main;
        if (role == 0)
            k.main.h = -1;
        else if (role == 1)
            k.main.t = -1;
        else {
            k.quals = {{f.quals[role - 2].first, -1}};
            out_role = 2;
        }
    }
    std::sort(k.quals.begin(), k.quals.end());
    return {out_role, std::move(k)};
}

inline std::pair<int, NestedFact> fact_key(const NestedFact& n, int role) {
    NestedFact k = n;
    (role == 0 ? k.sub : k.obj) = {-1, -1, -1};
    return {role, std::move(k)};
}

}  // namespace eval_detail

// Known-true fillers per masked query, across every split. Strict keys carry
// the full fact (qualifiers and interval included); loose keys only the main
// triple. The gold filler of any indexed fact is always in its own set.
struct FilterIndex {
    std::map<std::pair<int, Fact>, std::vector<int>> entity;
    std::map<std::pair<int, NestedFact>, std::vector<int>> fact;

    const std::vector<int>* find_entity(const std::pair<int, Fact>& k) const {
        const auto it = entity.find(k);
        return it == entity.end() ? nullptr : &it->second;
    }
    const std::vector<int>* find_fact(const std::pair<int, NestedFact>& k) const {
        const auto it = fact.find(k);
        return it == fact.end() ? nullptr : &it->second;
    }
};

// fact_ids maps atomic train triples to their graph fact nodes; only needed
// for the triple-prediction part of the index.
inline FilterIndex build_filter_index(const SourceDataset& ds, bool strict,
                                      const std::map<TripleRef, int>* fact_ids = nullptr) {
    FilterIndex ix;
    for (const auto* split : {&ds.train, &ds.valid, &ds.test, &ds.extra_train})
        for (const Fact& f : *split) {
            ix.entity[eval_detail::entity_key(f, 0, strict)].push_back(f.main.h);
            ix.entity[eval_detail::entity_key(f, 1, strict)].push_back(f.main.t);
            for (int i = 0; i < static_cast<int>(f.quals.size()); ++i)
                ix.entity[eval_detail::entity_key(f, 2 + i, strict)].push_back(
                    f.quals[i].second);
        }
    if (fact_ids)
        for (const auto* split : {&ds.nested_train, &ds.nested_valid, &ds.nested_test})
            for (const NestedFact& n : *split) {
                const auto s = fact_ids->find(n.sub);
                const auto o = fact_ids->find(n.obj);
                // members without a fact node are not candidates anywhere
                if (s != fact_ids->end())
                    ix.fact[eval_detail::fact_key(n, 0)].push_back(s->second);
                if (o != fact_ids->end())
                    ix.fact[eval_detail::fact_key(n, 1)].push_back(o->second);
            }
    auto dedup = [](auto& m) {
        for (auto& [k, v] : m) {
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
        }
    };
    dedup(ix.entity);
    dedup(ix.fact);
    return ix;
}

// ---- ranking ----

// Filtered competitors removed, then 1 + #better; a tied block resolves to
// its average position, rounded up.
inline int rank_of(const std::vector<double>& scores, int gold,
                   const std::vector<int>& filtered) {
    if (gold < 0 || gold >= static_cast<int>(scores.size()))
        throw std::invalid_argument("rank_of: gold outside the score vector");
    std::vector<char> drop(scores.size(), 0);
    for (int f : filtered)
        if (f != gold) drop[static_cast<std::size_t>(f)] = 1;
    const double gs = scores[static_cast<std::size_t>(gold)];
    int greater = 0, ties = 0;
    for (int i = 0; i < static_cast<int>(scores.size()); ++i) {
        if (i == gold || drop[static_cast<std::size_t>(i)]) continue;
        if (scores[static_cast<std::size_t>(i)] > gs)
            ++greater;
        else if (scores[static_cast<std::size_t>(i)] == gs)
            ++ties;
    }
    return 1 + greater + (ties + 1) / 2;
}

struct CategoryMetrics {
    double mr = 0.0, mrr = 0.0, hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;
    int n = 0;
};

inline CategoryMetrics aggregate_ranks(const std::vector<int>& ranks) {
    CategoryMetrics m;
    m.n = static_cast<int>(ranks.size());
    if (m.n == 0) return m;
    double sr = 0.0, srr = 0.0;
    int h1 = 0, h3 = 0, h10 = 0;
    for (int r : ranks) {
        sr += r;
        srr += 1.0 / r;
        h1 += r <= 1;
        h3 += r <= 3;
        h10 += r <= 10;
    }
    m.mr = sr / m.n;
    m.mrr = srr / m.n;
    m.hits1 = static_cast<double>(h1) / m.n;
    m.hits3 = static_cast<double>(h3) / m.n;
    m.hits10 = static_cast<double>(h10) / m.n;
    return m;
}

struct RankingReport {
    std::string task;
    std::string filter_mode;
    std::map<std::string, CategoryMetrics> categories;
    std::vector<int> ranks;  // raw, in query order

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["task"] = task;
        j["filter_mode"] = filter_mode;
        nlohmann::ordered_json cats(nlohmann::ordered_json::value_t::object);
        for (const auto& [name, m] : categories)
            cats[name] = {{"mr", m.mr},       {"mrr", m.mrr},     {"hits1", m.hits1},
                          {"hits3", m.hits3}, {"hits10", m.hits10}, {"n", m.n}};
        j["categories"] = cats;
        return j;
    }

    std::string dump_ranks() const {
        std::string s;
        for (int r : ranks) {
            s += std::to_string(r);
            s += '\n';
        }
        return s;
    }
};

// ---- query building ----

struct EvalQuery {
    SerializedQuery q;
    std::vector<int> filtered;  // known-true candidate rows, gold included
    bool main_slot = true;      // head or tail of the main triple
    int left_ent = -1;          // conve: the visible main entity
    int rel = -1;               // conve: main relation
    bool head_side = false;     // conve: masked slot is the head
};

struct QuerySet {
    TaskSpec task;
    bool strict = true;
    CandidateSpace space = CandidateSpace::Entities;
    std::vector<EvalQuery> queries;
    AuxTimes aux;
};

// Graph fact node of each atomic train triple; first occurrence wins, the
// same way lift wires nested edges.
inline std::map<TripleRef, int> train_fact_ids(const SourceDataset& ds,
                                               const HidrGraph& g) {
    std::map<TripleRef, int> ids;
    for (int f = 0; f < g.n_fact_nodes; ++f) {
        const FactOrigin o = g.fact_origin[static_cast<std::size_t>(f)];
        if (o.split != 0) continue;
        ids.emplace(ds.train[static_cast<std::size_t>(o.pos)].main, f);
    }
    return ids;
}

// One query per maskable slot per test fact, each carrying its filter set.
// subset restricts the (nested) test facts by index; the index always spans
// the whole dataset.
inline QuerySet build_queries(const SourceDataset& ds, const TaskSpec& task,
                              const EncoderBinding& b, bool strict,
                              const std::vector<int>* subset = nullptr) {
    task.validate();
    check_task_flavor(task.kind, ds.flavor);
    QuerySet out;
    out.task = task;
    out.strict = strict;

    if (task.kind == TaskKind::TriplePrediction) {
        out.space = CandidateSpace::FactNodes;
        const std::map<TripleRef, int> fact_ids = train_fact_ids(ds, *b.g);
        const FilterIndex ix = build_filter_index(ds, strict, &fact_ids);
        auto run = [&](int i) {
            const NestedFact& nf = ds.nested_test[static_cast<std::size_t>(i)];
            const auto s = fact_ids.find(nf.sub);
            const auto o = fact_ids.find(nf.obj);
            if (s == fact_ids.end() || o == fact_ids.end())
                throw std::invalid_argument(
                    "triple prediction: nested test member has no fact node in the "
                    "train graph");
            for (int mask : {0, 2}) {
                EvalQuery q;
                q.q = make_fact_query(b, s->second, nf.rel, o->second, mask);
                if (const auto* fs =
                        ix.find_fact(eval_detail::fact_key(nf, mask == 0 ? 0 : 1)))
                    q.filtered = *fs;
                out.queries.push_back(std::move(q));
            }
        };
        if (subset)
            for (int i : *subset) run(i);
        else
            for (int i = 0; i < static_cast<int>(ds.nested_test.size()); ++i) run(i);
        return out;
    }

    const FilterIndex ix = build_filter_index(ds, strict);
    auto run = [&](int i) {
        const Fact& f = ds.test[static_cast<std::size_t>(i)];
        const std::vector<FactSlot> slots = fact_slots(b, f, out.aux);
        auto add = [&](int slot_idx, int role, bool main) {
            EvalQuery q;
            q.q = make_entity_query(slots, slot_idx);
            if (const auto* fs =
                    ix.find_entity(eval_detail::entity_key(f, role, strict)))
                q.filtered = *fs;
            q.main_slot = main;
            q.left_ent = role == 0 ? f.main.t : f.main.h;
            q.rel = f.main.r;
            q.head_side = role == 0;
            out.queries.push_back(std::move(q));
        };
        add(0, 0, true);
        add(2, 1, true);
        if (task.roles == MaskRoles::AllEntities)
            for (int qi = 0; qi < static_cast<int>(f.quals.size()); ++qi)
                add(4 + 2 * qi, 2 + qi, false);
    };
    if (subset)
        for (int i : *subset) run(i);
    else
        for (int i = 0; i < static_cast<int>(ds.test.size()); ++i) run(i);
    return out;
}

// ---- scoring paths ----

namespace eval_detail {

inline std::vector<double> tensor_row(const Tensor& t, int row) {
    const double* p = t.data() + static_cast<std::size_t>(row) * t.cols();
    return std::vector<double>(p, p + t.cols());
}

// log softmax of one raw row, evaluated at one column
inline double log_softmax_at(const double* row, int n, int col) {
    double mx = row[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    double se = 0.0;
    for (int i = 0; i < n; ++i) se += std::exp(row[i] - mx);
    return row[col] - mx - std::log(se);
}

inline std::vector<int> rep_rows(int n) { return std::vector<int>(n, 0); }

}  // namespace eval_detail

// Transformer scoring: one masked decode per query batch against the full
// candidate table.
inline void score_transformer(const QuerySet& qs, const EncoderBinding& b,
                              ParamStore& ps, const DecoderConfig& dcfg,
                              const Tensor& h, const Tensor& e, int batch,
                              std::vector<int>& ranks) {
    const Tensor cands = candidate_matrix(nullptr, b, qs.space, h, e);
    const int nq = static_cast<int>(qs.queries.size());
    for (int at = 0; at < nq; at += batch) {
        const int take = std::min(batch, nq - at);
        std::vector<SerializedQuery> pack;
        pack.reserve(static_cast<std::size_t>(take));
        for (int i = 0; i < take; ++i)
            pack.push_back(qs.queries[static_cast<std::size_t>(at + i)].q);
        const DecoderBatch db = pack_queries(pack, dcfg.max_seq_len);
        const Tensor pre = decode_mask(nullptr, db, h, e, ps, dcfg);
        const Tensor logits = score_logits(nullptr, pre, cands, ps);
        for (int i = 0; i < take; ++i) {
            const EvalQuery& q = qs.queries[static_cast<std::size_t>(at + i)];
            ranks.push_back(
                rank_of(eval_detail::tensor_row(logits, i), q.q.gold, q.filtered));
        }
    }
}

// ConvE main-triple scoring: tails from (h, r), heads through the learned
// inverse-relation rows.
inline void score_conve_sh(const QuerySet& qs, const EncoderBinding& b,
                           ParamStore& ps, const Tensor& h, const Tensor& e,
                           std::vector<int>& ranks) {
    const Tensor cands = gather_rows(nullptr, h, candidate_rows(b, CandidateSpace::Entities));
    for (const EvalQuery& q : qs.queries) {
        const Tensor left =
            gather_rows(nullptr, h, {b.g->ent_node(q.left_ent)});
        const Tensor rel = q.head_side
                               ? gather_rows(nullptr, ps.get("conve.inv_rel"), {q.rel})
                               : gather_rows(nullptr, e, {q.rel});
        const Tensor logits = conve_logits(nullptr, left, rel, cands, ps);
        ranks.push_back(rank_of(eval_detail::tensor_row(logits, 0), q.q.gold, q.filtered));
    }
}

// ConvE fact-link scoring: substitute each candidate into the fact-node map,
// then add the log-likelihoods of the two connected edges (f, hasHead, h) and
// (f, hasTail, t).
inline void score_conve_sf(const QuerySet& qs, const EncoderBinding& b,
                           ParamStore& ps, const EncoderConfig& ecfg, const Tensor& h,
                           const Tensor& e, std::vector<int>& ranks) {
    const int ne = b.g->n_entities;
    const Tensor cands = gather_rows(nullptr, h, candidate_rows(b, CandidateSpace::Entities));
    const Tensor head_rel = gather_rows(nullptr, e, {b.rel_label_count + 1});
    const Tensor tail_rel = gather_rows(nullptr, e, {b.rel_label_count + 2});
    const std::vector<int> rep = eval_detail::rep_rows(ne);
    for (const EvalQuery& q : qs.queries) {
        const Tensor known = gather_rows(
            nullptr, h, std::vector<int>(static_cast<std::size_t>(ne),
                                         b.g->ent_node(q.left_ent)));
        const Tensor rr = gather_rows(
            nullptr, matmul(nullptr, gather_rows(nullptr, e, {q.rel}), ps.get("enc.w_r")),
            rep);
        Tensor fhat = linear(
            nullptr,
            concat_cols(nullptr, q.head_side
                                     ? std::vector<Tensor>{cands, rr, known}
                                     : std::vector<Tensor>{known, rr, cands}),
            ps.get("enc.fm.w"), ps.get("enc.fm.b"));
        if (ecfg.fact_post_activation) fhat = relu(nullptr, fhat);
        // rows: candidate index; cols: entity id
        const Tensor lg_head = conve_logits(nullptr, fhat, gather_rows(nullptr, head_rel, rep),
                                            cands, ps);
        const Tensor lg_tail = conve_logits(nullptr, fhat, gather_rows(nullptr, tail_rel, rep),
                                            cands, ps);
        const Tensor& lg_known = q.head_side ? lg_tail : lg_head;
        const Tensor& lg_cand = q.head_side ? lg_head : lg_tail;
        std::vector<double> scores(static_cast<std::size_t>(ne));
        for (int c = 0; c < ne; ++c) {
            const double* kr = lg_known.data() + static_cast<std::size_t>(c) * ne;
            const double* cr = lg_cand.data() + static_cast<std::size_t>(c) * ne;
            scores[static_cast<std::size_t>(c)] =
                eval_detail::log_softmax_at(kr, ne, q.left_ent) +
                eval_detail::log_softmax_at(cr, ne, c);
        }
        ranks.push_back(rank_of(scores, q.q.gold, q.filtered));
    }
}

// ---- evaluation ----

// Deterministic filtered evaluation over the test split: encode once with the
// full adjacency, score every query, aggregate per category.
inline RankingReport evaluate(const EncoderBinding& b, ParamStore& ps,
                              const EncoderConfig& ecfg, const DecoderConfig& dcfg,
                              const SourceDataset& ds, const TaskSpec& task,
                              bool strict, Ablation ab = Ablation::None,
                              int eval_batch = 256,
                              const std::vector<int>* subset = nullptr,
                              std::shared_ptr<const std::vector<RelEdge>> edges = nullptr) {
    if (dcfg.kind != "transformer") {
        if (task.kind == TaskKind::TriplePrediction)
            throw std::invalid_argument("conve scoring covers entity queries only");
        if (task.roles != MaskRoles::SubjectObject)
            throw std::invalid_argument("conve scoring covers main-triple slots only");
    }
    QuerySet qs = build_queries(ds, task, b, strict, subset);

    RankingReport rep;
    rep.task = task_name(task.kind);
    rep.filter_mode = strict ? "strict" : "loose";

    const EncodeOut eo = encode(nullptr, b, ps, ecfg, ab, false, nullptr, edges);
    const Tensor h = extend_with_aux_times(nullptr, b, eo.h, ps, qs.aux);

    if (!qs.queries.empty()) {
        if (dcfg.kind == "transformer")
            score_transformer(qs, b, ps, dcfg, h, eo.e, eval_batch, rep.ranks);
        else if (dcfg.kind == "conve-sh")
            score_conve_sh(qs, b, ps, h, eo.e, rep.ranks);
        else if (dcfg.kind == "conve-sf")
            score_conve_sf(qs, b, ps, ecfg, h, eo.e, rep.ranks);
        else
            throw std::invalid_argument("evaluate: unknown decoder kind " + dcfg.kind);
    }

    if (task.kind == TaskKind::TriplePrediction) {
        rep.categories["triple_prediction"] = aggregate_ranks(rep.ranks);
    } else {
        std::vector<int> main_ranks;
        for (std::size_t i = 0; i < rep.ranks.size(); ++i)
            if (qs.queries[i].main_slot) main_ranks.push_back(rep.ranks[i]);
        rep.categories["subject_object"] = aggregate_ranks(main_ranks);
        if (task.roles == MaskRoles::AllEntities)
            rep.categories["all_entities"] = aggregate_ranks(rep.ranks);
    }
    return rep;
}

}  // namespace unihr
