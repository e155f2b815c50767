// Acceptance harness: each check prints exactly one line and the process
// exits with the number of failures. Pass criterion numbers as arguments to
// run a subset, e.g. ./acceptance 3 7.
#include <unihr/config.hpp>
#include <unihr/decoder.hpp>
#include <unihr/encoder.hpp>
#include <unihr/eval.hpp>
#include <unihr/fft.hpp>
#include <unihr/hidr.hpp>
#include <unihr/kg.hpp>
#include <unihr/ops_model.hpp>
#include <unihr/params.hpp>
#include <unihr/rng.hpp>
#include <unihr/tensor.hpp>
#include <unihr/train.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <set>
#include <string>
#include <vector>

namespace {

using namespace unihr;
namespace fs = std::filesystem;

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

struct Outcome {
    bool ok = true;
    std::string why;   // first failure, shown on the FAIL line
    std::string note;  // optional detail appended to a pass line
};

void fail(Outcome& o, const std::string& why) {
    if (o.ok) {
        o.ok = false;
        o.why = why;
    }
}

template <typename... A>
std::string fmt(const char* f, A... a) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, a...);
    return buf;
}

// ---- 1: lift/lower round trip ------------------------------------------------

Outcome criterion1() {
    Outcome o;
    const double t0 = now_s();
    const Flavor flavors[] = {Flavor::Triple, Flavor::HKG, Flavor::TKG,
                              Flavor::NKG, Flavor::HTKG};
    for (Flavor fl : flavors) {
        for (int s = 0; s < 200; ++s) {
            SyntheticSpec sp;
            sp.flavor = fl;
            sp.rule = "none";
            sp.n_entities = 8 + (s % 13) * 4;
            sp.n_relations = 2 + s % 7;
            // room for the coverage seeds and the eval split, but well inside
            // the distinct-triple id space of the smallest specs
            const int base = 2 * std::max(sp.n_entities, sp.n_relations);
            const int cap = sp.n_entities * sp.n_entities * sp.n_relations / 2;
            sp.n_facts = base + (s * 53) % std::min(761, cap - base);
            sp.seed = 9000u + 1000u * static_cast<unsigned>(fl) + static_cast<unsigned>(s);
            const SourceDataset ds = generate_synthetic(sp);
            for (const bool all : {false, true}) {
                LiftOptions opts;
                opts.all_fact_nodes = all;
                const SourceDataset back = lower(lift(ds, opts));
                if (!(back == ds)) {
                    fail(o, fmt("%s seed %d all=%d: lower(lift(ds)) != ds",
                                flavor_name(fl), s, all ? 1 : 0));
                    return o;
                }
            }
        }
    }
    const double el = now_s() - t0;
    if (el >= 30.0) fail(o, fmt("round trips took %.1fs, budget 30s", el));
    return o;
}

// ---- 2: connected-fact counts ------------------------------------------------

Outcome criterion2() {
    Outcome o;
    auto check = [&o](const SyntheticSpec& sp, bool all_nodes) {
        const SourceDataset ds = generate_synthetic(sp);
        LiftOptions opts;
        opts.all_fact_nodes = all_nodes;
        const HidrGraph g = lift(ds, opts);
        if (g.n_fact_nodes == 0) {
            fail(o, fmt("%s seed %d: no fact nodes lifted", flavor_name(sp.flavor),
                        static_cast<int>(sp.seed)));
            return;
        }
        std::vector<int> cnt(static_cast<std::size_t>(g.n_fact_nodes), 0);
        const int base = g.node_count() - g.n_fact_nodes;
        for (const HidrTriple& t : g.fc) {
            if (t.src < base) {
                fail(o, "connected-fact triple whose source is not a fact node");
                return;
            }
            ++cnt[static_cast<std::size_t>(t.src - base)];
        }
        for (int f = 0; f < g.n_fact_nodes; ++f) {
            const FactOrigin org = g.fact_origin[static_cast<std::size_t>(f)];
            const std::vector<Fact>* split = org.split == 0   ? &ds.train
                                             : org.split == 1 ? &ds.valid
                                             : org.split == 2 ? &ds.test
                                                              : &ds.extra_train;
            const Fact& src = (*split)[static_cast<std::size_t>(org.pos)];
            const int m = static_cast<int>(src.quals.size());
            int expect = 0;
            bool shape = true;
            switch (ds.flavor) {
                case Flavor::Triple:
                    expect = 3;
                    shape = m == 0 && !src.has_time;
                    break;
                case Flavor::NKG:
                    expect = 3;  // membership edges live in fn, not fc
                    shape = m == 0 && !src.has_time;
                    break;
                case Flavor::HKG:
                    expect = 3 + m;
                    shape = !src.has_time;
                    break;
                case Flavor::TKG:
                    expect = 5;
                    shape = m == 0 && src.has_time;
                    break;
                case Flavor::HTKG:
                    // the interval block appears only on dated facts; planted
                    // rules date every fact, free-form datasets only some
                    expect = 3 + m + (src.has_time ? 2 : 0);
                    if (sp.rule != "none") shape = src.has_time;
                    break;
            }
            if (!shape) {
                fail(o, fmt("%s seed %d fact %d: generated fact violates the "
                            "flavor shape",
                            flavor_name(sp.flavor), static_cast<int>(sp.seed), f));
                return;
            }
            if (cnt[static_cast<std::size_t>(f)] != expect) {
                fail(o, fmt("%s seed %d fact node %d: %d connected-fact triples, "
                            "expected %d",
                            flavor_name(sp.flavor), static_cast<int>(sp.seed), f,
                            cnt[static_cast<std::size_t>(f)], expect));
                return;
            }
        }
    };
    for (int s = 0; s < 12 && o.ok; ++s) {
        const auto seed = static_cast<std::uint64_t>(300 + s);
        for (const Flavor fl :
             {Flavor::HKG, Flavor::TKG, Flavor::HTKG, Flavor::NKG}) {
            check({fl, 40 + 2 * s, 4 + s % 5, 300 + 17 * s, "default", seed}, false);
            if (!o.ok) return o;
            check({fl, 30, 5, 240 + 11 * s, "none", seed}, false);
            if (!o.ok) return o;
        }
        check({Flavor::Triple, 30, 5, 240 + 11 * s, "none", seed}, true);
    }
    return o;
}

// ---- 3: circular correlation fft vs naive ------------------------------------

Outcome criterion3() {
    Outcome o;
    Rng rng(333);
    double worst = 0.0;
    for (int d = 2; d <= 512; ++d) {
        std::vector<double> a(static_cast<std::size_t>(d)), b(a), naive(a);
        for (int rep = 0; rep < 100; ++rep) {
            for (auto& x : a) x = rng.uniform_real(-1.0, 1.0);
            for (auto& x : b) x = rng.uniform_real(-1.0, 1.0);
            const std::vector<double> fast = circ_corr(a, b);
            for (int k = 0; k < d; ++k) {
                double s = 0.0;
                for (int i = 0; i < d; ++i)
                    s += a[static_cast<std::size_t>(i)] *
                         b[static_cast<std::size_t>((i + k) % d)];
                naive[static_cast<std::size_t>(k)] = s;
            }
            for (int k = 0; k < d; ++k)
                worst = std::max(worst, std::abs(fast[static_cast<std::size_t>(k)] -
                                                 naive[static_cast<std::size_t>(k)]));
        }
    }
    if (worst >= 1e-10) fail(o, fmt("max |fft - naive| = %.3g", worst));
    return o;
}

// ---- 4: gradient fidelity ----------------------------------------------------

SourceDataset tiny_hkg() {
    SourceDataset ds;
    ds.flavor = Flavor::HKG;
    for (int i = 0; i < 5; ++i) ds.entities.add("e" + std::to_string(i));
    for (int i = 0; i < 3; ++i) ds.relations.add("r" + std::to_string(i));
    auto fact = [](int h, int r, int t, std::vector<std::pair<int, int>> q) {
        Fact f;
        f.main = {h, r, t};
        f.quals = std::move(q);
        return f;
    };
    ds.train = {fact(0, 1, 1, {{0, 2}}), fact(1, 2, 2, {{0, 3}, {2, 4}}),
                fact(2, 1, 3, {}), fact(3, 2, 0, {{1, 4}}), fact(4, 0, 2, {})};
    ds.valid = {fact(0, 1, 2, {{0, 1}})};
    ds.test = {fact(1, 1, 3, {})};
    return ds;
}

Outcome criterion4() {
    Outcome o;
    const SourceDataset ds = tiny_hkg();
    RunConfig rc;
    rc.flavor = Flavor::HKG;
    rc.encoder.d = 8;
    rc.encoder.layers = 2;
    rc.encoder.intra_heads = 2;
    rc.encoder.intra_dropout = 0.0;
    rc.encoder.inter_dropout = 0.0;
    rc.decoder.layers = 2;
    rc.decoder.heads = 2;
    rc.decoder.dropout = 0.0;
    rc.decoder.max_seq_len = 16;
    Model m = build_model(ds, rc);
    if (m.graph->node_count() > 20)
        fail(o, fmt("graph has %d nodes, wanted <= 20", m.graph->node_count()));

    std::vector<TrainItem> ents, rels;
    entity_train_items(ds, m.binding, false, ents, rels);
    std::vector<SerializedQuery> qs;
    for (std::size_t i = 0; i < ents.size() && i < 6; ++i) qs.push_back(ents[i].q);
    const DecoderBatch db = pack_queries(qs, rc.decoder.max_seq_len);
    auto loss_fn = [&](Tape* tape) -> Tensor {
        const EncodeOut eo = encode(tape, m.binding, m.params, m.enc,
                                    Ablation::None, false, nullptr, nullptr);
        const Tensor pre =
            decode_mask(tape, db, eo.h, eo.e, m.params, m.dec, false, nullptr);
        const Tensor cands = candidate_matrix(tape, m.binding, db.space, eo.h, eo.e);
        return smoothed_ce(tape, score_logits(tape, pre, cands, m.params), db.golds,
                           0.1);
    };
    std::vector<std::string> names;
    for (const auto& [name, p] : m.params.entries()) {
        (void)p;
        names.push_back(name);
    }
    for (const std::string& name : names) {
        const GradCheckResult r = grad_check(m.params, loss_fn, {name}, 1e-5);
        if (r.max_rel_error >= 1e-4) {
            fail(o, fmt("end-to-end %s: rel err %.3g at [%zu]", name.c_str(),
                        r.max_rel_error, r.worst_index));
            return o;
        }
    }

    // individual ops at the tighter bound
    Rng rng(777);
    auto op_check = [&o, &rng](const char* what, auto build, double tol) {
        if (!o.ok) return;
        ParamStore ps;
        auto fn = build(ps);
        for (const auto& [n, p] : ps.entries()) {
            (void)n;
            init_uniform(p.t, rng, -0.9, 0.9);
        }
        std::vector<std::string> all;
        for (const auto& [n, p] : ps.entries()) {
            (void)p;
            all.push_back(n);
        }
        const GradCheckResult r = grad_check(ps, fn, all, 1e-5);
        if (r.max_rel_error >= tol)
            fail(o, fmt("%s: rel err %.3g at %s[%zu]", what, r.max_rel_error,
                        r.worst_param.c_str(), r.worst_index));
    };

    op_check("dense chain", [](ParamStore& ps) {
        ps.add("x", {4, 6});
        ps.add("w", {6, 5});
        ps.add("b", {1, 5});
        ps.add("g", {1, 5});
        ps.add("bb", {1, 5});
        return [&ps](Tape* t) {
            Tensor y = gelu(t, linear(t, ps.get("x"), ps.get("w"), ps.get("b")));
            return sum_all(t, layer_norm_rows(t, y, ps.get("g"), ps.get("bb")));
        };
    }, 1e-6);

    op_check("scoring chain", [](ParamStore& ps) {
        ps.add("a", {3, 4});
        ps.add("c", {5, 4});
        ps.add("bias", {1, 5});
        return [&ps](Tape* t) {
            Tensor y = add_bias(t, matmul_nt(t, ps.get("a"), ps.get("c")),
                                ps.get("bias"));
            return sum_all(t, leaky_relu(t, y, 0.1));
        };
    }, 1e-6);

    op_check("star attention", [](ParamStore& ps) {
        ps.add("src", {9, 8});
        ps.add("w", {1, 8});
        ps.add("v", {9, 8});
        auto offsets = std::make_shared<std::vector<int>>(std::vector<int>{0, 3, 7, 9});
        auto targets = std::make_shared<std::vector<int>>(std::vector<int>{0, 2, 4});
        return [&ps, offsets, targets](Tape* t) {
            Tensor logits = head_dot(t, ps.get("src"), ps.get("w"), 2);
            Tensor alpha = segment_softmax(t, logits, offsets);
            Tensor mixed = head_mul(t, alpha, ps.get("v"));
            return sum_all(t, segment_sum_to(t, mixed, offsets, targets, 5));
        };
    }, 1e-6);

    op_check("relational aggregation", [](ParamStore& ps) {
        ps.add("h", {6, 8});
        ps.add("e", {4, 8});
        ps.add("omega", {1, 3});
        auto edges = std::make_shared<std::vector<RelEdge>>();
        const int recv[] = {0, 1, 2, 3, 4, 5, 0, 2};
        const int send[] = {1, 2, 3, 4, 5, 0, 3, 5};
        const int rel[] = {0, 1, 2, 3, 0, 1, 2, 3};
        for (int i = 0; i < 8; ++i) {
            RelEdge e;
            e.recv = recv[i];
            e.send = send[i];
            e.rel = rel[i];
            e.dir = i % 2 == 0 ? EdgeDir::Forward : EdgeDir::Reverse;
            e.tau = static_cast<EdgeTau>(i % 3);
            edges->push_back(e);
        }
        return [&ps, edges](Tape* t) {
            auto [fwd, rev] = relational_aggregate(t, ps.get("h"), ps.get("e"),
                                                   ps.get("omega"), edges, true);
            return add(t, sum_all(t, fwd), sum_all(t, rev));
        };
    }, 1e-6);

    op_check("sequence attention", [](ParamStore& ps) {
        ps.add("q", {6, 8});
        ps.add("k", {6, 8});
        ps.add("v", {6, 8});
        auto lens = std::make_shared<std::vector<int>>(std::vector<int>{3, 2});
        return [&ps, lens](Tape* t) {
            Rng idle(0);
            return sum_all(t, seq_attention(t, ps.get("q"), ps.get("k"), ps.get("v"),
                                            2, 3, 2, lens, 0.0, idle, false));
        };
    }, 1e-6);

    op_check("time2vec", [](ParamStore& ps) {
        ps.add("wp", {1, 8});
        ps.add("bp", {1, 8});
        ps.add("wnp", {1, 8});
        ps.add("bnp", {1, 8});
        ps.add("omega", {1, 1});
        auto taus = std::make_shared<std::vector<double>>(
            std::vector<double>{0.1, 0.45, 0.9});
        return [&ps, taus](Tape* t) {
            return sum_all(t, time2vec_rows(t, taus, ps.get("wp"), ps.get("bp"),
                                            ps.get("wnp"), ps.get("bnp"),
                                            ps.get("omega")));
        };
    }, 1e-6);

    op_check("smoothed cross entropy", [](ParamStore& ps) {
        ps.add("logits", {5, 7});
        return [&ps](Tape* t) {
            return smoothed_ce(t, ps.get("logits"), {1, 0, 6, 3, 2}, 0.1);
        };
    }, 1e-6);

    return o;
}

// ---- 5: probabilistic plumbing -----------------------------------------------

Outcome criterion5() {
    Outcome o;
    Rng rng(55);

    auto offsets = std::make_shared<std::vector<int>>(std::vector<int>{0, 3, 7, 8, 14});
    Tensor logits = Tensor::zeros({14, 4});
    for (std::size_t i = 0; i < logits.size(); ++i)
        logits.data()[i] = rng.uniform_real(-4.0, 4.0);
    const Tensor alpha = segment_softmax(nullptr, logits, offsets);
    for (std::size_t s = 0; s + 1 < offsets->size(); ++s) {
        for (int hcol = 0; hcol < 4; ++hcol) {
            double sum = 0.0;
            for (int r = (*offsets)[s]; r < (*offsets)[s + 1]; ++r)
                sum += alpha.data()[static_cast<std::size_t>(r) * 4 + hcol];
            if (std::abs(sum - 1.0) >= 1e-9)
                fail(o, fmt("intra attention segment %zu head %d sums to %.12f", s,
                            hcol, sum));
        }
    }

    // rows of the decoder attention are convex weights: identical value rows
    // must pass through untouched
    const int bsz = 3, slen = 4, d = 8;
    Tensor q = Tensor::zeros({bsz * slen, d}), k = Tensor::zeros({bsz * slen, d});
    Tensor v = Tensor::zeros({bsz * slen, d});
    std::vector<double> vrow(static_cast<std::size_t>(d));
    for (auto& x : vrow) x = rng.uniform_real(-2.0, 2.0);
    for (std::size_t i = 0; i < q.size(); ++i) {
        q.data()[i] = rng.uniform_real(-2.0, 2.0);
        k.data()[i] = rng.uniform_real(-2.0, 2.0);
        v.data()[i] = vrow[i % static_cast<std::size_t>(d)];
    }
    auto lens = std::make_shared<std::vector<int>>(std::vector<int>{4, 2, 3});
    Rng idle(0);
    const Tensor att =
        seq_attention(nullptr, q, k, v, bsz, slen, 2, lens, 0.0, idle, false);
    for (int i = 0; i < bsz; ++i)
        for (int s = 0; s < (*lens)[static_cast<std::size_t>(i)]; ++s)
            for (int c = 0; c < d; ++c) {
                const double got =
                    att.data()[static_cast<std::size_t>(i * slen + s) * d + c];
                if (std::abs(got - vrow[static_cast<std::size_t>(c)]) >= 1e-9)
                    fail(o, fmt("attention row (%d,%d) is not convex: %.12f vs %.12f",
                                i, s, got, vrow[static_cast<std::size_t>(c)]));
            }

    Tensor raw = Tensor::zeros({7, 23});
    for (std::size_t i = 0; i < raw.size(); ++i)
        raw.data()[i] = rng.uniform_real(-6.0, 6.0);
    const Tensor probs = softmax_rows(nullptr, raw);
    for (int r = 0; r < 7; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 23; ++c)
            sum += probs.data()[static_cast<std::size_t>(r) * 23 + c];
        if (std::abs(sum - 1.0) >= 1e-9)
            fail(o, fmt("candidate distribution row %d sums to %.12f", r, sum));
    }

    for (const int n : {2, 7, 37, 501}) {
        const Tensor zl = Tensor::zeros({3, n});
        const Tensor loss = smoothed_ce(nullptr, zl, {0, n / 2, n - 1}, 0.0);
        if (std::abs(loss.item() - std::log(n)) >= 1e-9)
            fail(o, fmt("uniform-logit loss for n=%d is %.12f, want ln(n)=%.12f", n,
                        loss.item(), std::log(n)));
    }
    return o;
}

// ---- 6: filtered-ranking oracle ----------------------------------------------

Outcome criterion6() {
    Outcome o;
    Rng rng(66);
    for (int it = 0; it < 1000; ++it) {
        const int n = 2 + static_cast<int>(rng.uniform(199));
        std::vector<double> scores(static_cast<std::size_t>(n));
        for (auto& s : scores) s = 0.25 * static_cast<double>(rng.uniform(9));
        const int gold = static_cast<int>(rng.uniform(static_cast<std::uint64_t>(n)));
        std::vector<int> filtered;
        for (int i = 0; i < n; ++i)
            if (i != gold && rng.uniform(5) == 0) filtered.push_back(i);
        if (rng.uniform(4) == 0) filtered.push_back(gold);  // must never drop gold

        const int got = rank_of(scores, gold, filtered);

        // brute force: sort the survivors, average the gold tie block, round up
        std::vector<char> drop(static_cast<std::size_t>(n), 0);
        for (int f : filtered)
            if (f != gold) drop[static_cast<std::size_t>(f)] = 1;
        std::vector<int> keep;
        for (int i = 0; i < n; ++i)
            if (!drop[static_cast<std::size_t>(i)]) keep.push_back(i);
        std::stable_sort(keep.begin(), keep.end(), [&](int x, int y) {
            return scores[static_cast<std::size_t>(x)] >
                   scores[static_cast<std::size_t>(y)];
        });
        int first = 0, cnt = 0;
        for (std::size_t pos = 0; pos < keep.size(); ++pos) {
            if (scores[static_cast<std::size_t>(keep[pos])] ==
                scores[static_cast<std::size_t>(gold)]) {
                if (cnt == 0) first = static_cast<int>(pos) + 1;
                ++cnt;
            }
        }
        const int want = first + cnt / 2;
        if (got != want) {
            fail(o, fmt("instance %d: rank_of=%d, brute force=%d (n=%d)", it, got,
                        want, n));
            return o;
        }
    }

    // the strict filter lists carried by real query sets keep the gold row
    for (const Flavor fl : {Flavor::HKG, Flavor::TKG, Flavor::NKG}) {
        SyntheticSpec sp{fl, 40, 6, 300, "default", 17};
        const SourceDataset ds = generate_synthetic(sp);
        RunConfig rc;
        rc.flavor = fl;
        rc.encoder.d = 16;
        Model m = build_model(ds, rc);
        TaskSpec task;
        task.kind = default_task(fl);
        task.roles = MaskRoles::AllEntities;
        const QuerySet qs = build_queries(ds, task, m.binding, true);
        if (qs.queries.empty()) fail(o, "no queries built");
        for (const EvalQuery& q : qs.queries) {
            if (std::find(q.filtered.begin(), q.filtered.end(), q.q.gold) ==
                q.filtered.end())
                fail(o, fmt("%s: query filter lost its gold row", flavor_name(fl)));
            const std::size_t nc = static_cast<std::size_t>(m.graph->n_entities);
            std::vector<double> sc(nc);
            for (auto& s : sc) s = rng.uniform_real(0.0, 1.0);
            const int r = rank_of(sc, q.q.gold, q.filtered);
            if (r < 1 || r > static_cast<int>(nc))
                fail(o, "gold was filtered out of its own ranking");
        }
        if (!o.ok) break;
    }
    return o;
}

// ---- 7: planted rule recovery ------------------------------------------------

Outcome criterion7() {
    Outcome o;
    SyntheticSpec sp{Flavor::HKG, 500, 20, 5000, "default", 7};
    const SourceDataset ds = generate_synthetic(sp);

    RunConfig rc;
    rc.flavor = Flavor::HKG;
    rc.encoder.d = 64;
    rc.encoder.intra_dropout = 0.0;
    rc.encoder.inter_dropout = 0.0;
    rc.decoder.dropout = 0.0;
    rc.train.batch_size = 256;
    rc.train.epochs = 78;  // ~11.3 s/epoch on one core keeps this inside 900 s
    rc.train.patience = 78;
    rc.train.lr = 6e-3;
    rc.train.lr_decay = 0.25;
    rc.train.entity_smoothing = 0.1;
    rc.train.seed = 42;
    const TaskSpec task = task_from_config(rc);

    auto fit_once = [&](const std::string& ablate, double& mrr, double& secs) {
        RunConfig r2 = rc;
        r2.ablate = ablate;
        Model m = build_model(ds, r2);
        const double t0 = now_s();
        fit(m, ds, task, r2.train);
        secs = now_s() - t0;
        const RankingReport rep =
            evaluate(m.binding, m.params, m.enc, m.dec, ds, task, true, m.ablate,
                     256, nullptr, eval_edges(m));
        mrr = rep.categories.at("all_entities").mrr;
    };

    double mrr = 0.0, secs = 0.0;
    fit_once("", mrr, secs);
    if (secs >= 900.0)
        fail(o, fmt("training took %.0fs, budget 900s", secs));
    if (mrr < 0.95)
        fail(o, fmt("held-out all-entities MRR %.4f < 0.95 (%.0fs)", mrr, secs));

    double mrr_ab = 0.0, secs_ab = 0.0;
    fit_once("intra", mrr_ab, secs_ab);
    if (!(mrr_ab < mrr))
        fail(o, fmt("intra ablation MRR %.4f is not below full %.4f", mrr_ab, mrr));

    if (o.ok)
        o.note = fmt("mrr %.4f in %.0fs, intra-ablated %.4f", mrr, secs, mrr_ab);
    return o;
}

// ---- 8: triple-prediction regime ---------------------------------------------

Outcome criterion8() {
    Outcome o;
    SyntheticSpec sp{Flavor::NKG, 60, 6, 400, "default", 11};
    const SourceDataset ds = generate_synthetic(sp);

    RunConfig rc;
    rc.flavor = Flavor::NKG;
    rc.encoder.d = 16;
    rc.encoder.intra_heads = 2;
    rc.train.task = "triple-pred";
    rc.train.batch_size = 64;
    rc.train.epochs = 2;
    rc.train.patience = 5;
    rc.train.lr = 1e-3;
    rc.train.seed = 13;

    Model m = build_model(ds, rc);
    const Tensor ent = m.params.get("enc.ent");
    const std::vector<double> before(ent.data(), ent.data() + ent.size());
    const Tensor probe = m.params.get("dec.f.w");
    const std::vector<double> probe_before(probe.data(), probe.data() + probe.size());

    fit_triple_prediction(m, ds, rc.train);

    const Tensor after = m.params.get("enc.ent");
    if (std::memcmp(before.data(), after.data(),
                    before.size() * sizeof(double)) != 0)
        fail(o, "frozen atomic embedding rows changed during training");
    const Tensor probe_after = m.params.get("dec.f.w");
    if (std::memcmp(probe_before.data(), probe_after.data(),
                    probe_before.size() * sizeof(double)) == 0)
        fail(o, "training was a no-op: decoder weights did not move");
    for (int l = 0; l < m.enc.layers; ++l) {
        const Tensor om = m.params.get("enc.l" + std::to_string(l) + ".inter.omega");
        if (om.data()[static_cast<int>(EdgeTau::Nested)] != 0.0)
            fail(o, fmt("layer %d nested gate parameter moved off zero", l));
    }

    // drop mode: the nested edges disappear from every message list
    RunConfig rc2 = rc;
    rc2.train.nested_gate_mode = "drop";
    Model md = build_model(ds, rc2);
    const auto dropped = eval_edges(md);
    if (!dropped) {
        fail(o, "drop mode did not produce a filtered adjacency");
        return o;
    }
    for (const RelEdge& e : *dropped)
        if (e.tau == EdgeTau::Nested) fail(o, "nested edge survived drop mode");
    if (dropped->size() >= md.binding.full_edges->size())
        fail(o, "graph has no nested edges; drop mode check is vacuous");

    auto hand = std::make_shared<std::vector<RelEdge>>();
    for (const RelEdge& e : *md.binding.full_edges)
        if (e.tau != EdgeTau::Nested) hand->push_back(e);
    const EncodeOut via_drop = encode(nullptr, md.binding, md.params, md.enc,
                                      Ablation::None, false, nullptr, dropped);
    const EncodeOut via_hand = encode(nullptr, md.binding, md.params, md.enc,
                                      Ablation::None, false, nullptr, hand);
    const EncodeOut via_full = encode(nullptr, md.binding, md.params, md.enc,
                                      Ablation::None, false, nullptr, nullptr);
    if (std::memcmp(via_drop.h.data(), via_hand.h.data(),
                    via_drop.h.size() * sizeof(double)) != 0)
        fail(o, "drop-mode encoding differs from the hand-filtered edge list");
    if (std::memcmp(via_drop.h.data(), via_full.h.data(),
                    via_drop.h.size() * sizeof(double)) == 0)
        fail(o, "nested edges contribute nothing even when kept; check is vacuous");
    return o;
}

// ---- 9: hybrid merge plumbing ------------------------------------------------

Outcome criterion9() {
    Outcome o;
    SyntheticSpec spa{Flavor::HKG, 120, 10, 900, "none", 21};
    const SourceDataset A = generate_synthetic(spa);

    // second side: 50 entity labels shared with A, the rest disjoint; every
    // organic fact pins an x-side entity so no main can collide with A
    SourceDataset B;
    B.flavor = Flavor::Triple;
    for (int i = 0; i < 50; ++i) B.entities.add("e" + std::to_string(i));
    for (int i = 0; i < 70; ++i) B.entities.add("x" + std::to_string(i));
    for (int i = 0; i < 10; ++i) B.relations.add("r" + std::to_string(i));
    std::set<std::array<int, 3>> used;
    auto mk = [](int h, int r, int t) {
        Fact f;
        f.main = {h, r, t};
        return f;
    };
    for (int i = 0; i < 140; ++i) {
        const int h = 50 + i % 70, r = i % 10, t = (i * 13 + 7) % 120;
        used.insert({h, r, t});
        B.train.push_back(mk(h, r, t));
    }
    auto organic = [&](int i) {
        int h = 50 + (i * 3 + 1) % 70, r = (i + 3) % 10, t = (i * 29 + 5) % 120;
        while (!used.insert({h, r, t}).second) t = (t + 1) % 120;
        return mk(h, r, t);
    };
    for (int i = 0; i < 20; ++i) B.valid.push_back(organic(i));
    std::set<std::string> organic_mains;
    for (int i = 20; i < 50; ++i) {
        const Fact f = organic(i);
        organic_mains.insert(B.entities.label(f.main.h) + "|" +
                             B.relations.label(f.main.r) + "|" +
                             B.entities.label(f.main.t));
        B.test.push_back(f);
    }

    // planted leaks: copies of A training mains whose endpoints are shared;
    // ids differ per side, so the copies go through the labels
    int planted = 0;
    for (const Fact& f : A.train) {
        if (planted == 6) break;
        const int hb = B.entities.find(A.entities.label(f.main.h));
        const int tb = B.entities.find(A.entities.label(f.main.t));
        const int rb = B.relations.find(A.relations.label(f.main.r));
        if (hb < 0 || tb < 0 || rb < 0) continue;
        if (!used.insert({hb, rb, tb}).second) continue;
        B.test.push_back(mk(hb, rb, tb));
        ++planted;
    }
    if (planted != 6) {
        fail(o, fmt("only %d leak candidates found in the generated side", planted));
        return o;
    }

    auto [merged, rep] = merge_hybrid(A, B);
    if (rep.shared_entities != 50)
        fail(o, fmt("shared entities %zu, expected 50", rep.shared_entities));
    if (rep.shared_relations != 10)
        fail(o, fmt("shared relations %zu, expected 10", rep.shared_relations));
    if (rep.removed_from_a != 0)
        fail(o, fmt("%zu facts removed from the first side, expected 0",
                    rep.removed_from_a));
    if (rep.removed_from_b != 6)
        fail(o, fmt("%zu facts removed from the second side, expected the 6 leaks",
                    rep.removed_from_b));
    if (merged.entities.size() != 190)
        fail(o, fmt("merged vocabulary has %d entities, expected 190",
                    merged.entities.size()));
    if (static_cast<int>(merged.test.size()) !=
        static_cast<int>(A.test.size()) + 30)
        fail(o, fmt("merged test split has %zu facts, expected %zu",
                    merged.test.size(), A.test.size() + 30));

    // survivors from the handcrafted side are exactly the organic facts
    const std::vector<std::vector<int>> groups = tests_by_origin(merged);
    if (groups.size() != 2) {
        fail(o, fmt("%zu test origins, expected 2", groups.size()));
        return o;
    }
    if (groups[0].size() != A.test.size() || groups[1].size() != 30)
        fail(o, fmt("origin groups sized %zu/%zu, expected %zu/30",
                    groups[0].size(), groups[1].size(), A.test.size()));
    for (const int ti : groups[1]) {
        const Fact& f = merged.test[static_cast<std::size_t>(ti)];
        const std::string key = merged.entities.label(f.main.h) + "|" +
                                merged.relations.label(f.main.r) + "|" +
                                merged.entities.label(f.main.t);
        if (!organic_mains.count(key)) {
            fail(o, "a non-organic fact survived the leakage filter: " + key);
            break;
        }
    }

    RunConfig rc;
    rc.flavor = merged.flavor;
    rc.encoder.d = 16;
    rc.encoder.intra_heads = 2;
    Model m = build_model(merged, rc);
    if (m.graph->n_entities != 190)
        fail(o, fmt("lifted graph has %d entities, expected 190", m.graph->n_entities));
    if (m.params.get("enc.ent").rows() != 190)
        fail(o, fmt("embedding table has %d rows, expected one per shared entity "
                    "and 190 total",
                    m.params.get("enc.ent").rows()));

    const TaskSpec task = task_from_config(rc);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const RankingReport r =
            evaluate(m.binding, m.params, m.enc, m.dec, merged, task, true,
                     Ablation::None, 256, &groups[gi], eval_edges(m));
        const auto it = r.categories.find("all_entities");
        if (it == r.categories.end() || it->second.n <= 0)
            fail(o, fmt("per-source report %zu is empty", gi));
    }
    return o;
}

// ---- 10: config-snapshot determinism -----------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Outcome criterion10() {
    Outcome o;
    std::error_code ec;
    const fs::path bin =
        fs::read_symlink("/proc/self/exe", ec).parent_path() / "unihr";
    if (ec || !fs::exists(bin)) {
        fail(o, "unihr binary not found next to this executable");
        return o;
    }
    const fs::path base = fs::temp_directory_path() / "unihr_accept_c10";
    fs::remove_all(base, ec);
    fs::create_directories(base / "ds");
    const fs::path log = base / "log.txt";

    SyntheticSpec sp{Flavor::HKG, 60, 6, 600, "default", 3};
    {
        std::ofstream os(base / "spec.json");
        os << sp.to_json().dump(1) << "\n";
    }
    {
        nlohmann::ordered_json cfg;
        cfg["dataset"] = (base / "ds").string();
        cfg["flavor"] = "hkg";
        cfg["out"] = (base / "runA").string();
        cfg["encoder"] = {{"d", 16}, {"intra_heads", 2}};
        cfg["train"] = {{"batch_size", 128}, {"epochs", 2}, {"patience", 2},
                        {"lr", 1e-3},        {"seed", 9}};
        std::ofstream os(base / "cfg.json");
        os << cfg.dump(1) << "\n";
    }
    auto run = [&](const std::string& args) {
        const std::string cmd = "\"" + bin.string() + "\" " + args + " >> \"" +
                                log.string() + "\" 2>&1";
        return std::system(cmd.c_str()) == 0;
    };
    const std::string ds = (base / "ds").string();
    const std::string runa = (base / "runA").string();
    const std::string runb = (base / "runB").string();
    if (!run("gen \"" + (base / "spec.json").string() + "\" \"" + ds + "\""))
        fail(o, "gen failed; see " + log.string());
    else if (!run("train \"" + (base / "cfg.json").string() + "\""))
        fail(o, "first train failed; see " + log.string());
    else if (!run("eval \"" + (base / "cfg.json").string() + "\" \"" + runa +
                  "/checkpoint.bin\""))
        fail(o, "first eval failed; see " + log.string());
    else if (!run("train \"" + runa + "/config_snapshot.json\" --out \"" + runb +
                  "\""))
        fail(o, "snapshot train failed; see " + log.string());
    else if (!run("eval \"" + runa + "/config_snapshot.json\" \"" + runb +
                  "/checkpoint.bin\" --out \"" + runb + "\""))
        fail(o, "snapshot eval failed; see " + log.string());
    else {
        const std::string ma = slurp(base / "runA" / "metrics.json");
        const std::string mb = slurp(base / "runB" / "metrics.json");
        if (ma.empty())
            fail(o, "first run produced no metrics");
        else if (ma != mb)
            fail(o, "metrics differ between the original and snapshot reruns");
    }
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> pick;
    for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
    struct Entry {
        int id;
        Outcome (*fn)();
    };
    const Entry entries[] = {{1, criterion1}, {2, criterion2}, {3, criterion3},
                             {4, criterion4}, {5, criterion5}, {6, criterion6},
                             {7, criterion7}, {8, criterion8}, {9, criterion9},
                             {10, criterion10}};
    int failures = 0;
    for (const Entry& e : entries) {
        if (!pick.empty() && !pick.count(e.id)) continue;
        Outcome r;
        try {
            r = e.fn();
        } catch (const std::exception& ex) {
            r.ok = false;
            r.why = std::string("exception: ") + ex.what();
        }
        if (r.ok && r.note.empty())
            std::printf("criterion %d: pass\n", e.id);
        else if (r.ok)
            std::printf("criterion %d: pass (%s)\n", e.id, r.note.c_str());
        else {
            std::printf("criterion %d: FAIL (%s)\n", e.id, r.why.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    return failures;
}
