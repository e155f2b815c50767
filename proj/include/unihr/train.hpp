#pragma once
// Training loops: masked-query epochs, early stopping on validation MRR, the
// frozen/drop nested-gate modes, and the two joint-learning regimes.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "unihr/config.hpp"
#include "unihr/eval.hpp"

namespace unihr {

// One trained artifact: the lifted train graph, its binding, and parameters.
// The graph lives behind a shared_ptr so the binding's pointer survives moves.
struct Model {
    std::shared_ptr<HidrGraph> graph;
    EncoderBinding binding;
    ParamStore params;
    EncoderConfig enc;
    DecoderConfig dec;
    Ablation ablate = Ablation::None;
    std::string gate_mode = "frozen-zero";
};

inline TaskSpec task_from_config(const RunConfig& rc) {
    TaskSpec t;
    if (rc.train.task == "triple-pred") {
        t.kind = TaskKind::TriplePrediction;
        t.roles = MaskRoles::FactSlots;
    } else {
        t.kind = default_task(rc.flavor);
        t.roles = rc.decoder.kind == "transformer" ? MaskRoles::AllEntities
                                                   : MaskRoles::SubjectObject;
    }
    return t;
}

inline Model build_model(const SourceDataset& ds, const RunConfig& rc) {
    rc.validate();
    Model m;
    LiftOptions opts;
    opts.all_fact_nodes =
        rc.train.task == "triple-pred" || rc.train.joint_mode == "multitask";
    m.graph = std::make_shared<HidrGraph>(lift(train_view(ds), opts));
    m.binding = bind_graph(*m.graph);
    m.enc = rc.encoder;
    m.dec = rc.decoder;
    m.ablate = parse_ablation(rc.ablate);
    m.gate_mode = rc.train.nested_gate_mode;
    Rng rng(derive_seed(rc.train.seed, 0x1a17));
    init_encoder_params(m.params, m.binding, m.enc, rng);
    init_decoder_params(m.params, m.dec, m.enc.d, rng);
    if (m.dec.kind != "transformer")
        init_conve_params(m.params, m.enc.d, m.graph->n_source_relations, rng);
    return m;
}

// In drop mode the evaluation pass must see the same edge list training saw.
inline std::shared_ptr<const std::vector<RelEdge>> eval_edges(const Model& m) {
    if (m.gate_mode == "drop") return drop_nested_edges(*m.binding.full_edges);
    return nullptr;
}

// ---- training query pools ----

struct TrainItem {
    SerializedQuery q;
    int left_ent = -1;  // conve: the visible main entity
    int rel = -1;       // conve: main relation
    bool head_side = false;
};

struct TrainPool {
    std::vector<TrainItem> items;
    double eps = 0.0;  // label smoothing for this pool's loss
};

// Masked entity queries over every train fact; relation-slot queries join in
// only under the full-space regime, where both live in the joint table.
inline void entity_train_items(const SourceDataset& ds, const EncoderBinding& b,
                               bool full_space, std::vector<TrainItem>& ents,
                               std::vector<TrainItem>& rels) {
    AuxTimes aux;
    auto add_fact = [&](const Fact& f) {
        const std::vector<FactSlot> slots = fact_slots(b, f, aux);
        auto ent = [&](int slot_idx, int visible, bool head_side) {
            TrainItem it;
            it.q = make_entity_query(slots, slot_idx);
            it.left_ent = visible;
            it.rel = f.main.r;
            it.head_side = head_side;
            ents.push_back(std::move(it));
        };
        ent(0, f.main.t, true);
        ent(2, f.main.h, false);
        for (int qi = 0; qi < static_cast<int>(f.quals.size()); ++qi)
            ent(4 + 2 * qi, f.main.h, false);
        if (full_space) {
            TrainItem it;
            it.q = make_relation_query(slots, 1);
            rels.push_back(std::move(it));
        }
    };
    for (const Fact& f : ds.train) add_fact(f);
    for (const Fact& f : ds.extra_train) add_fact(f);
    if (!aux.taus->empty())
        throw std::logic_error("entity_train_items: train timestamp missing from graph");
    if (full_space) {
        const int ne = b.g->n_entities;
        for (TrainItem& it : ents) it.q.space = CandidateSpace::All;
        for (TrainItem& it : rels) {
            it.q.space = CandidateSpace::All;
            it.q.gold += ne;  // relations stack below the entity rows
        }
    }
}

inline std::vector<TrainItem> fact_train_items(const SourceDataset& ds,
                                               const EncoderBinding& b) {
    const std::map<TripleRef, int> ids = train_fact_ids(ds, *b.g);
    std::vector<TrainItem> out;
    for (const NestedFact& n : ds.nested_train) {
        const auto s = ids.find(n.sub);
        const auto o = ids.find(n.obj);
        if (s == ids.end() || o == ids.end())
            throw std::invalid_argument(
                "fact_train_items: nested member has no fact node");
        for (int mask : {0, 2}) {
            TrainItem it;
            it.q = make_fact_query(b, s->second, n.rel, o->second, mask);
            out.push_back(std::move(it));
        }
    }
    return out;
}

// ConvE pools are split by query side so each batch gathers its relation rows
// from one table (forward relations vs learned inverses).
inline std::pair<std::vector<TrainItem>, std::vector<TrainItem>> conve_train_items(
    const SourceDataset& ds, const EncoderBinding& b) {
    std::vector<TrainItem> ents, rels;
    entity_train_items(ds, b, /*full_space=*/false, ents, rels);
    std::pair<std::vector<TrainItem>, std::vector<TrainItem>> out;
    for (TrainItem& it : ents) {
        if (it.q.mask_pos == 0)
            out.second.push_back(std::move(it));  // head side
        else if (it.q.mask_pos == 2)
            out.first.push_back(std::move(it));
        // qualifier slots are outside the conve circuits
    }
    return out;
}

inline std::vector<TrainPool> build_train_pools(const Model& m, const SourceDataset& ds,
                                                const TaskSpec& task,
                                                const TrainConfig& tc) {
    std::vector<TrainPool> pools;
    if (task.kind == TaskKind::TriplePrediction) {
        pools.push_back({fact_train_items(ds, m.binding), tc.entity_smoothing});
        return pools;
    }
    if (m.dec.kind != "transformer") {
        auto [tails, heads] = conve_train_items(ds, m.binding);
        pools.push_back({std::move(tails), tc.entity_smoothing});
        pools.push_back({std::move(heads), tc.entity_smoothing});
    } else {
        std::vector<TrainItem> ents, rels;
        entity_train_items(ds, m.binding, m.dec.full_space, ents, rels);
        pools.push_back({std::move(ents), tc.entity_smoothing});
        if (m.dec.full_space)
            pools.push_back({std::move(rels), tc.relation_smoothing});
    }
    if (tc.joint_mode == "multitask")
        pools.push_back({fact_train_items(ds, m.binding), tc.entity_smoothing});
    return pools;
}

// ---- parameter snapshots ----

inline std::map<std::string, std::vector<double>> snapshot_params(const ParamStore& ps) {
    std::map<std::string, std::vector<double>> s;
    for (const auto& [name, p] : ps.entries())
        s.emplace(name, std::vector<double>(p.t.data(), p.t.data() + p.t.size()));
    return s;
}

inline void restore_params(ParamStore& ps,
                           const std::map<std::string, std::vector<double>>& s) {
    for (auto& [name, p] : ps.entries())
        std::copy(s.at(name).begin(), s.at(name).end(), p.t.data());
}

// ---- epoch loop ----

namespace train_detail {

inline void pin_nested_gate(Model& m) {
    // literal reading: the nested gate parameter stays at 0 (gate 0.5)
    for (int l = 0; l < m.enc.layers; ++l) {
        const std::string name = "enc.l" + std::to_string(l) + ".inter.omega";
        Tensor t = m.params.get(name);
        if (t.has_grad()) t.grad()[static_cast<int>(EdgeTau::Nested)] = 0.0;
    }
}

inline void check_finite_grads(const ParamStore& ps, const std::string& where) {
    for (const auto& [name, p] : ps.entries()) {
        if (!p.trainable || !p.t.has_grad()) continue;
        const auto& g = p.t.grad();
        for (double v : g)
            if (!std::isfinite(v))
                throw std::runtime_error("non-finite gradient in " + name + " at " +
                                         where);
    }
}

}  // namespace train_detail

// One pass over every pool in shuffled order, alternating batches between
// pools round-robin. Per batch: resample capped neighborhoods, encode, score
// the masked queries, AdamW step. Returns the mean batch loss.
inline double train_epoch(Model& m, const std::vector<TrainPool>& pools,
                          const TrainConfig& tc, AdamW& opt, Rng& rng, int epoch) {
    std::size_t total_items = 0;
    for (const TrainPool& p : pools) total_items += p.items.size();
    if (total_items == 0)
        throw std::invalid_argument("train_epoch: no training queries");

    struct Cursor {
        std::vector<int> order;
        std::size_t at = 0;
    };
    std::vector<Cursor> curs(pools.size());
    for (std::size_t pi = 0; pi < pools.size(); ++pi) {
        curs[pi].order.resize(pools[pi].items.size());
        std::iota(curs[pi].order.begin(), curs[pi].order.end(), 0);
        rng.shuffle(curs[pi].order);
    }

    double total = 0.0;
    int batches = 0;
    auto step = [&](const TrainPool& pool, Cursor& cur) {
        const std::size_t take = std::min(static_cast<std::size_t>(tc.batch_size),
                                          cur.order.size() - cur.at);
        auto edges = sample_neighbors(m.binding, rng, m.enc.neighbor_cap);
        if (m.gate_mode == "drop") edges = drop_nested_edges(*edges);
        Tape tape;
        const EncodeOut eo =
            encode(&tape, m.binding, m.params, m.enc, m.ablate, true, &rng, edges);

        Tensor logits;
        std::vector<int> golds;
        if (m.dec.kind == "transformer") {
            std::vector<SerializedQuery> qs;
            qs.reserve(take);
            for (std::size_t i = 0; i < take; ++i)
                qs.push_back(
                    pool.items[static_cast<std::size_t>(cur.order[cur.at + i])].q);
            const DecoderBatch db = pack_queries(qs, m.dec.max_seq_len);
            const Tensor pre = decode_mask(&tape, db, eo.h, eo.e, m.params, m.dec,
                                           true, &rng);
            const Tensor cands =
                candidate_matrix(&tape, m.binding, db.space, eo.h, eo.e);
            logits = score_logits(&tape, pre, cands, m.params);
            golds = db.golds;
        } else {
            std::vector<int> lrows, rrows;
            const bool head_side =
                pool.items[static_cast<std::size_t>(cur.order[cur.at])].head_side;
            for (std::size_t i = 0; i < take; ++i) {
                const TrainItem& it =
                    pool.items[static_cast<std::size_t>(cur.order[cur.at + i])];
                lrows.push_back(m.binding.g->ent_node(it.left_ent));
                rrows.push_back(it.rel);
                golds.push_back(it.q.gold);
            }
            const Tensor left = gather_rows(&tape, eo.h, lrows);
            const Tensor rel =
                head_side ? gather_rows(&tape, m.params.get("conve.inv_rel"), rrows)
                          : gather_rows(&tape, eo.e, rrows);
            const Tensor cands = candidate_matrix(&tape, m.binding,
                                                  CandidateSpace::Entities, eo.h, eo.e);
            logits = conve_logits(&tape, left, rel, cands, m.params);
        }

        const Tensor loss = smoothed_ce(&tape, logits, golds, pool.eps);
        const double lv = loss.item();
        if (!std::isfinite(lv))
            throw std::runtime_error("non-finite loss at epoch " +
                                     std::to_string(epoch) + ", batch " +
                                     std::to_string(batches));
        m.params.zero_grads();
        tape.backward(loss);
        if (m.gate_mode == "frozen-zero") train_detail::pin_nested_gate(m);
        train_detail::check_finite_grads(m.params, "epoch " + std::to_string(epoch) +
                                                       ", batch " +
                                                       std::to_string(batches));
        opt.step(m.params);
        cur.at += take;
        total += lv;
        ++batches;
    };

    bool any = true;
    while (any) {
        any = false;
        for (std::size_t pi = 0; pi < pools.size(); ++pi) {
            if (curs[pi].at >= curs[pi].order.size()) continue;
            any = true;
            step(pools[pi], curs[pi]);
        }
    }
    return total / batches;
}

// ---- fit with early stopping ----

struct TrainStats {
    std::vector<double> epoch_loss;
    std::vector<double> valid_mrr;
    int best_epoch = -1;
    double best_mrr = 0.0;
    int epochs_run = 0;
};

inline SourceDataset valid_as_test(const SourceDataset& ds) {
    SourceDataset v = ds;
    v.test = ds.valid;
    v.nested_test = ds.nested_valid;
    v.test_origin.clear();
    return v;
}

inline std::string monitor_category(const TaskSpec& task) {
    if (task.kind == TaskKind::TriplePrediction) return "triple_prediction";
    return task.roles == MaskRoles::AllEntities ? "all_entities" : "subject_object";
}

// Early stopping on the validation MRR of the task's primary category; the
// best-epoch parameters are restored before returning.
// Called after every epoch with (epoch, train loss, valid MRR); lets callers
// stream progress without owning the loop.
using EpochHook = std::function<void(int, double, double)>;

inline TrainStats fit(Model& m, const SourceDataset& ds, const TaskSpec& task,
                      const TrainConfig& tc, const EpochHook& on_epoch = nullptr) {
    tc.validate();
    task.validate();
    const std::vector<TrainPool> pools = build_train_pools(m, ds, task, tc);
    AdamW opt(tc.lr, 0.9, 0.999, 1e-8, tc.weight_decay);
    if (tc.freeze_entities) m.params.set_trainable("enc.ent", false);

    const bool strictf = tc.filter == "strict";
    const SourceDataset vds = valid_as_test(ds);
    const bool have_valid = !vds.test.empty() || !vds.nested_test.empty();
    const std::string monitor = monitor_category(task);

    TrainStats st;
    auto best = snapshot_params(m.params);
    double best_mrr = -1.0;
    int bad = 0;
    for (int ep = 0; ep < tc.epochs; ++ep) {
        double rate = tc.lr;
        if (ep * 8 >= tc.epochs * 7) rate *= tc.lr_decay * tc.lr_decay;
        else if (ep * 10 >= tc.epochs * 7) rate *= tc.lr_decay;
        opt.set_lr(rate);
        Rng erng(derive_seed(tc.seed, 0xe90000u + static_cast<std::uint64_t>(ep)));
        st.epoch_loss.push_back(train_epoch(m, pools, tc, opt, erng, ep));
        double mrr = 0.0;
        if (have_valid) {
            const RankingReport vr = evaluate(m.binding, m.params, m.enc, m.dec, vds,
                                              task, strictf, m.ablate, 256, nullptr,
                                              eval_edges(m));
            const auto it = vr.categories.find(monitor);
            mrr = it == vr.categories.end() ? 0.0 : it->second.mrr;
        }
        st.valid_mrr.push_back(mrr);
        ++st.epochs_run;
        if (on_epoch) on_epoch(ep, st.epoch_loss.back(), mrr);
        if (mrr > best_mrr) {
            best_mrr = mrr;
            st.best_epoch = ep;
            best = snapshot_params(m.params);
            bad = 0;
        } else if (++bad > tc.patience) {
            break;
        }
    }
    restore_params(m.params, best);
    st.best_mrr = best_mrr < 0.0 ? 0.0 : best_mrr;
    return st;
}

// Triple-prediction regime: base parameters come pre-loaded in the model,
// atomic entity rows are frozen, and only the fact-level queries train.
inline TrainStats fit_triple_prediction(Model& m, const SourceDataset& ds,
                                        TrainConfig tc,
                                        const EpochHook& on_epoch = nullptr) {
    tc.freeze_entities = true;
    const TaskSpec task{TaskKind::TriplePrediction, MaskRoles::FactSlots};
    return fit(m, ds, task, tc, on_epoch);
}

// Per-source test index lists for a merged dataset.
inline std::vector<std::vector<int>> tests_by_origin(const SourceDataset& ds) {
    int nsrc = 0;
    for (int o : ds.test_origin) nsrc = std::max(nsrc, o + 1);
    std::vector<std::vector<int>> out(static_cast<std::size_t>(nsrc));
    for (std::size_t i = 0; i < ds.test_origin.size(); ++i)
        out[static_cast<std::size_t>(ds.test_origin[i])].push_back(
            static_cast<int>(i));
    return out;
}

inline nlohmann::json checkpoint_metadata(const RunConfig& rc, const Model& m) {
    nlohmann::json meta;
    meta["config"] = run_config_to_json(rc);
    meta["graph"] = {{"entities", m.graph->n_entities},
                     {"times", m.graph->n_times},
                     {"rel_nodes", m.graph->n_rel_nodes},
                     {"fact_nodes", m.graph->n_fact_nodes},
                     {"edge_types", m.binding.n_edge_types}};
    return meta;
}

}  // namespace unihr
