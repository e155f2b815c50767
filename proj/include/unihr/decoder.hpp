#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "unihr/config.hpp"
#include "unihr/encoder.hpp"
#include "unihr/ops_model.hpp"
#include "unihr/params.hpp"
#include "unihr/tensor.hpp"

namespace unihr {

enum class CandidateSpace { Entities, Relations, FactNodes, All };

// One maskable position of a serialized fact. Entity/relation/fact ids let
// query builders decide what is maskable and what the gold answer is.
struct FactSlot {
    SlotRef ref;
    int entity_id = -1;    // set when the slot holds an entity node
    int relation_id = -1;  // set when the slot holds a graph relation row
    int fact_id = -1;      // set when the slot holds a fact node (triple task)
};

// Timestamps outside the encoded graph (held-out intervals) have no node row;
// they are appended as extra Time2Vec rows behind the node table.
struct AuxTimes {
    std::shared_ptr<std::vector<double>> taus = std::make_shared<std::vector<double>>();
    std::map<std::int64_t, int> index;

    SlotRef resolve(const EncoderBinding& b, std::int64_t v) {
        const auto& tv = b.g->time_values;
        const auto it = std::lower_bound(tv.begin(), tv.end(), v);
        if (it != tv.end() && *it == v)
            return {SlotRef::Node,
                    b.g->time_node(static_cast<int>(it - tv.begin()))};
        auto [pos, fresh] = index.try_emplace(static_cast<std::int64_t>(v),
                                              static_cast<int>(taus->size()));
        if (fresh) {
            const double den = b.t_max - b.t_min;
            taus->push_back(den > 0.0
                                ? (static_cast<double>(v) - b.t_min) / den
                                : 0.5);
        }
        return {SlotRef::Node, b.g->node_count() + pos->second};
    }
};

// Serialization layout per source flavor: main triple, qualifier pairs in
// source order, then the interval block.
inline std::vector<FactSlot> fact_slots(const EncoderBinding& b, const Fact& f,
                                        AuxTimes& aux) {
    std::vector<FactSlot> out;
    auto ent = [&](int e) {
        FactSlot s;
        s.ref = {SlotRef::Node, b.g->ent_node(e)};
        s.entity_id = e;
        return s;
    };
    auto rel = [&](int r) {
        FactSlot s;
        s.ref = {SlotRef::Edge, r};
        s.relation_id = r;
        return s;
    };
    out.push_back(ent(f.main.h));
    out.push_back(rel(f.main.r));
    out.push_back(ent(f.main.t));
    for (const auto& [k, v] : f.quals) {
        out.push_back(rel(k));
        out.push_back(ent(v));
    }
    if (f.has_time) {
        if (b.g->begin_rel < 0 || b.g->end_rel < 0)
            throw std::invalid_argument("fact_slots: graph has no interval relations");
        FactSlot bm, bt, em, et;
        bm.ref = {SlotRef::Edge, b.g->begin_rel};
        bt.ref = aux.resolve(b, f.begin);
        em.ref = {SlotRef::Edge, b.g->end_rel};
        et.ref = aux.resolve(b, f.end);
        out.push_back(bm);
        out.push_back(bt);
        out.push_back(em);
        out.push_back(et);
    }
    return out;
}

// Append Time2Vec rows for out-of-graph timestamps behind the node table so
// slot refs produced by AuxTimes::resolve land on real rows.
inline Tensor extend_with_aux_times(Tape* tape, const EncoderBinding&,
                                    const Tensor& h, ParamStore& ps,
                                    const AuxTimes& aux) {
    if (aux.taus->empty()) return h;
    Tensor rows = time2vec_rows(tape, aux.taus, ps.get("enc.t2v.wp"),
                                ps.get("enc.t2v.bp"), ps.get("enc.t2v.wnp"),
                                ps.get("enc.t2v.bnp"), ps.get("enc.t2v.omega"));
    return vstack(tape, {h, rows});
}

struct SerializedQuery {
    std::vector<SlotRef> slots;  // Mask already substituted at mask_pos
    int mask_pos = -1;
    CandidateSpace space = CandidateSpace::Entities;
    int gold = -1;  // row inside the candidate space
};

inline SerializedQuery make_entity_query(const std::vector<FactSlot>& slots,
                                         int mask_idx) {
    if (mask_idx < 0 || mask_idx >= static_cast<int>(slots.size()) ||
        slots[mask_idx].entity_id < 0)
        throw std::invalid_argument("make_entity_query: slot is not an entity");
    SerializedQuery q;
    for (const FactSlot& s : slots) q.slots.push_back(s.ref);
    q.slots[mask_idx] = {SlotRef::Mask, 0};
    q.mask_pos = mask_idx;
    q.space = CandidateSpace::Entities;
    q.gold = slots[mask_idx].entity_id;
    return q;
}

inline SerializedQuery make_relation_query(const std::vector<FactSlot>& slots,
                                           int mask_idx) {
    if (mask_idx < 0 || mask_idx >= static_cast<int>(slots.size()) ||
        slots[mask_idx].relation_id < 0)
        throw std::invalid_argument("make_relation_query: slot is not a relation");
    SerializedQuery q;
    for (const FactSlot& s : slots) q.slots.push_back(s.ref);
    q.slots[mask_idx] = {SlotRef::Mask, 0};
    q.mask_pos = mask_idx;
    q.space = CandidateSpace::Relations;
    q.gold = slots[mask_idx].relation_id;
    return q;
}

// Triple-prediction query (f_1, r̂, f_2) over fact-node space; mask_idx 0 or 2.
inline SerializedQuery make_fact_query(const EncoderBinding& b, int f1, int nrel,
                                       int f2, int mask_idx) {
    if (mask_idx != 0 && mask_idx != 2)
        throw std::invalid_argument("make_fact_query: maskable slots are 0 and 2");
    SerializedQuery q;
    q.slots = {{SlotRef::Node, b.g->fact_node(f1)},
               {SlotRef::Edge, b.nested_offset + nrel},
               {SlotRef::Node, b.g->fact_node(f2)}};
    q.mask_pos = mask_idx;
    q.gold = mask_idx == 0 ? f1 : f2;
    q.slots[mask_idx] = {SlotRef::Mask, 0};
    q.space = CandidateSpace::FactNodes;
    return q;
}

// ---- candidate tables ----

inline std::vector<int> candidate_rows(const EncoderBinding& b, CandidateSpace sp) {
    const HidrGraph& g = *b.g;
    std::vector<int> rows;
    switch (sp) {
        case CandidateSpace::Entities:
            rows.resize(g.n_entities);
            std::iota(rows.begin(), rows.end(), 0);
            break;
        case CandidateSpace::Relations:
            rows.resize(g.n_source_relations);
            std::iota(rows.begin(), rows.end(), 0);
            break;
        case CandidateSpace::FactNodes:
            rows.resize(g.n_fact_nodes);
            std::iota(rows.begin(), rows.end(), g.fact_node(0));
            break;
        case CandidateSpace::All:
            rows.resize(g.n_entities + g.n_source_relations);
            std::iota(rows.begin(), rows.end(), 0);
            break;
    }
    if (rows.empty()) throw std::invalid_argument("candidate_rows: empty space");
    return rows;
}

// Candidate embedding matrix for a space. The joint full-space table stacks
// entity rows above relation rows; gold ids for relations shift by |V_ent|.
inline Tensor candidate_matrix(Tape* tape, const EncoderBinding& b,
                               CandidateSpace sp, const Tensor& h, const Tensor& e) {
    const HidrGraph& g = *b.g;
    switch (sp) {
        case CandidateSpace::Entities:
        case CandidateSpace::FactNodes:
            return gather_rows(tape, h, candidate_rows(b, sp));
        case CandidateSpace::Relations: {
            std::vector<int> rows(g.n_source_relations);
            std::iota(rows.begin(), rows.end(), 0);
            return gather_rows(tape, e, rows);
        }
        case CandidateSpace::All: {
            std::vector<int> erows(g.n_entities);
            std::iota(erows.begin(), erows.end(), 0);
            std::vector<int> rrows(g.n_source_relations);
            std::iota(rrows.begin(), rrows.end(), 0);
            return vstack(tape, {gather_rows(tape, h, erows),
                                 gather_rows(tape, e, rrows)});
        }
    }
    throw std::logic_error("candidate_matrix: bad space");
}

// ---- parameters ----

inline void init_decoder_params(ParamStore& ps, const DecoderConfig& cfg, int d,
                                Rng& rng) {
    cfg.validate();
    init_xavier(ps.add("dec.mask", {1, d}), rng, 1, d);
    init_xavier(ps.add("dec.pos", {cfg.max_seq_len, d}), rng, d, d);
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "dec.l" + std::to_string(l) + ".";
        init_const(ps.add(p + "ln1.g", {1, d}), 1.0);
        init_const(ps.add(p + "ln1.b", {1, d}), 0.0);
        for (const char* w : {"wq", "wk", "wv", "wo"})
            init_xavier(ps.add(p + "attn." + std::string(w), {d, d}), rng, d, d);
        // no key bias: softmax cancels a constant shared across keys
        for (const char* bnm : {"bq", "bv", "bo"})
            init_const(ps.add(p + "attn." + std::string(bnm), {1, d}), 0.0);
        init_const(ps.add(p + "ln2.g", {1, d}), 1.0);
        init_const(ps.add(p + "ln2.b", {1, d}), 0.0);
        init_xavier(ps.add(p + "ffn.w1", {d, d}), rng, d, d);
        init_const(ps.add(p + "ffn.b1", {1, d}), 0.0);
        init_xavier(ps.add(p + "ffn.w2", {d, d}), rng, d, d);
        init_const(ps.add(p + "ffn.b2", {1, d}), 0.0);
    }
    init_xavier(ps.add("dec.f.w", {d, d}), rng, d, d);
    init_const(ps.add("dec.f.b", {1, d}), 0.0);
}

// ---- batched masked decoding ----

struct DecoderBatch {
    std::shared_ptr<std::vector<SlotRef>> slots;  // bsz*slen, zero-padded
    std::shared_ptr<std::vector<int>> lens;
    std::vector<int> mask_rows;  // flattened row of each sequence's mask
    std::vector<int> golds;
    int bsz = 0, slen = 0;
    CandidateSpace space = CandidateSpace::Entities;
};

inline DecoderBatch pack_queries(const std::vector<SerializedQuery>& qs,
                                 int max_seq_len) {
    if (qs.empty()) throw std::invalid_argument("pack_queries: empty batch");
    DecoderBatch batch;
    batch.bsz = static_cast<int>(qs.size());
    batch.space = qs.front().space;
    for (const SerializedQuery& q : qs) {
        if (q.space != batch.space)
            throw std::invalid_argument("pack_queries: mixed candidate spaces");
        batch.slen = std::max(batch.slen, static_cast<int>(q.slots.size()));
    }
    if (batch.slen > max_seq_len)
        throw std::invalid_argument("pack_queries: sequence exceeds max_seq_len");
    batch.slots = std::make_shared<std::vector<SlotRef>>(
        static_cast<std::size_t>(batch.bsz) * batch.slen, SlotRef{SlotRef::Pad, 0});
    batch.lens = std::make_shared<std::vector<int>>();
    for (int i = 0; i < batch.bsz; ++i) {
        const SerializedQuery& q = qs[i];
        for (std::size_t s = 0; s < q.slots.size(); ++s)
            (*batch.slots)[static_cast<std::size_t>(i) * batch.slen + s] = q.slots[s];
        batch.lens->push_back(static_cast<int>(q.slots.size()));
        batch.mask_rows.push_back(i * batch.slen + q.mask_pos);
        batch.golds.push_back(q.gold);
    }
    return batch;
}

// Pre-norm transformer over the packed batch; returns the mask-position rows.
// No terminal LayerNorm: a 0-layer stack hands back embedding + position.
inline Tensor decode_mask(Tape* tape, const DecoderBatch& batch, const Tensor& h,
                          const Tensor& e, ParamStore& ps, const DecoderConfig& cfg,
                          bool training = false, Rng* drop_rng = nullptr) {
    if (training && cfg.dropout > 0.0 && !drop_rng)
        throw std::invalid_argument("decode_mask: training dropout needs an rng");
    Rng idle(0);
    Rng& rng = drop_rng ? *drop_rng : idle;

    Tensor x = gather_mixed(tape, h, e, ps.get("dec.mask"), batch.slots);
    if (cfg.use_positional) {
        std::vector<int> pos_idx(static_cast<std::size_t>(batch.bsz) * batch.slen);
        for (int i = 0; i < batch.bsz; ++i)
            for (int s = 0; s < batch.slen; ++s)
                pos_idx[static_cast<std::size_t>(i) * batch.slen + s] = s;
        x = add(tape, x, gather_rows(tape, ps.get("dec.pos"), pos_idx));
    }
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "dec.l" + std::to_string(l) + ".";
        Tensor n1 = layer_norm_rows(tape, x, ps.get(p + "ln1.g"), ps.get(p + "ln1.b"));
        Tensor att = seq_attention(
            tape, linear(tape, n1, ps.get(p + "attn.wq"), ps.get(p + "attn.bq")),
            matmul(tape, n1, ps.get(p + "attn.wk")),
            linear(tape, n1, ps.get(p + "attn.wv"), ps.get(p + "attn.bv")), batch.bsz,
            batch.slen, cfg.heads, batch.lens, cfg.dropout, rng, training);
        att = linear(tape, att, ps.get(p + "attn.wo"), ps.get(p + "attn.bo"));
        if (training && cfg.dropout > 0.0)
            att = dropout(tape, att, cfg.dropout, rng, true);
        x = add(tape, x, att);
        Tensor n2 = layer_norm_rows(tape, x, ps.get(p + "ln2.g"), ps.get(p + "ln2.b"));
        Tensor f = linear(tape, gelu(tape, linear(tape, n2, ps.get(p + "ffn.w1"),
                                                  ps.get(p + "ffn.b1"))),
                          ps.get(p + "ffn.w2"), ps.get(p + "ffn.b2"));
        if (training && cfg.dropout > 0.0) f = dropout(tape, f, cfg.dropout, rng, true);
        x = add(tape, x, f);
    }
    return gather_rows(tape, x, batch.mask_rows);
}

// Eq.-style scoring: project the mask embedding and dot against every
// candidate row; probabilities are the row softmax of these logits.
inline Tensor score_logits(Tape* tape, const Tensor& h_pre, const Tensor& cands,
                           ParamStore& ps) {
    return matmul_nt(tape, linear(tape, h_pre, ps.get("dec.f.w"), ps.get("dec.f.b")),
                     cands);
}

inline Tensor score_probs(Tape* tape, const Tensor& h_pre, const Tensor& cands,
                          ParamStore& ps) {
    return softmax_rows(tape, score_logits(tape, h_pre, cands, ps));
}

// ---- ConvE scoring ----

// 2-D reshape grid: the most square factorization of d.
inline std::pair<int, int> conve_grid(int d) {
    int gh = 1;
    for (int k = 1; k * k <= d; ++k)
        if (d % k == 0) gh = k;
    return {gh, d / gh};
}

struct ConveDims {
    int gh = 0, gw = 0;      // one embedding reshaped to gh x gw
    int ih = 0, iw = 0;      // stacked image
    int kh = 0, kw = 0, kc = 0;
    int flat = 0;            // conv output size
};

inline ConveDims conve_dims(int d, int channels = 4) {
    ConveDims c;
    std::tie(c.gh, c.gw) = conve_grid(d);
    c.ih = 2 * c.gh;
    c.iw = c.gw;
    c.kh = std::min(3, c.ih);
    c.kw = std::min(3, c.iw);
    c.kc = channels;
    c.flat = c.kc * (c.ih - c.kh + 1) * (c.iw - c.kw + 1);
    if (c.flat <= 0) throw std::invalid_argument("conve: d not reshapeable");
    return c;
}

inline void init_conve_params(ParamStore& ps, int d, int n_relations, Rng& rng,
                              int channels = 4) {
    const ConveDims c = conve_dims(d, channels);
    init_xavier(ps.add("conve.kern", {c.kc, c.kh * c.kw}), rng, c.kh * c.kw, c.kc);
    init_const(ps.add("conve.kbias", {1, c.kc}), 0.0);
    init_xavier(ps.add("conve.proj", {c.flat, d}), rng, c.flat, d);
    init_const(ps.add("conve.pbias", {1, d}), 0.0);
    // learned inverse-relation rows power head-side queries
    init_xavier(ps.add("conve.inv_rel", {n_relations, d}), rng, d, d);
}

// reshape-stack-convolve-flatten-project feature map, then dot with candidates
inline Tensor conve_logits(Tape* tape, const Tensor& left, const Tensor& rel,
                           const Tensor& cands, ParamStore& ps) {
    const int d = left.cols();
    const ConveDims c = conve_dims(d, ps.get("conve.kern").rows());
    Tensor img = concat_cols(tape, {left, rel});  // row-major gh x gw blocks stack
    Tensor conv = relu(tape, conv2d_valid(tape, img, c.ih, c.iw, ps.get("conve.kern"),
                                          c.kh, c.kw, ps.get("conve.kbias")));
    Tensor z = relu(tape, linear(tape, conv, ps.get("conve.proj"),
                                 ps.get("conve.pbias")));
    return matmul_nt(tape, z, cands);
}

}  // namespace unihr
