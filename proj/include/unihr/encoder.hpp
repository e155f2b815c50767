#pragma once

#include <algorithm>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "unihr/config.hpp"
#include "unihr/hidr.hpp"
#include "unihr/ops_model.hpp"
#include "unihr/params.hpp"
#include "unihr/rng.hpp"
#include "unihr/tensor.hpp"

namespace unihr {

enum class Ablation { None, Intra, Inter, FactInit, Gate, Direction };

inline Ablation parse_ablation(const std::string& s) {
    if (s.empty() || s == "none") return Ablation::None;
    if (s == "intra") return Ablation::Intra;
    if (s == "inter") return Ablation::Inter;
    if (s == "factinit") return Ablation::FactInit;
    if (s == "gate") return Ablation::Gate;
    if (s == "direction") return Ablation::Direction;
    throw std::invalid_argument("unknown ablation '" + s + "'");
}

// Index plumbing that ties one lifted graph to the tensor pipeline. All the
// ragged structure (fact stars, receiver-grouped edges) is frozen here once so
// the per-step forward pass is pure array work.
struct EncoderBinding {
    const HidrGraph* g = nullptr;

    int rel_label_count = 0;  // graph relation labels incl. reserved intervals
    int nested_offset = 0;    // nested relation rows start here in the table
    int n_edge_types = 0;     // rows of the relation-embedding table

    double t_min = 0.0, t_max = 0.0;  // raw-timestamp range behind taus
    std::shared_ptr<std::vector<double>> taus;  // normalized, per time node

    std::vector<int> rel_node_rels;  // relation id per RelationNode, node order
    std::vector<int> f_h, f_r, f_t;  // constituent node ids per FactNode

    // intra-fact stars: one receiver row per (star, member); pairs are
    // (receiver, sender) with softmax segments given by offsets
    std::shared_ptr<std::vector<int>> intra_offsets;
    std::shared_ptr<std::vector<int>> intra_targets;  // receiver row -> node id
    std::vector<int> pair_recv, pair_send;

    // inter-fact message edges, receiver-contiguous
    std::shared_ptr<std::vector<RelEdge>> full_edges;
    std::vector<std::pair<int, int>> recv_ranges;  // per node into full_edges
};

// Row of the relation-embedding table used by a HiDR edge. Layout: the graph
// relation labels first, then the three connected relations, then nested
// relation labels.
inline int edge_embed_index(const EncoderBinding& b, const HidrEdgeKind& e) {
    switch (e.tag) {
        case EdgeTag::Connected:
            return b.rel_label_count + static_cast<int>(e.which);
        case EdgeTag::AtomicRel:
        case EdgeTag::QualifierRel:
            return e.rel;
        case EdgeTag::NestedRel:
            return b.nested_offset + e.rel;
    }
    throw std::logic_error("edge_embed_index: bad tag");
}

inline EdgeTau edge_tau(const HidrEdgeKind& e) {
    switch (edge_class(e, Direction::Forward).first) {
        case TauClass::ConnectedRelation: return EdgeTau::Connected;
        case TauClass::AtomicRelation: return EdgeTau::Atomic;
        case TauClass::NestedRelation: return EdgeTau::Nested;
    }
    throw std::logic_error("edge_tau: bad class");
}

inline EncoderBinding bind_graph(const HidrGraph& g) {
    EncoderBinding b;
    b.g = &g;
    b.rel_label_count = static_cast<int>(g.relation_labels.size());
    b.nested_offset = b.rel_label_count + 3;
    b.n_edge_types = b.nested_offset + static_cast<int>(g.nested_labels.size());

    b.taus = std::make_shared<std::vector<double>>();
    if (!g.time_values.empty()) {
        b.t_min = static_cast<double>(g.time_values.front());
        b.t_max = static_cast<double>(g.time_values.back());
        const double den = b.t_max - b.t_min;
        for (std::int64_t v : g.time_values)
            b.taus->push_back(den > 0.0 ? (static_cast<double>(v) - b.t_min) / den
                                        : 0.5);
    }

    for (int r = 0; r < b.rel_label_count; ++r)
        if (g.rel_node_of[r] >= 0) b.rel_node_rels.push_back(r);

    // fact stars from the connected triples (grouped per fact node by lift)
    b.f_h.assign(g.n_fact_nodes, -1);
    b.f_r.assign(g.n_fact_nodes, -1);
    b.f_t.assign(g.n_fact_nodes, -1);
    const int fact_base = g.n_entities + g.n_times + g.n_rel_nodes;
    std::vector<std::vector<int>> members(g.n_fact_nodes);
    for (const HidrTriple& t : g.fc) {
        const int fi = t.src - fact_base;
        if (fi < 0 || fi >= g.n_fact_nodes)
            throw std::logic_error("bind_graph: connected edge without fact source");
        if (t.edge.tag == EdgeTag::Connected) {
            switch (t.edge.which) {
                case ConnectedKind::HasRelation: b.f_r[fi] = t.dst; break;
                case ConnectedKind::HasHeadEntity: b.f_h[fi] = t.dst; break;
                case ConnectedKind::HasTailEntity: b.f_t[fi] = t.dst; break;
            }
        }
        members[fi].push_back(t.dst);
    }
    for (int fi = 0; fi < g.n_fact_nodes; ++fi)
        if (b.f_h[fi] < 0 || b.f_r[fi] < 0 || b.f_t[fi] < 0)
            throw std::logic_error("bind_graph: fact node missing a connected edge");

    // Star attention receives into the fact node only. Constituents keep their
    // rows here: pushing the center back into every member each layer piles up
    // un-normalized star mixtures on entities shared by many facts and buries
    // their identity, which the decoder depends on for candidate scoring.
    b.intra_offsets = std::make_shared<std::vector<int>>();
    b.intra_targets = std::make_shared<std::vector<int>>();
    b.intra_offsets->push_back(0);
    for (int fi = 0; fi < g.n_fact_nodes; ++fi) {
        const int center = g.fact_node(fi);
        std::vector<int> ring;  // neighbors deduped, first-seen order
        std::set<int> seen;
        for (int m : members[fi])
            if (seen.insert(m).second) ring.push_back(m);
        if (ring.empty()) continue;
        b.intra_targets->push_back(center);
        for (int m : ring) {
            b.pair_recv.push_back(center);
            b.pair_send.push_back(m);
        }
        b.intra_offsets->push_back(static_cast<int>(b.pair_recv.size()));
    }

    // receiver-centric edge list: in_adj holds, for every node, the forward
    // edges pointing at it plus the reverse twins of its outgoing edges
    b.full_edges = std::make_shared<std::vector<RelEdge>>();
    b.recv_ranges.resize(g.node_count());
    for (int n = 0; n < g.node_count(); ++n) {
        const int beg = static_cast<int>(b.full_edges->size());
        for (const AdjEntry& a : g.in_adj[n]) {
            const HidrTriple& t = g.triple_at(a.triple);
            RelEdge e;
            e.recv = n;
            e.send = a.nbr;
            e.rel = edge_embed_index(b, t.edge);
            e.dir = a.forward ? EdgeDir::Forward : EdgeDir::Reverse;
            e.tau = edge_tau(t.edge);
            b.full_edges->push_back(e);
        }
        b.recv_ranges[n] = {beg, static_cast<int>(b.full_edges->size())};
    }
    return b;
}

// Per-epoch subgraph sampling: cap the incoming-message list of every node,
// uniformly without replacement. Evaluation passes the full list instead.
inline std::shared_ptr<std::vector<RelEdge>> sample_neighbors(
    const EncoderBinding& b, Rng& rng, int cap) {
    if (cap < 1) throw std::invalid_argument("sample_neighbors: cap must be >= 1");
    auto out = std::make_shared<std::vector<RelEdge>>();
    std::vector<int> idx;
    for (const auto& [beg, end] : b.recv_ranges) {
        const int k = end - beg;
        if (k <= cap) {
            for (int i = beg; i < end; ++i) out->push_back((*b.full_edges)[i]);
            continue;
        }
        idx.resize(k);
        for (int i = 0; i < k; ++i) idx[i] = i;
        for (int i = 0; i < cap; ++i) {
            const int j = i + static_cast<int>(rng.uniform(k - i));
            std::swap(idx[i], idx[j]);
        }
        std::sort(idx.begin(), idx.begin() + cap);
        for (int i = 0; i < cap; ++i) out->push_back((*b.full_edges)[beg + idx[i]]);
    }
    return out;
}

// Nested-gate "drop" mode removes nested-class edges from the message list
// outright, making their contribution exactly zero.
inline std::shared_ptr<std::vector<RelEdge>> drop_nested_edges(
    const std::vector<RelEdge>& edges) {
    auto out = std::make_shared<std::vector<RelEdge>>();
    for (const RelEdge& e : edges)
        if (e.tau != EdgeTau::Nested) out->push_back(e);
    return out;
}

inline void init_encoder_params(ParamStore& ps, const EncoderBinding& b,
                                const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    const int d = cfg.d;
    init_xavier(ps.add("enc.ent", {b.g->n_entities, d}), rng, d, d);
    init_xavier(ps.add("enc.t2v.wp", {1, d}), rng, 1, d);
    init_xavier(ps.add("enc.t2v.bp", {1, d}), rng, 1, d);
    init_xavier(ps.add("enc.t2v.wnp", {1, d}), rng, 1, d);
    init_xavier(ps.add("enc.t2v.bnp", {1, d}), rng, 1, d);
    init_const(ps.add("enc.t2v.omega", {1, 1}), 1.0);
    init_xavier(ps.add("enc.rel", {b.n_edge_types, d}), rng, d, d);
    init_xavier(ps.add("enc.w_r", {d, d}), rng, d, d);
    init_xavier(ps.add("enc.fm.w", {3 * d, d}), rng, 3 * d, d);
    init_const(ps.add("enc.fm.b", {1, d}), 0.0);
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "enc.l" + std::to_string(l) + ".";
        init_xavier(ps.add(p + "intra.w_in", {d, d}), rng, d, d);
        init_xavier(ps.add(p + "intra.w_out", {d, d}), rng, d, d);
        init_xavier(ps.add(p + "intra.att", {1, d}), rng, d, 1);
        init_xavier(ps.add(p + "inter.w_fwd", {d, d}), rng, d, d);
        init_xavier(ps.add(p + "inter.w_rev", {d, d}), rng, d, d);
        init_xavier(ps.add(p + "inter.w_self", {d, d}), rng, d, d);
        init_xavier(ps.add(p + "inter.w_rel", {d, d}), rng, d, d);
        init_const(ps.add(p + "inter.omega", {1, 3}), 0.0);
    }
}

struct EncodeOut {
    Tensor h;  // node embeddings, graph node order
    Tensor e;  // relation-type embeddings, table order
};

// Two-stage pass per layer: star attention inside every fact, then gated
// relational aggregation over the whole graph. L = 0 returns initialization.
inline EncodeOut encode(Tape* tape, const EncoderBinding& b, ParamStore& ps,
                        const EncoderConfig& cfg, Ablation ab = Ablation::None,
                        bool training = false, Rng* drop_rng = nullptr,
                        std::shared_ptr<const std::vector<RelEdge>> edges = nullptr) {
    const HidrGraph& g = *b.g;
    if (!edges) edges = b.full_edges;
    if (training && (cfg.intra_dropout > 0.0 || cfg.inter_dropout > 0.0) && !drop_rng)
        throw std::invalid_argument("encode: training dropout needs an rng");

    std::vector<Tensor> blocks;
    blocks.push_back(ps.get("enc.ent"));
    if (g.n_times > 0)
        blocks.push_back(time2vec_rows(tape, b.taus, ps.get("enc.t2v.wp"),
                                       ps.get("enc.t2v.bp"), ps.get("enc.t2v.wnp"),
                                       ps.get("enc.t2v.bnp"),
                                       ps.get("enc.t2v.omega")));
    if (g.n_rel_nodes > 0)
        blocks.push_back(matmul(tape,
                                gather_rows(tape, ps.get("enc.rel"), b.rel_node_rels),
                                ps.get("enc.w_r")));
    Tensor base = blocks.size() == 1 ? blocks[0] : vstack(tape, blocks);

    Tensor h = base;
    if (g.n_fact_nodes > 0) {
        Tensor hf;
        if (ab == Ablation::FactInit) {
            hf = Tensor::zeros({g.n_fact_nodes, cfg.d});
        } else {
            Tensor cat = concat_cols(tape, {gather_rows(tape, base, b.f_h),
                                            gather_rows(tape, base, b.f_r),
                                            gather_rows(tape, base, b.f_t)});
            hf = linear(tape, cat, ps.get("enc.fm.w"), ps.get("enc.fm.b"));
            if (cfg.fact_post_activation) hf = relu(tape, hf);
        }
        h = vstack(tape, {base, hf});
    }
    Tensor e = ps.get("enc.rel");

    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "enc.l" + std::to_string(l) + ".";
        if (ab != Ablation::Intra && !b.pair_recv.empty()) {
            const Tensor& w_in = ps.get(p + "intra.w_in");
            const Tensor& w_out = ps.get(p + "intra.w_out");
            // project once per node, then gather per pair: same rows, far
            // fewer multiplied
            Tensor sent = gather_rows(tape, matmul(tape, h, w_out), b.pair_send);
            Tensor pre = add(tape, gather_rows(tape, matmul(tape, h, w_in), b.pair_recv),
                             sent);
            Tensor z = head_dot(tape, leaky_relu(tape, pre, cfg.leaky_slope),
                                ps.get(p + "intra.att"), cfg.intra_heads);
            Tensor alpha = segment_softmax(tape, z, b.intra_offsets);
            if (training && cfg.intra_dropout > 0.0)
                alpha = dropout(tape, alpha, cfg.intra_dropout, *drop_rng, true);
            Tensor msgs = head_mul(tape, alpha, sent);
            h = add(tape, h, segment_sum_to(tape, msgs, b.intra_offsets,
                                            b.intra_targets, g.node_count()));
        }
        if (ab != Ablation::Inter) {
            auto [m_fwd, m_rev] = relational_aggregate(tape, h, e,
                                                       ps.get(p + "inter.omega"),
                                                       edges, ab != Ablation::Gate);
            Tensor pre = ab == Ablation::Direction
                             ? matmul(tape, add(tape, m_fwd, m_rev),
                                      ps.get(p + "inter.w_fwd"))
                             : add(tape, matmul(tape, m_fwd, ps.get(p + "inter.w_fwd")),
                                   matmul(tape, m_rev, ps.get(p + "inter.w_rev")));
            pre = add(tape, pre, matmul(tape, h, ps.get(p + "inter.w_self")));
            h = tanh_op(tape, pre);
            if (training && cfg.inter_dropout > 0.0)
                h = dropout(tape, h, cfg.inter_dropout, *drop_rng, true);
            e = matmul(tape, e, ps.get(p + "inter.w_rel"));
        }
    }
    return {h, e};
}

}  // namespace unihr
