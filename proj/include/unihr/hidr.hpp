#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "unihr/kg.hpp"

namespace unihr {

enum class NodeKind { Atomic, RelationNode, FactNode };

// Atomic nodes cover entities and timestamp values; ref indexes the matching
// table for the kind (entity id / relation id / fact index / time index).
struct HidrNode {
    NodeKind kind = NodeKind::Atomic;
    int ref = -1;
    std::optional<std::int64_t> numeric;  // set iff timestamp atomic node
};

enum class ConnectedKind { HasRelation = 0, HasHeadEntity = 1, HasTailEntity = 2 };

enum class EdgeTag { Connected, AtomicRel, NestedRel, QualifierRel };

struct HidrEdgeKind {
    EdgeTag tag = EdgeTag::AtomicRel;
    int rel = -1;  // RelationId for Atomic/Qualifier, NestedRelationId for Nested
    ConnectedKind which = ConnectedKind::HasRelation;  // valid iff tag == Connected

    static HidrEdgeKind connected(ConnectedKind w) {
        return {EdgeTag::Connected, -1, w};
    }
    static HidrEdgeKind atomic(int r) { return {EdgeTag::AtomicRel, r, {}}; }
    static HidrEdgeKind nested(int r) { return {EdgeTag::NestedRel, r, {}}; }
    static HidrEdgeKind qualifier(int r) { return {EdgeTag::QualifierRel, r, {}}; }

    bool operator==(const HidrEdgeKind& o) const {
        if (tag != o.tag) return false;
        if (tag == EdgeTag::Connected) return which == o.which;
        return rel == o.rel;
    }
};

struct HidrTriple {
    int src = -1;
    HidrEdgeKind edge;
    int dst = -1;
};

enum class TauClass { ConnectedRelation, AtomicRelation, NestedRelation };
enum class Direction { Forward, Reverse };

// The two-dimensional edge classification used by the hierarchy-aware
// message functions: relation type tau and traversal direction lambda.
inline std::pair<TauClass, Direction> edge_class(const HidrEdgeKind& e,
                                                 Direction dir) {
    switch (e.tag) {
        case EdgeTag::Connected: return {TauClass::ConnectedRelation, dir};
        case EdgeTag::NestedRel: return {TauClass::NestedRelation, dir};
        case EdgeTag::AtomicRel:
        case EdgeTag::QualifierRel: return {TauClass::AtomicRelation, dir};
    }
    return {TauClass::AtomicRelation, dir};
}

// Where a lifted element came from: split 0/1/2 = train/valid/test, 3 = the
// augmented extra_train triples. pos is the index inside that split.
struct FactOrigin {
    int split = 0;
    int pos = 0;
    auto operator<=>(const FactOrigin&) const = default;
};

struct AdjEntry {
    int nbr = -1;        // the node on the other end
    int triple = -1;     // index into the flat triple list
    bool forward = true; // false for the materialized reverse twin
};

struct LiftOptions {
    // Give every atomic fact a FactNode (triple-prediction mode). Off: only
    // flavors that need fact nodes get them, and NKG restricts them to
    // triples referenced by nested facts.
    bool all_fact_nodes = false;
};

class HidrGraph {
public:
    Flavor flavor = Flavor::Triple;

    // label tables copied from the source dataset; relations may gain the two
    // reserved interval labels at the end
    std::vector<std::string> entity_labels;
    std::vector<std::string> relation_labels;
    std::vector<std::string> nested_labels;
    int n_source_relations = 0;  // relation ids >= this are reserved specials
    int begin_rel = -1, end_rel = -1;

    std::vector<std::int64_t> time_values;  // sorted ascending, deduped

    std::vector<HidrNode> nodes;
    std::vector<HidrTriple> fa, fc, fn;

    std::vector<FactOrigin> fa_origin;    // parallel to fa
    std::vector<FactOrigin> fact_origin;  // parallel to fact nodes
    std::vector<FactOrigin> fn_origin;    // parallel to fn (nested splits)

    std::vector<std::vector<AdjEntry>> out_adj, in_adj;

    int n_entities = 0, n_times = 0, n_rel_nodes = 0, n_fact_nodes = 0;
    std::vector<int> rel_node_of;  // relation id -> node id, -1 if absent

    int ent_node(int e) const { return e; }
    int time_node(int i) const { return n_entities + i; }
    int rel_node(int r) const { return rel_node_of[r]; }
    int fact_node(int f) const { return n_entities + n_times + n_rel_nodes + f; }
    int node_count() const { return static_cast<int>(nodes.size()); }

    // flat triple index space: [fa | fc | fn]
    int triple_count() const {
        return static_cast<int>(fa.size() + fc.size() + fn.size());
    }
    const HidrTriple& triple_at(int i) const {
        if (i < static_cast<int>(fa.size())) return fa[i];
        i -= static_cast<int>(fa.size());
        if (i < static_cast<int>(fc.size())) return fc[i];
        return fn[i - static_cast<int>(fc.size())];
    }
    char partition_of(int i) const {
        if (i < static_cast<int>(fa.size())) return 'a';
        return i < static_cast<int>(fa.size() + fc.size()) ? 'c' : 'n';
    }
};

namespace hidr_detail {

inline int time_index(const HidrGraph& g, std::int64_t v) {
    const auto it = std::lower_bound(g.time_values.begin(), g.time_values.end(), v);
    if (it == g.time_values.end() || *it != v)
        throw std::logic_error("hidr: unregistered timestamp value");
    return static_cast<int>(it - g.time_values.begin());
}

}  // namespace hidr_detail

inline HidrGraph lift(const SourceDataset& ds, const LiftOptions& opts = {}) {
    HidrGraph g;
    g.flavor = ds.flavor;
    g.entity_labels = ds.entities.labels();
    g.relation_labels = ds.relations.labels();
    g.nested_labels = ds.nested_relations.labels();
    g.n_source_relations = ds.relations.size();

    const std::vector<Fact>* splits[4] = {&ds.train, &ds.valid, &ds.test,
                                          &ds.extra_train};
    const std::vector<NestedFact>* nsplits[3] = {&ds.nested_train, &ds.nested_valid,
                                                 &ds.nested_test};

    // timestamp nodes: dedup by value, sorted
    {
        std::set<std::int64_t> vals;
        for (const auto* s : splits)
            for (const Fact& f : *s)
                if (f.has_time) {
                    vals.insert(f.begin);
                    vals.insert(f.end);
                }
        g.time_values.assign(vals.begin(), vals.end());
        if (!g.time_values.empty()) {
            g.begin_rel = static_cast<int>(g.relation_labels.size());
            g.relation_labels.push_back("begin");
            g.end_rel = static_cast<int>(g.relation_labels.size());
            g.relation_labels.push_back("end");
        }
    }

    // which facts receive a FactNode
    const bool flavored_nodes = ds.flavor == Flavor::HKG || ds.flavor == Flavor::TKG ||
                                ds.flavor == Flavor::HTKG;
    std::set<TripleRef> nested_members;
    for (const auto* s : nsplits)
        for (const NestedFact& n : *s) {
            nested_members.insert(n.sub);
            nested_members.insert(n.obj);
        }
    auto wants_node = [&](const Fact& f, int split) {
        if (split == 3) return false;  // augmentation triples stay plain
        if (opts.all_fact_nodes) return true;
        if (flavored_nodes) return true;
        if (ds.flavor == Flavor::NKG) return nested_members.count(f.main) > 0;
        return false;
    };

    // pass 1: counts and relation-node discovery
    std::vector<std::uint8_t> rel_used(g.relation_labels.size(), 0);
    int fact_nodes = 0;
    for (int s = 0; s < 4; ++s)
        for (const Fact& f : *splits[s])
            if (wants_node(f, s)) {
                ++fact_nodes;
                rel_used[f.main.r] = 1;
            }
    g.n_entities = static_cast<int>(g.entity_labels.size());
    g.n_times = static_cast<int>(g.time_values.size());
    g.rel_node_of.assign(g.relation_labels.size(), -1);
    int next_rel_node = g.n_entities + g.n_times;
    for (std::size_t r = 0; r < rel_used.size(); ++r)
        if (rel_used[r]) g.rel_node_of[r] = next_rel_node++;
    g.n_rel_nodes = next_rel_node - g.n_entities - g.n_times;
    g.n_fact_nodes = fact_nodes;

    g.nodes.reserve(static_cast<std::size_t>(g.n_entities) + g.n_times +
                    g.n_rel_nodes + g.n_fact_nodes);
    for (int e = 0; e < g.n_entities; ++e)
        g.nodes.push_back({NodeKind::Atomic, e, std::nullopt});
    for (int i = 0; i < g.n_times; ++i)
        g.nodes.push_back({NodeKind::Atomic, i, g.time_values[i]});
    for (std::size_t r = 0; r < g.rel_node_of.size(); ++r)
        if (g.rel_node_of[r] >= 0)
            g.nodes.push_back({NodeKind::RelationNode, static_cast<int>(r), std::nullopt});
    for (int f = 0; f < g.n_fact_nodes; ++f)
        g.nodes.push_back({NodeKind::FactNode, f, std::nullopt});

    // pass 2: triples
    std::map<TripleRef, int> first_fact_node;  // triple value -> fact node id
    int next_fact = 0;
    for (int s = 0; s < 4; ++s) {
        const auto& facts = *splits[s];
        for (int p = 0; p < static_cast<int>(facts.size()); ++p) {
            const Fact& f = facts[p];
            g.fa.push_back({g.ent_node(f.main.h), HidrEdgeKind::atomic(f.main.r),
                            g.ent_node(f.main.t)});
            g.fa_origin.push_back({s, p});
            if (!wants_node(f, s)) continue;
            const int fid = next_fact++;
            const int fnode = g.fact_node(fid);
            g.fact_origin.push_back({s, p});
            first_fact_node.emplace(f.main, fnode);
            g.fc.push_back({fnode, HidrEdgeKind::connected(ConnectedKind::HasRelation),
                            g.rel_node(f.main.r)});
            g.fc.push_back({fnode, HidrEdgeKind::connected(ConnectedKind::HasHeadEntity),
                            g.ent_node(f.main.h)});
            g.fc.push_back({fnode, HidrEdgeKind::connected(ConnectedKind::HasTailEntity),
                            g.ent_node(f.main.t)});
            for (const auto& [k, v] : f.quals)
                g.fc.push_back({fnode, HidrEdgeKind::qualifier(k), g.ent_node(v)});
            if (f.has_time) {
                g.fc.push_back({fnode, HidrEdgeKind::qualifier(g.begin_rel),
                                g.time_node(hidr_detail::time_index(g, f.begin))});
                g.fc.push_back({fnode, HidrEdgeKind::qualifier(g.end_rel),
                                g.time_node(hidr_detail::time_index(g, f.end))});
            }
        }
    }

    for (int s = 0; s < 3; ++s) {
        const auto& nested = *nsplits[s];
        for (int p = 0; p < static_cast<int>(nested.size()); ++p) {
            const NestedFact& n = nested[p];
            const auto sub = first_fact_node.find(n.sub);
            const auto obj = first_fact_node.find(n.obj);
            if (sub == first_fact_node.end() || obj == first_fact_node.end())
                throw std::invalid_argument(
                    "lift: nested fact references a triple absent from the atomic set");
            g.fn.push_back({sub->second, HidrEdgeKind::nested(n.rel), obj->second});
            g.fn_origin.push_back({s, p});
        }
    }

    // adjacency with materialized reverse twins
    g.out_adj.assign(g.nodes.size(), {});
    g.in_adj.assign(g.nodes.size(), {});
    for (int i = 0; i < g.triple_count(); ++i) {
        const HidrTriple& t = g.triple_at(i);
        g.out_adj[t.src].push_back({t.dst, i, true});
        g.in_adj[t.dst].push_back({t.src, i, true});
        g.out_adj[t.dst].push_back({t.src, i, false});
        g.in_adj[t.src].push_back({t.dst, i, false});
    }
    return g;
}

// Exact inverse of lift. Reconstructs every fact from the graph structure
// alone, then reassembles splits from the origin tags.
inline SourceDataset lower(const HidrGraph& g) {
    SourceDataset ds;
    ds.flavor = g.flavor;
    for (const auto& l : g.entity_labels) ds.entities.add(l);
    for (int r = 0; r < g.n_source_relations; ++r) ds.relations.add(g.relation_labels[r]);
    for (const auto& l : g.nested_labels) ds.nested_relations.add(l);

    std::map<FactOrigin, Fact> recovered;
    const int fa_n = static_cast<int>(g.fa.size());
    for (int i = 0; i < fa_n; ++i) {
        const HidrTriple& t = g.fa[i];
        Fact f;
        f.main = {g.nodes[t.src].ref, t.edge.rel, g.nodes[t.dst].ref};
        recovered[g.fa_origin[i]] = f;
    }

    // overlay full reconstructions from fact nodes (qualifiers, intervals)
    std::vector<Fact> node_fact(g.n_fact_nodes);
    for (const HidrTriple& t : g.fc) {
        const HidrNode& src = g.nodes[t.src];
        if (src.kind != NodeKind::FactNode)
            throw std::invalid_argument("lower: connected edge source is not a FactNode");
        Fact& f = node_fact[src.ref];
        const HidrNode& dst = g.nodes[t.dst];
        switch (t.edge.tag) {
            case EdgeTag::Connected:
                switch (t.edge.which) {
                    case ConnectedKind::HasRelation: f.main.r = dst.ref; break;
                    case ConnectedKind::HasHeadEntity: f.main.h = dst.ref; break;
                    case ConnectedKind::HasTailEntity: f.main.t = dst.ref; break;
                }
                break;
            case EdgeTag::QualifierRel:
                if (t.edge.rel == g.begin_rel && dst.numeric) {
                    f.has_time = true;
                    f.begin = *dst.numeric;
                } else if (t.edge.rel == g.end_rel && dst.numeric) {
                    f.has_time = true;
                    f.end = *dst.numeric;
                } else {
                    f.quals.emplace_back(t.edge.rel, dst.ref);
                }
                break;
            default:
                throw std::invalid_argument("lower: atomic/nested edge in F_c");
        }
    }
    for (int i = 0; i < g.n_fact_nodes; ++i) {
        const Fact& f = node_fact[i];
        if (f.main.h < 0 || f.main.r < 0 || f.main.t < 0)
            throw std::invalid_argument("lower: FactNode missing a Connected variant");
        recovered[g.fact_origin[i]] = f;
    }

    std::vector<Fact>* targets[4] = {&ds.train, &ds.valid, &ds.test, &ds.extra_train};
    for (const auto& [origin, fact] : recovered) {
        auto& dstv = *targets[origin.split];
        if (origin.pos != static_cast<int>(dstv.size()))
            throw std::invalid_argument("lower: origin positions are not contiguous");
        dstv.push_back(fact);
    }

    std::vector<NestedFact>* ntargets[3] = {&ds.nested_train, &ds.nested_valid,
                                            &ds.nested_test};
    std::map<FactOrigin, NestedFact> nrecovered;
    for (int i = 0; i < static_cast<int>(g.fn.size()); ++i) {
        const HidrTriple& t = g.fn[i];
        if (g.nodes[t.src].kind != NodeKind::FactNode ||
            g.nodes[t.dst].kind != NodeKind::FactNode)
            throw std::invalid_argument("lower: dangling nested edge");
        NestedFact n;
        n.sub = node_fact[g.nodes[t.src].ref].main;
        n.rel = t.edge.rel;
        n.obj = node_fact[g.nodes[t.dst].ref].main;
        nrecovered[g.fn_origin[i]] = n;
    }
    for (const auto& [origin, nested] : nrecovered) {
        auto& dstv = *ntargets[origin.split];
        if (origin.pos != static_cast<int>(dstv.size()))
            throw std::invalid_argument("lower: nested origin positions are not contiguous");
        dstv.push_back(nested);
    }

    // timestamp vocabulary in file-appearance order, as a parse would build it
    std::unordered_set<std::int64_t> seen;
    for (const auto* split : {&ds.train, &ds.valid, &ds.test})
        for (const Fact& f : *split)
            if (f.has_time) {
                if (seen.insert(f.begin).second) ds.timestamps.push_back(f.begin);
                if (seen.insert(f.end).second) ds.timestamps.push_back(f.end);
            }
    return ds;
}

inline std::vector<std::string> validate(const HidrGraph& g) {
    std::vector<std::string> out;
    auto describe = [&](const HidrTriple& t) {
        std::ostringstream os;
        os << "(" << t.src << ",";
        switch (t.edge.tag) {
            case EdgeTag::Connected:
                os << "connected:" << static_cast<int>(t.edge.which);
                break;
            case EdgeTag::AtomicRel: os << "rel:" << t.edge.rel; break;
            case EdgeTag::QualifierRel: os << "qual:" << t.edge.rel; break;
            case EdgeTag::NestedRel: os << "nested:" << t.edge.rel; break;
        }
        os << "," << t.dst << ")";
        return os.str();
    };
    auto kind_of = [&](int node) { return g.nodes.at(node).kind; };
    const int n = g.node_count();

    for (const HidrTriple& t : g.fa) {
        if (t.src < 0 || t.src >= n || t.dst < 0 || t.dst >= n) {
            out.push_back("F_a triple with out-of-range node: " + describe(t));
            continue;
        }
        if (t.edge.tag != EdgeTag::AtomicRel)
            out.push_back("F_a triple with non-atomic relation: " + describe(t));
        else if (kind_of(t.src) != NodeKind::Atomic || kind_of(t.dst) != NodeKind::Atomic)
            out.push_back("AtomicRel edge must connect atomic nodes: " + describe(t));
    }
    std::vector<std::array<int, 3>> connected_seen(
        static_cast<std::size_t>(g.n_fact_nodes), {0, 0, 0});
    for (const HidrTriple& t : g.fc) {
        if (t.src < 0 || t.src >= n || t.dst < 0 || t.dst >= n) {
            out.push_back("F_c triple with out-of-range node: " + describe(t));
            continue;
        }
        if (kind_of(t.src) != NodeKind::FactNode) {
            out.push_back("F_c edge source must be a FactNode: " + describe(t));
            continue;
        }
        switch (t.edge.tag) {
            case EdgeTag::Connected: {
                const NodeKind dk = kind_of(t.dst);
                if (t.edge.which == ConnectedKind::HasRelation) {
                    if (dk != NodeKind::RelationNode)
                        out.push_back("hasRelation must target a RelationNode: " +
                                      describe(t));
                } else if (dk != NodeKind::Atomic) {
                    out.push_back("hasHead/hasTail must target an atomic node: " +
                                  describe(t));
                }
                ++connected_seen[g.nodes[t.src].ref][static_cast<int>(t.edge.which)];
                break;
            }
            case EdgeTag::QualifierRel:
                if (kind_of(t.dst) != NodeKind::Atomic)
                    out.push_back("qualifier edge must target an atomic node: " +
                                  describe(t));
                break;
            default:
                out.push_back("F_c edge must be Connected or Qualifier: " + describe(t));
        }
    }
    for (int f = 0; f < g.n_fact_nodes; ++f)
        for (int w = 0; w < 3; ++w)
            if (connected_seen[f][w] != 1)
                out.push_back("FactNode " + std::to_string(f) + " has " +
                              std::to_string(connected_seen[f][w]) +
                              " edges of connected variant " + std::to_string(w));
    for (const HidrTriple& t : g.fn) {
        if (t.src < 0 || t.src >= n || t.dst < 0 || t.dst >= n) {
            out.push_back("F_n triple with out-of-range node: " + describe(t));
            continue;
        }
        if (t.edge.tag != EdgeTag::NestedRel)
            out.push_back("F_n triple with non-nested relation: " + describe(t));
        else if (kind_of(t.src) != NodeKind::FactNode ||
                 kind_of(t.dst) != NodeKind::FactNode)
            out.push_back("NestedRel edge must connect FactNodes: " + describe(t));
    }

    if (g.fact_origin.size() != static_cast<std::size_t>(g.n_fact_nodes))
        out.push_back("factOrigin is not a bijection onto the fact nodes");
    else {
        std::set<FactOrigin> origins(g.fact_origin.begin(), g.fact_origin.end());
        if (origins.size() != g.fact_origin.size())
            out.push_back("factOrigin maps two FactNodes to one source fact");
    }

    // adjacency consistency: every triple contributes exactly one forward and
    // one reverse entry on each endpoint
    if (g.out_adj.size() != g.nodes.size() || g.in_adj.size() != g.nodes.size()) {
        out.push_back("adjacency table size mismatch");
        return out;
    }
    std::vector<int> fwd_out(g.triple_count(), 0), rev_out(g.triple_count(), 0);
    std::vector<int> fwd_in(g.triple_count(), 0), rev_in(g.triple_count(), 0);
    for (int node = 0; node < n; ++node) {
        for (const AdjEntry& a : g.out_adj[node]) {
            if (a.triple < 0 || a.triple >= g.triple_count()) {
                out.push_back("adjacency references unknown triple");
                continue;
            }
            const HidrTriple& t = g.triple_at(a.triple);
            if (a.forward) {
                ++fwd_out[a.triple];
                if (t.src != node || t.dst != a.nbr)
                    out.push_back("forward out-adjacency disagrees with triple list");
            } else {
                ++rev_out[a.triple];
                if (t.dst != node || t.src != a.nbr)
                    out.push_back("reverse out-adjacency disagrees with triple list");
            }
        }
        for (const AdjEntry& a : g.in_adj[node]) {
            if (a.triple < 0 || a.triple >= g.triple_count()) continue;
            const HidrTriple& t = g.triple_at(a.triple);
            if (a.forward) {
                ++fwd_in[a.triple];
                if (t.dst != node || t.src != a.nbr)
                    out.push_back("forward in-adjacency disagrees with triple list");
            } else {
                ++rev_in[a.triple];
                if (t.src != node || t.dst != a.nbr)
                    out.push_back("reverse in-adjacency disagrees with triple list");
            }
        }
    }
    for (int i = 0; i < g.triple_count(); ++i)
        if (fwd_out[i] != 1 || rev_out[i] != 1 || fwd_in[i] != 1 || rev_in[i] != 1) {
            out.push_back("triple " + std::to_string(i) +
                          " is not represented exactly once per direction in adjacency");
            break;
        }
    return out;
}

// ---- canonical TSV export ----

inline std::string render_node(const HidrGraph& g, int node) {
    const HidrNode& nd = g.nodes.at(node);
    switch (nd.kind) {
        case NodeKind::Atomic:
            if (nd.numeric) return "T#" + std::to_string(*nd.numeric);
            return "E#" + g.entity_labels.at(nd.ref);
        case NodeKind::RelationNode: return "R#" + g.relation_labels.at(nd.ref);
        case NodeKind::FactNode: return "F#" + std::to_string(nd.ref);
    }
    return "?";
}

inline std::string render_edge(const HidrGraph& g, const HidrEdgeKind& e) {
    switch (e.tag) {
        case EdgeTag::Connected:
            switch (e.which) {
                case ConnectedKind::HasRelation: return "has_relation";
                case ConnectedKind::HasHeadEntity: return "has_head_entity";
                case ConnectedKind::HasTailEntity: return "has_tail_entity";
            }
            return "?";
        case EdgeTag::AtomicRel:
        case EdgeTag::QualifierRel: return "rel:" + g.relation_labels.at(e.rel);
        case EdgeTag::NestedRel: return "nested:" + g.nested_labels.at(e.rel);
    }
    return "?";
}

inline void export_hidr_tsv(const HidrGraph& g, std::ostream& os) {
    for (int i = 0; i < g.triple_count(); ++i) {
        const HidrTriple& t = g.triple_at(i);
        os << render_node(g, t.src) << '\t' << render_edge(g, t.edge) << '\t'
           << render_node(g, t.dst) << '\t' << g.partition_of(i) << '\n';
    }
}

// Train-only view: valid/test facts (atomic and nested) are queries, never
// graph structure.
inline SourceDataset train_view(const SourceDataset& ds) {
    SourceDataset v = ds;
    v.valid.clear();
    v.test.clear();
    v.nested_valid.clear();
    v.nested_test.clear();
    v.test_origin.clear();
    return v;
}

}  // namespace unihr
