#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "unihr/rng.hpp"

namespace unihr {

enum class Flavor { Triple, HKG, TKG, NKG, HTKG };

inline const char* flavor_name(Flavor f) {
    switch (f) {
        case Flavor::Triple: return "triple";
        case Flavor::HKG: return "hkg";
        case Flavor::TKG: return "tkg";
        case Flavor::NKG: return "nkg";
        case Flavor::HTKG: return "htkg";
    }
    return "?";
}

inline Flavor parse_flavor(const std::string& s) {
    if (s == "triple") return Flavor::Triple;
    if (s == "hkg") return Flavor::HKG;
    if (s == "tkg") return Flavor::TKG;
    if (s == "nkg") return Flavor::NKG;
    if (s == "htkg") return Flavor::HTKG;
    throw std::invalid_argument("unknown flavor: " + s);
}

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense label<->index bijection; indices are assignment order.
class Vocab {
public:
    int add(const std::string& label) {
        auto it = index_.find(label);
        if (it != index_.end()) return it->second;
        const int id = static_cast<int>(labels_.size());
        labels_.push_back(label);
        index_.emplace(label, id);
        return id;
    }

    int find(const std::string& label) const {
        auto it = index_.find(label);
        return it == index_.end() ? -1 : it->second;
    }

    const std::string& label(int id) const { return labels_.at(id); }
    int size() const { return static_cast<int>(labels_.size()); }
    const std::vector<std::string>& labels() const { return labels_; }

    bool operator==(const Vocab& o) const { return labels_ == o.labels_; }

private:
    std::vector<std::string> labels_;
    std::unordered_map<std::string, int> index_;
};

struct TripleRef {
    int h = -1, r = -1, t = -1;
    auto operator<=>(const TripleRef&) const = default;
};

// One fact of any flavor: qualifiers and the validity interval are optional.
struct Fact {
    TripleRef main;
    std::vector<std::pair<int, int>> quals;  // (key relation, value entity)
    bool has_time = false;
    std::int64_t begin = 0, end = 0;

    auto operator<=>(const Fact&) const = default;
};

struct NestedFact {
    TripleRef sub;
    int rel = -1;  // nested relation id
    TripleRef obj;

    auto operator<=>(const NestedFact&) const = default;
};

struct SourceDataset {
    Flavor flavor = Flavor::Triple;
    Vocab entities, relations, nested_relations;
    std::vector<std::int64_t> timestamps;  // first-appearance order, deduped
    std::vector<Fact> train, valid, test;
    std::vector<NestedFact> nested_train, nested_valid, nested_test;
    std::vector<Fact> extra_train;  // augmented plain triples, training only
    std::vector<int> test_origin;   // per test fact source id, set by merge_hybrid

    bool operator==(const SourceDataset& o) const {
        return flavor == o.flavor && entities == o.entities &&
               relations == o.relations && nested_relations == o.nested_relations &&
               timestamps == o.timestamps && train == o.train && valid == o.valid &&
               test == o.test && nested_train == o.nested_train &&
               nested_valid == o.nested_valid && nested_test == o.nested_test &&
               extra_train == o.extra_train;
    }
};

// ---- parsing ----

namespace kg_detail {

inline std::vector<std::string> split_tab(const std::string& line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t tab = line.find('\t', pos);
        if (tab == std::string::npos) {
            out.push_back(line.substr(pos));
            break;
        }
        out.push_back(line.substr(pos, tab - pos));
        pos = tab + 1;
    }
    return out;
}

inline std::vector<std::string> split_comma(const std::string& line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t c = line.find(',', pos);
        if (c == std::string::npos) {
            out.push_back(line.substr(pos));
            break;
        }
        out.push_back(line.substr(pos, c - pos));
        pos = c + 1;
    }
    return out;
}

inline std::int64_t parse_int(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const std::int64_t v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(where + ": not an integer: '" + s + "'");
    }
}

// Wraps vocabularies with the transductive rule: labels may only be
// introduced while reading the train split.
struct VocabBuilder {
    Vocab& vocab;
    bool in_train = true;
    const char* what;

    int resolve(const std::string& label, const std::string& where) {
        if (in_train) return vocab.add(label);
        const int id = vocab.find(label);
        if (id < 0)
            throw ParseError(where + ": unknown test-time " + what + " '" + label +
                             "' (transductive setting: every label must appear in train)");
        return id;
    }
};

struct TimestampBuilder {
    std::vector<std::int64_t>& values;
    std::unordered_set<std::int64_t> seen;

    void note(std::int64_t v) {
        if (seen.insert(v).second) values.push_back(v);
    }
};

}  // namespace kg_detail

class DatasetReader {
public:
    explicit DatasetReader(SourceDataset& ds)
        : ds_(ds),
          ents_{ds.entities, true, "entity"},
          rels_{ds.relations, true, "relation"},
          nrels_{ds.nested_relations, true, "nested relation"},
          times_{ds.timestamps, {}} {
        times_.seen.insert(ds.timestamps.begin(), ds.timestamps.end());
    }

    void set_split(bool is_train) {
        ents_.in_train = is_train;
        rels_.in_train = is_train;
        nrels_.in_train = is_train;
    }

    Fact parse_triple_line(const std::string& line, const std::string& where) {
        const auto cols = kg_detail::split_tab(line);
        if (cols.size() != 3)
            throw ParseError(where + ": expected 3 tab-separated fields, got " +
                             std::to_string(cols.size()));
        Fact f;
        f.main.h = ents_.resolve(cols[0], where);
        f.main.r = rels_.resolve(cols[1], where);
        f.main.t = ents_.resolve(cols[2], where);
        return f;
    }

    Fact parse_tkg_line(const std::string& line, const std::string& where) {
        const auto cols = kg_detail::split_tab(line);
        if (cols.size() != 5)
            throw ParseError(where + ": expected 5 tab-separated fields, got " +
                             std::to_string(cols.size()));
        Fact f;
        f.main.h = ents_.resolve(cols[0], where);
        f.main.r = rels_.resolve(cols[1], where);
        f.main.t = ents_.resolve(cols[2], where);
        f.has_time = true;
        f.begin = kg_detail::parse_int(cols[3], where);
        f.end = kg_detail::parse_int(cols[4], where);
        if (f.begin > f.end)
            throw ParseError(where + ": interval begin > end");
        times_.note(f.begin);
        times_.note(f.end);
        return f;
    }

    Fact parse_hkg_line(const std::string& line, const std::string& where,
                        bool allow_time) {
        Fact f;
        if (!line.empty() && line.front() == '{') {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(where + ": bad JSON: " + e.what());
            }
            if (!j.contains("triple") || !j["triple"].is_array() ||
                j["triple"].size() != 3)
                throw ParseError(where + ": 'triple' must be a 3-array");
            f.main.h = ents_.resolve(j["triple"][0].get<std::string>(), where);
            f.main.r = rels_.resolve(j["triple"][1].get<std::string>(), where);
            f.main.t = ents_.resolve(j["triple"][2].get<std::string>(), where);
            if (j.contains("qualifiers")) {
                for (const auto& q : j["qualifiers"]) {
                    if (!q.is_array() || q.size() != 2)
                        throw ParseError(where + ": qualifier must be a [key,value] pair");
                    const int k = rels_.resolve(q[0].get<std::string>(), where);
                    const int v = ents_.resolve(q[1].get<std::string>(), where);
                    f.quals.emplace_back(k, v);
                }
            }
            const bool has_b = j.contains("begin"), has_e = j.contains("end");
            if (has_b != has_e)
                throw ParseError(where + ": begin/end must appear together");
            if (has_b) {
                if (!allow_time)
                    throw ParseError(where + ": timestamps not allowed for this flavor");
                f.has_time = true;
                f.begin = j["begin"].get<std::int64_t>();
                f.end = j["end"].get<std::int64_t>();
                if (f.begin > f.end) throw ParseError(where + ": interval begin > end");
                times_.note(f.begin);
                times_.note(f.end);
            }
        } else {
            // convenience importer: h,r,t,k1,v1,...
            const auto cols = kg_detail::split_comma(line);
            if (cols.size() < 3 || cols.size() % 2 == 0)
                throw ParseError(where + ": comma form needs 3 + 2m fields");
            f.main.h = ents_.resolve(cols[0], where);
            f.main.r = rels_.resolve(cols[1], where);
            f.main.t = ents_.resolve(cols[2], where);
            for (std::size_t i = 3; i + 1 < cols.size(); i += 2) {
                const int k = rels_.resolve(cols[i], where);
                const int v = ents_.resolve(cols[i + 1], where);
                f.quals.emplace_back(k, v);
            }
        }
        return f;
    }

    NestedFact parse_nested_line(const std::string& line, const std::string& where) {
        const auto cols = kg_detail::split_tab(line);
        if (cols.size() != 7)
            throw ParseError(where + ": expected 7 tab-separated fields, got " +
                             std::to_string(cols.size()));
        NestedFact n;
        n.sub.h = ents_.resolve(cols[0], where);
        n.sub.r = rels_.resolve(cols[1], where);
        n.sub.t = ents_.resolve(cols[2], where);
        n.rel = nrels_.resolve(cols[3], where);
        n.obj.h = ents_.resolve(cols[4], where);
        n.obj.r = rels_.resolve(cols[5], where);
        n.obj.t = ents_.resolve(cols[6], where);
        return n;
    }

private:
    SourceDataset& ds_;
    kg_detail::VocabBuilder ents_, rels_, nrels_;
    kg_detail::TimestampBuilder times_;
};

namespace kg_detail {

template <typename LineFn>
void for_each_line(const std::filesystem::path& path, bool required, LineFn fn) {
    std::ifstream is(path);
    if (!is) {
        if (required) throw ParseError("cannot open " + path.string());
        return;
    }
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        fn(line, path.filename().string() + ":" + std::to_string(lineno));
    }
}

}  // namespace kg_detail

// Reads a dataset directory: train/valid/test split files named per flavor
// (tsv for triple/tkg/nkg, jsonl for hkg/htkg), nested_* companions for nkg,
// optional extra_train.tsv with augmented plain triples.
inline SourceDataset parse_dataset(const std::string& dir, Flavor flavor) {
    namespace fs = std::filesystem;
    SourceDataset ds;
    ds.flavor = flavor;
    DatasetReader reader(ds);
    const bool jsonl = flavor == Flavor::HKG || flavor == Flavor::HTKG;
    const std::string ext = jsonl ? ".jsonl" : ".tsv";
    const char* splits[3] = {"train", "valid", "test"};
    std::vector<Fact>* targets[3] = {&ds.train, &ds.valid, &ds.test};

    for (int s = 0; s < 3; ++s) {
        reader.set_split(s == 0);
        const fs::path path = fs::path(dir) / (std::string(splits[s]) + ext);
        kg_detail::for_each_line(
            path, /*required=*/s == 0,
            [&](const std::string& line, const std::string& where) {
                switch (flavor) {
                    case Flavor::Triple:
                        targets[s]->push_back(reader.parse_triple_line(line, where));
                        break;
                    case Flavor::TKG:
                        targets[s]->push_back(reader.parse_tkg_line(line, where));
                        break;
                    case Flavor::HKG:
                        targets[s]->push_back(
                            reader.parse_hkg_line(line, where, /*allow_time=*/false));
                        break;
                    case Flavor::HTKG:
                        targets[s]->push_back(
                            reader.parse_hkg_line(line, where, /*allow_time=*/true));
                        break;
                    case Flavor::NKG:
                        targets[s]->push_back(reader.parse_triple_line(line, where));
                        break;
                }
            });
    }
    if (ds.train.empty()) throw ParseError("empty train split in " + dir);

    if (flavor == Flavor::NKG) {
        std::vector<NestedFact>* ntargets[3] = {&ds.nested_train, &ds.nested_valid,
                                                &ds.nested_test};
        for (int s = 0; s < 3; ++s) {
            reader.set_split(s == 0);
            const fs::path path =
                fs::path(dir) / ("nested_" + std::string(splits[s]) + ".tsv");
            kg_detail::for_each_line(
                path, /*required=*/s == 0,
                [&](const std::string& line, const std::string& where) {
                    ntargets[s]->push_back(reader.parse_nested_line(line, where));
                });
        }
        // nested members must exist among the atomic facts
        std::set<TripleRef> atomic;
        for (const auto* split : {&ds.train, &ds.valid, &ds.test})
            for (const Fact& f : *split) atomic.insert(f.main);
        for (const auto* split : {&ds.nested_train, &ds.nested_valid, &ds.nested_test})
            for (const NestedFact& n : *split)
                if (!atomic.count(n.sub) || !atomic.count(n.obj))
                    throw ParseError(
                        "nested fact references a triple absent from the atomic set");
    }

    {
        reader.set_split(false);  // augmented triples reuse existing labels only
        const fs::path path = fs::path(dir) / "extra_train.tsv";
        kg_detail::for_each_line(path, /*required=*/false,
                                 [&](const std::string& line, const std::string& where) {
                                     ds.extra_train.push_back(
                                         reader.parse_triple_line(line, where));
                                 });
    }
    return ds;
}

// ---- serialization ----

namespace kg_detail {

inline void write_triple_line(std::ostream& os, const SourceDataset& ds,
                              const TripleRef& t) {
    os << ds.entities.label(t.h) << '\t' << ds.relations.label(t.r) << '\t'
       << ds.entities.label(t.t) << '\n';
}

inline void write_fact_jsonl(std::ostream& os, const SourceDataset& ds,
                             const Fact& f) {
    nlohmann::ordered_json j;
    j["triple"] = {ds.entities.label(f.main.h), ds.relations.label(f.main.r),
                   ds.entities.label(f.main.t)};
    nlohmann::ordered_json quals = nlohmann::ordered_json::array();
    for (const auto& [k, v] : f.quals)
        quals.push_back({ds.relations.label(k), ds.entities.label(v)});
    j["qualifiers"] = quals;
    if (f.has_time) {
        j["begin"] = f.begin;
        j["end"] = f.end;
    }
    os << j.dump() << '\n';
}

}  // namespace kg_detail

inline void write_dataset(const SourceDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const bool jsonl = ds.flavor == Flavor::HKG || ds.flavor == Flavor::HTKG;
    const std::string ext = jsonl ? ".jsonl" : ".tsv";
    const char* splits[3] = {"train", "valid", "test"};
    const std::vector<Fact>* sources[3] = {&ds.train, &ds.valid, &ds.test};
    for (int s = 0; s < 3; ++s) {
        std::ofstream os(fs::path(dir) / (std::string(splits[s]) + ext));
        if (!os) throw std::runtime_error("write_dataset: cannot write " + dir);
        for (const Fact& f : *sources[s]) {
            switch (ds.flavor) {
                case Flavor::Triple:
                case Flavor::NKG:
                    kg_detail::write_triple_line(os, ds, f.main);
                    break;
                case Flavor::TKG:
                    os << ds.entities.label(f.main.h) << '\t'
                       << ds.relations.label(f.main.r) << '\t'
                       << ds.entities.label(f.main.t) << '\t' << f.begin << '\t'
                       << f.end << '\n';
                    break;
                case Flavor::HKG:
                case Flavor::HTKG:
                    kg_detail::write_fact_jsonl(os, ds, f);
                    break;
            }
        }
    }
    if (ds.flavor == Flavor::NKG) {
        const std::vector<NestedFact>* sources_n[3] = {&ds.nested_train,
                                                       &ds.nested_valid,
                                                       &ds.nested_test};
        for (int s = 0; s < 3; ++s) {
            std::ofstream os(fs::path(dir) /
                             ("nested_" + std::string(splits[s]) + ".tsv"));
            for (const NestedFact& n : *sources_n[s]) {
                os << ds.entities.label(n.sub.h) << '\t' << ds.relations.label(n.sub.r)
                   << '\t' << ds.entities.label(n.sub.t) << '\t'
                   << ds.nested_relations.label(n.rel) << '\t'
                   << ds.entities.label(n.obj.h) << '\t' << ds.relations.label(n.obj.r)
                   << '\t' << ds.entities.label(n.obj.t) << '\n';
            }
        }
    }
    if (!ds.extra_train.empty()) {
        std::ofstream os(fs::path(dir) / "extra_train.tsv");
        for (const Fact& f : ds.extra_train)
            kg_detail::write_triple_line(os, ds, f.main);
    }
}

// ---- statistics ----

struct StatsReport {
    std::string flavor;
    std::size_t facts = 0;
    std::size_t train = 0, valid = 0, test = 0;
    std::size_t entities = 0, relations = 0;
    double with_q_pct = 0.0;
    int arity_min = 0, arity_max = 0;
    std::size_t nested_facts = 0, nested_relations = 0;
    bool has_time = false;
    std::int64_t period_min = 0, period_max = 0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["flavor"] = flavor;
        j["facts"] = facts;
        j["train"] = train;
        j["valid"] = valid;
        j["test"] = test;
        j["entities"] = entities;
        j["relations"] = relations;
        j["with_q_pct"] = with_q_pct;
        j["arity_min"] = arity_min;
        j["arity_max"] = arity_max;
        j["nested_facts"] = nested_facts;
        j["nested_relations"] = nested_relations;
        if (has_time) {
            j["period_min"] = period_min;
            j["period_max"] = period_max;
        }
        return j;
    }
};

inline StatsReport dataset_stats(const SourceDataset& ds) {
    StatsReport r;
    r.flavor = flavor_name(ds.flavor);
    r.train = ds.train.size();
    r.valid = ds.valid.size();
    r.test = ds.test.size();
    r.facts = r.train + r.valid + r.test;
    r.entities = static_cast<std::size_t>(ds.entities.size());
    r.relations = static_cast<std::size_t>(ds.relations.size());
    std::size_t with_q = 0;
    bool first = true;
    for (const auto* split : {&ds.train, &ds.valid, &ds.test}) {
        for (const Fact& f : *split) {
            const int arity = 2 + static_cast<int>(f.quals.size());
            if (first) {
                r.arity_min = r.arity_max = arity;
                first = false;
            } else {
                r.arity_min = std::min(r.arity_min, arity);
                r.arity_max = std::max(r.arity_max, arity);
            }
            if (!f.quals.empty()) ++with_q;
            if (f.has_time) {
                if (!r.has_time) {
                    r.period_min = f.begin;
                    r.period_max = f.end;
                    r.has_time = true;
                } else {
                    r.period_min = std::min(r.period_min, f.begin);
                    r.period_max = std::max(r.period_max, f.end);
                }
            }
        }
    }
    r.with_q_pct = r.facts ? 100.0 * static_cast<double>(with_q) / r.facts : 0.0;
    r.nested_facts =
        ds.nested_train.size() + ds.nested_valid.size() + ds.nested_test.size();
    r.nested_relations = static_cast<std::size_t>(ds.nested_relations.size());
    return r;
}

// Reorder vocabularies to first-appearance order (the order a parse of the
// serialized files would assign) and remap all ids. Leaves fact order intact.
inline void canonicalize_vocab_order(SourceDataset& ds) {
    Vocab ents, rels, nrels;
    auto note_triple = [&](const TripleRef& t) {
        ents.add(ds.entities.label(t.h));
        rels.add(ds.relations.label(t.r));
        ents.add(ds.entities.label(t.t));
    };
    for (const auto* split : {&ds.train, &ds.valid, &ds.test})
        for (const Fact& f : *split) {
            note_triple(f.main);
            for (const auto& [k, v] : f.quals) {
                rels.add(ds.relations.label(k));
                ents.add(ds.entities.label(v));
            }
        }
    for (const auto* split : {&ds.nested_train, &ds.nested_valid, &ds.nested_test})
        for (const NestedFact& n : *split) {
            note_triple(n.sub);
            nrels.add(ds.nested_relations.label(n.rel));
            note_triple(n.obj);
        }
    for (const Fact& f : ds.extra_train) note_triple(f.main);

    std::vector<int> em(ds.entities.size()), rm(ds.relations.size()),
        nm(ds.nested_relations.size());
    for (int i = 0; i < ds.entities.size(); ++i) em[i] = ents.find(ds.entities.label(i));
    for (int i = 0; i < ds.relations.size(); ++i)
        rm[i] = rels.find(ds.relations.label(i));
    for (int i = 0; i < ds.nested_relations.size(); ++i)
        nm[i] = nrels.find(ds.nested_relations.label(i));
    if (std::count(em.begin(), em.end(), -1) || std::count(rm.begin(), rm.end(), -1))
        throw std::logic_error("canonicalize_vocab_order: unused vocabulary label");

    auto remap_triple = [&](TripleRef& t) {
        t.h = em[t.h];
        t.r = rm[t.r];
        t.t = em[t.t];
    };
    for (auto* split : {&ds.train, &ds.valid, &ds.test, &ds.extra_train})
        for (Fact& f : *split) {
            remap_triple(f.main);
            for (auto& [k, v] : f.quals) {
                k = rm[k];
                v = em[v];
            }
        }
    for (auto* split : {&ds.nested_train, &ds.nested_valid, &ds.nested_test})
        for (NestedFact& n : *split) {
            remap_triple(n.sub);
            n.rel = nm[n.rel];
            remap_triple(n.obj);
        }
    ds.entities = std::move(ents);
    ds.relations = std::move(rels);
    ds.nested_relations = std::move(nrels);

    std::vector<std::int64_t> times;
    std::unordered_set<std::int64_t> seen;
    for (const auto* split : {&ds.train, &ds.valid, &ds.test})
        for (const Fact& f : *split)
            if (f.has_time) {
                if (seen.insert(f.begin).second) times.push_back(f.begin);
                if (seen.insert(f.end).second) times.push_back(f.end);
            }
    ds.timestamps = std::move(times);
}

// ---- hybrid merging ----

struct MergeReport {
    std::size_t removed_from_a = 0;
    std::size_t removed_from_b = 0;
    std::size_t shared_entities = 0;
    std::size_t shared_relations = 0;
};

namespace kg_detail {

struct IdMaps {
    std::vector<int> ent, rel, nrel;
};

inline IdMaps build_maps(const SourceDataset& src, SourceDataset& dst) {
    IdMaps m;
    m.ent.reserve(src.entities.size());
    for (const auto& l : src.entities.labels()) m.ent.push_back(dst.entities.add(l));
    m.rel.reserve(src.relations.size());
    for (const auto& l : src.relations.labels()) m.rel.push_back(dst.relations.add(l));
    m.nrel.reserve(src.nested_relations.size());
    for (const auto& l : src.nested_relations.labels())
        m.nrel.push_back(dst.nested_relations.add(l));
    return m;
}

inline TripleRef remap(const TripleRef& t, const IdMaps& m) {
    return {m.ent[t.h], m.rel[t.r], m.ent[t.t]};
}

inline Fact remap(const Fact& f, const IdMaps& m) {
    Fact out = f;
    out.main = remap(f.main, m);
    for (auto& [k, v] : out.quals) {
        k = m.rel[k];
        v = m.ent[v];
    }
    return out;
}

}  // namespace kg_detail

// Union vocabularies (shared labels unify), union train/valid sets, and drop
// each test fact whose main triple appears in the other side's train set.
inline std::pair<SourceDataset, MergeReport> merge_hybrid(const SourceDataset& a,
                                                          const SourceDataset& b) {
    SourceDataset out;
    out.flavor = a.flavor == b.flavor ? a.flavor : Flavor::HTKG;
    const kg_detail::IdMaps ma = kg_detail::build_maps(a, out);
    const kg_detail::IdMaps mb = kg_detail::build_maps(b, out);

    MergeReport report;
    for (int i = 0; i < b.entities.size(); ++i)
        if (a.entities.find(b.entities.label(i)) >= 0) ++report.shared_entities;
    for (int i = 0; i < b.relations.size(); ++i)
        if (a.relations.find(b.relations.label(i)) >= 0) ++report.shared_relations;

    std::unordered_set<std::int64_t> seen_time;
    auto add_time = [&](std::int64_t v) {
        if (seen_time.insert(v).second) out.timestamps.push_back(v);
    };
    for (std::int64_t v : a.timestamps) add_time(v);
    for (std::int64_t v : b.timestamps) add_time(v);

    std::set<TripleRef> train_a, train_b;  // in merged id space
    for (const Fact& f : a.train) {
        out.train.push_back(kg_detail::remap(f, ma));
        train_a.insert(out.train.back().main);
    }
    for (const Fact& f : b.train) {
        out.train.push_back(kg_detail::remap(f, mb));
        train_b.insert(out.train.back().main);
    }
    for (const Fact& f : a.valid) out.valid.push_back(kg_detail::remap(f, ma));
    for (const Fact& f : b.valid) out.valid.push_back(kg_detail::remap(f, mb));

    for (const Fact& f : a.test) {
        const Fact g = kg_detail::remap(f, ma);
        if (train_b.count(g.main)) {
            ++report.removed_from_a;
            continue;
        }
        out.test.push_back(g);
        out.test_origin.push_back(0);
    }
    for (const Fact& f : b.test) {
        const Fact g = kg_detail::remap(f, mb);
        if (train_a.count(g.main)) {
            ++report.removed_from_b;
            continue;
        }
        out.test.push_back(g);
        out.test_origin.push_back(1);
    }

    for (const Fact& f : a.extra_train) out.extra_train.push_back(kg_detail::remap(f, ma));
    for (const Fact& f : b.extra_train) out.extra_train.push_back(kg_detail::remap(f, mb));

    auto remap_nested = [](const NestedFact& n, const kg_detail::IdMaps& m) {
        NestedFact o;
        o.sub = kg_detail::remap(n.sub, m);
        o.rel = m.nrel[n.rel];
        o.obj = kg_detail::remap(n.obj, m);
        return o;
    };
    for (const NestedFact& n : a.nested_train) out.nested_train.push_back(remap_nested(n, ma));
    for (const NestedFact& n : b.nested_train) out.nested_train.push_back(remap_nested(n, mb));
    for (const NestedFact& n : a.nested_valid) out.nested_valid.push_back(remap_nested(n, ma));
    for (const NestedFact& n : b.nested_valid) out.nested_valid.push_back(remap_nested(n, mb));
    for (const NestedFact& n : a.nested_test) out.nested_test.push_back(remap_nested(n, ma));
    for (const NestedFact& n : b.nested_test) out.nested_test.push_back(remap_nested(n, mb));
    canonicalize_vocab_order(out);
    return {std::move(out), report};
}

// ---- synthetic generation ----

struct SyntheticSpec {
    Flavor flavor = Flavor::Triple;
    int n_entities = 0;
    int n_relations = 0;
    int n_facts = 0;
    std::string rule = "default";  // per-flavor planted rule, or "none"
    std::uint64_t seed = 0;

    static SyntheticSpec from_json(const nlohmann::json& j) {
        SyntheticSpec s;
        s.flavor = parse_flavor(j.at("flavor").get<std::string>());
        s.n_entities = j.at("n_entities").get<int>();
        s.n_relations = j.at("n_relations").get<int>();
        s.n_facts = j.at("n_facts").get<int>();
        if (j.contains("rule")) s.rule = j.at("rule").get<std::string>();
        s.seed = j.at("seed").get<std::uint64_t>();
        return s;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["flavor"] = flavor_name(flavor);
        j["n_entities"] = n_entities;
        j["n_relations"] = n_relations;
        j["n_facts"] = n_facts;
        j["rule"] = rule;
        j["seed"] = seed;
        return j;
    }
};

namespace kg_detail {

// Seeded permutation of [0, n); the planted rules route tails through it so
// plain index arithmetic cannot shortcut learning.
inline std::vector<int> seeded_perm(int n, Rng& rng) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    rng.shuffle(p);
    return p;
}

}  // namespace kg_detail

// Deterministic synthetic datasets. Planted rules:
//   hkg/htkg: tail = perm[(head + value_index) mod n_e], carried by one
//             qualifier pair with reserved key relation index 0;
//   tkg:      tail = perm[(head + rel + begin_bucket) mod n_e];
//   nkg:      "imply" links (h, r, t) -> (h, r+1, t) over even r.
// rule = "none" plants nothing (round-trip fodder). Every entity and relation
// is forced into train so the transductive parse invariant holds.
inline SourceDataset generate_synthetic(const SyntheticSpec& spec) {
    const int ne = spec.n_entities, nr = spec.n_relations, nf = spec.n_facts;
    if (ne < 2 || nr < 1 || nf < 1)
        throw std::invalid_argument("generate_synthetic: spec counts too small");
    Rng rng(derive_seed(spec.seed, 0xda7a));
    SourceDataset ds;
    ds.flavor = spec.flavor;
    for (int i = 0; i < ne; ++i) ds.entities.add("e" + std::to_string(i));
    for (int i = 0; i < nr; ++i) ds.relations.add("r" + std::to_string(i));

    const bool ruled = spec.rule != "none";
    const std::vector<int> perm = kg_detail::seeded_perm(ne, rng);

    std::vector<Fact> facts;        // all generated facts, pre-split
    std::vector<int> force_train;   // indices that must land in train
    std::vector<int> combo_of;      // rule-combo id per fact, -1 unconstrained

    auto note_time = [&](Fact& f, std::int64_t b, std::int64_t e) {
        f.has_time = true;
        f.begin = b;
        f.end = e;
    };

    std::set<Fact> dedup;
    auto push_unique = [&](Fact f, bool force, int combo = -1) {
        if (!dedup.insert(f).second) return false;
        facts.push_back(std::move(f));
        combo_of.push_back(combo);
        if (force) force_train.push_back(static_cast<int>(facts.size()) - 1);
        return true;
    };
    // duplicate-rejection loops stop here rather than spinning when the spec
    // asks for more distinct facts than the id space can hold
    const long long budget = 200LL * nf + 10000;
    long long tries = 0;
    auto spent = [&] { return ++tries > budget; };

    switch (spec.flavor) {
        case Flavor::Triple:
        case Flavor::NKG: {
            // seed facts cover every entity and relation inside train
            for (int i = 0; i < std::max(ne, nr); ++i) {
                Fact f;
                f.main.h = i % ne;
                f.main.r = i % nr;
                f.main.t = perm[i % ne];
                if (!push_unique(f, true)) {
                    f.main.t = perm[(i + 1) % ne];
                    push_unique(f, true);
                }
            }
            while (static_cast<int>(facts.size()) < nf && !spent()) {
                Fact f;
                f.main.h = static_cast<int>(rng.uniform(ne));
                f.main.r = static_cast<int>(rng.uniform(nr));
                f.main.t = static_cast<int>(rng.uniform(ne));
                push_unique(std::move(f), false);
            }
            break;
        }
        case Flavor::HKG:
        case Flavor::HTKG: {
            if (nr < 2)
                throw std::invalid_argument(
                    "generate_synthetic: hkg rule needs >= 2 relations");
            const int nv = std::min(5, ne);  // qualifier value set e0..e{nv-1}
            if (ruled) {
                // deterministic (head, value) combo pool, >= 2 facts per combo
                // with distinct main relations. Heads i % ne cover every
                // entity, and the j == 0 block puts every perm[h] tail in play;
                // the split below keeps one occurrence of each combo in train
                // so held-out combos are always seen during training.
                const int pool_target = std::max(1, nf / 2);
                if (pool_target < std::max(ne, nr - 1))
                    throw std::invalid_argument(
                        "generate_synthetic: hkg rule needs n_facts >= "
                        "2*max(n_entities, n_relations-1)");
                const long long full = static_cast<long long>(ne) * nv;
                const int pool_size =
                    static_cast<int>(std::min<long long>(pool_target, full));
                std::vector<std::pair<int, int>> combos(pool_size);
                for (int i = 0; i < pool_size; ++i)
                    combos[i] = {i % ne, (i / ne) % nv};
                const int per_combo = std::max(2, nf / pool_size);
                int ci = 0;
                for (const auto& [h, j] : combos) {
                    const int t = perm[(h + j) % ne];
                    for (int c = 0; c < per_combo &&
                                    static_cast<int>(facts.size()) < nf;
                         ++c) {
                        Fact f;
                        f.main.h = h;
                        f.main.r = c == 0 ? 1 + (ci % (nr - 1))
                                          : 1 + static_cast<int>(rng.uniform(nr - 1));
                        f.main.t = t;
                        f.quals.emplace_back(0, j);
                        if (spec.flavor == Flavor::HTKG)
                            note_time(f, (h + j) % 50, (h + j) % 50 + 1);
                        push_unique(std::move(f), false, ci);
                    }
                    ++ci;
                }
                // top up with extra relation variants of pool combos
                while (static_cast<int>(facts.size()) < nf && !spent()) {
                    const int k = static_cast<int>(rng.uniform(pool_size));
                    const auto& [h, j] = combos[static_cast<std::size_t>(k)];
                    Fact f;
                    f.main.h = h;
                    f.main.r = 1 + static_cast<int>(rng.uniform(nr - 1));
                    f.main.t = perm[(h + j) % ne];
                    f.quals.emplace_back(0, j);
                    if (spec.flavor == Flavor::HTKG)
                        note_time(f, (h + j) % 50, (h + j) % 50 + 1);
                    push_unique(std::move(f), false, k);
                }
            } else {
                for (int i = 0; i < std::max(ne, nr); ++i) {
                    Fact f;
                    f.main.h = i % ne;
                    f.main.r = i % nr;
                    f.main.t = perm[i % ne];
                    const int m = i % 3;
                    for (int q = 0; q < m; ++q)
                        f.quals.emplace_back(static_cast<int>(rng.uniform(nr)),
                                             static_cast<int>(rng.uniform(ne)));
                    if (spec.flavor == Flavor::HTKG && i % 2 == 0)
                        note_time(f, i % 30, i % 30 + static_cast<int>(rng.uniform(5)));
                    push_unique(std::move(f), true);
                }
                while (static_cast<int>(facts.size()) < nf && !spent()) {
                    Fact f;
                    f.main.h = static_cast<int>(rng.uniform(ne));
                    f.main.r = static_cast<int>(rng.uniform(nr));
                    f.main.t = static_cast<int>(rng.uniform(ne));
                    const int m = static_cast<int>(rng.uniform(4));
                    for (int q = 0; q < m; ++q)
                        f.quals.emplace_back(static_cast<int>(rng.uniform(nr)),
                                             static_cast<int>(rng.uniform(ne)));
                    if (spec.flavor == Flavor::HTKG && rng.uniform(2) == 0) {
                        const std::int64_t b = static_cast<std::int64_t>(rng.uniform(100));
                        note_time(f, b, b + static_cast<std::int64_t>(rng.uniform(10)));
                    }
                    push_unique(std::move(f), false);
                }
            }
            break;
        }
        case Flavor::TKG: {
            constexpr int kBuckets = 4;
            constexpr int kBucketWidth = 25;
            int i = 0;
            while (static_cast<int>(facts.size()) < nf && !spent()) {
                const bool seeding = i < std::max(ne, nr);
                Fact f;
                f.main.h = seeding ? i % ne : static_cast<int>(rng.uniform(ne));
                f.main.r = seeding ? i % nr : static_cast<int>(rng.uniform(nr));
                const int bucket = static_cast<int>(rng.uniform(kBuckets));
                const std::int64_t b =
                    bucket * kBucketWidth + static_cast<std::int64_t>(rng.uniform(kBucketWidth));
                note_time(f, b, b + static_cast<std::int64_t>(rng.uniform(5)));
                f.main.t = ruled ? perm[(f.main.h + f.main.r + bucket) % ne]
                                 : static_cast<int>(rng.uniform(ne));
                push_unique(std::move(f), seeding);
                ++i;
            }
            break;
        }
    }

    if (static_cast<int>(facts.size()) < nf)
        throw std::invalid_argument(
            "generate_synthetic: id space too small for n_facts distinct facts");

    // split 80/10/10: coverage seeds stay in train, and an eval fact must
    // leave at least one train occurrence of its rule combo and of its main
    // relation so the transductive contract survives the cut
    std::vector<int> order(facts.size());
    for (std::size_t i = 0; i < facts.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    std::vector<std::uint8_t> forced(facts.size(), 0);
    for (int i : force_train) forced[i] = 1;
    const int total = static_cast<int>(facts.size());
    const int n_valid = total / 10;
    const int n_test = total / 10;
    int n_combo = 0;
    for (int c : combo_of) n_combo = std::max(n_combo, c + 1);
    std::vector<int> combo_left(n_combo, 0);
    for (int c : combo_of)
        if (c >= 0) ++combo_left[c];
    std::vector<int> rel_left(nr, 0);
    for (const Fact& f : facts) ++rel_left[f.main.r];
    std::vector<std::uint8_t> split(facts.size(), 0);  // 0 train, 1 valid, 2 test
    const int quota = n_valid + n_test;
    int assigned = 0;
    for (int i : order) {
        if (assigned >= quota) break;
        if (forced[i]) continue;
        const int c = combo_of[i];
        if (c >= 0 && combo_left[c] < 2) continue;
        if (rel_left[facts[i].main.r] < 2) continue;
        if (c >= 0) --combo_left[c];
        --rel_left[facts[i].main.r];
        split[i] = static_cast<std::uint8_t>(assigned < n_valid ? 1 : 2);
        ++assigned;
    }
    if (assigned < quota)
        throw std::invalid_argument(
            "generate_synthetic: too few free facts for 80/10/10 split");
    for (std::size_t i = 0; i < facts.size(); ++i) {
        switch (split[i]) {
            case 0: ds.train.push_back(facts[i]); break;
            case 1: ds.valid.push_back(facts[i]); break;
            case 2: ds.test.push_back(facts[i]); break;
        }
    }

    if (spec.flavor == Flavor::NKG) {
        ds.nested_relations.add("imply");
        if (nr < 2)
            throw std::invalid_argument("generate_synthetic: nkg needs >= 2 relations");
        // rule pairs (h, r, t) -> (h, r+1, t) over even r; both members are
        // atomic train facts, so pairs touching a held-out atomic fact are
        // rejected rather than leaking it back into the train graph
        std::set<TripleRef> held_out;
        for (const auto* s : {&ds.valid, &ds.test})
            for (const Fact& f : *s) held_out.insert(f.main);
        std::set<std::pair<TripleRef, TripleRef>> seen_pairs;
        std::vector<NestedFact> nested;
        const int want = std::max(1, nf / 2);
        int guard = 0;
        while (static_cast<int>(nested.size()) < want && guard < 100 * want) {
            ++guard;
            const int h = static_cast<int>(rng.uniform(ne));
            const int t = static_cast<int>(rng.uniform(ne));
            const int r1 = 2 * static_cast<int>(rng.uniform(nr / 2));
            const int r2 = ruled ? r1 + 1 : static_cast<int>(rng.uniform(nr));
            NestedFact n;
            n.sub = {h, r1, t};
            n.rel = 0;
            n.obj = {h, r2, t};
            if (!seen_pairs.emplace(n.sub, n.obj).second) continue;
            if (held_out.count(n.sub) || held_out.count(n.obj)) continue;
            nested.push_back(n);
            for (const TripleRef& m : {n.sub, n.obj}) {
                Fact f;
                f.main = m;
                if (dedup.insert(f).second) ds.train.push_back(f);
            }
        }
        const int nn = static_cast<int>(nested.size());
        const int nv_n = nn / 10, nt_n = nn / 10;
        for (int i = 0; i < nn; ++i) {
            if (i < nn - nv_n - nt_n)
                ds.nested_train.push_back(nested[i]);
            else if (i < nn - nt_n)
                ds.nested_valid.push_back(nested[i]);
            else
                ds.nested_test.push_back(nested[i]);
        }
    }

    // first-appearance timestamp vocabulary, as a parse would build it
    {
        std::unordered_set<std::int64_t> seen;
        for (const auto* split_facts : {&ds.train, &ds.valid, &ds.test})
            for (const Fact& f : *split_facts)
                if (f.has_time) {
                    if (seen.insert(f.begin).second) ds.timestamps.push_back(f.begin);
                    if (seen.insert(f.end).second) ds.timestamps.push_back(f.end);
                }
    }
    canonicalize_vocab_order(ds);
    return ds;
}

}  // namespace unihr
