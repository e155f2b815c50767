// Command-line surface: transform / stats / gen / train / eval / merge.
// Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "unihr/train.hpp"

namespace fs = std::filesystem;
using namespace unihr;

namespace {

// Dataset directories carry a small meta.json so downstream commands can
// recover the flavor and (for merged data) the per-source test origins, which
// the split files themselves cannot express.
void write_meta(const std::string& dir, const SourceDataset& ds,
                const nlohmann::ordered_json* extra = nullptr) {
    nlohmann::ordered_json j;
    j["flavor"] = flavor_name(ds.flavor);
    if (!ds.test_origin.empty()) j["test_origin"] = ds.test_origin;
    if (extra) j["spec"] = *extra;
    std::ofstream os(fs::path(dir) / "meta.json");
    os << j.dump(2) << "\n";
}

std::optional<nlohmann::json> read_meta(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "meta.json");
    if (!is) return std::nullopt;
    nlohmann::json j;
    is >> j;
    return j;
}

Flavor resolve_flavor(const std::string& dir, const std::string& arg) {
    if (!arg.empty()) return parse_flavor(arg);
    if (const auto meta = read_meta(dir))
        if (meta->contains("flavor"))
            return parse_flavor(meta->at("flavor").get<std::string>());
    throw CLI::ValidationError("flavor", "no flavor given and no meta.json in " + dir);
}

SourceDataset load_dataset_dir(const std::string& dir, Flavor fl) {
    SourceDataset ds = parse_dataset(dir, fl);
    if (const auto meta = read_meta(dir)) {
        if (meta->contains("test_origin")) {
            ds.test_origin = meta->at("test_origin").get<std::vector<int>>();
            if (ds.test_origin.size() != ds.test.size())
                throw std::runtime_error("meta.json test_origin does not match the test split");
        }
    }
    return ds;
}

int cmd_transform(const std::string& in, const std::string& flavor_s,
                  const std::string& out) {
    const SourceDataset ds = parse_dataset(in, parse_flavor(flavor_s));
    const HidrGraph g = lift(ds);
    const std::vector<std::string> problems = validate(g);
    fs::create_directories(out);
    {
        std::ofstream os(fs::path(out) / "hidr.tsv");
        export_hidr_tsv(g, os);
    }
    {
        std::ofstream os(fs::path(out) / "validation.txt");
        for (const std::string& p : problems) os << p << "\n";
    }
    std::cout << "nodes " << g.node_count() << " triples " << g.triple_count()
              << " violations " << problems.size() << "\n";
    if (!problems.empty()) {
        for (const std::string& p : problems) std::cerr << p << "\n";
        return 1;
    }
    return 0;
}

int cmd_stats(const std::string& in, const std::string& flavor_s) {
    const SourceDataset ds = parse_dataset(in, resolve_flavor(in, flavor_s));
    std::cout << dataset_stats(ds).to_json().dump(2) << "\n";
    return 0;
}

int cmd_gen(const std::string& spec_path, const std::string& out) {
    std::ifstream is(spec_path);
    if (!is) throw std::runtime_error("cannot read " + spec_path);
    nlohmann::json j;
    is >> j;
    const SyntheticSpec sp = SyntheticSpec::from_json(j);
    const SourceDataset ds = generate_synthetic(sp);
    write_dataset(ds, out);
    const nlohmann::ordered_json spec_j = sp.to_json();
    write_meta(out, ds, &spec_j);
    std::cout << "wrote " << out << ": " << ds.train.size() << " train / "
              << ds.valid.size() << " valid / " << ds.test.size() << " test\n";
    return 0;
}

int cmd_merge(const std::string& a_dir, const std::string& b_dir,
              const std::string& out, const std::string& fa, const std::string& fb) {
    const SourceDataset a = parse_dataset(a_dir, resolve_flavor(a_dir, fa));
    const SourceDataset b = parse_dataset(b_dir, resolve_flavor(b_dir, fb));
    const auto [merged, report] = merge_hybrid(a, b);
    write_dataset(merged, out);
    write_meta(out, merged);
    nlohmann::ordered_json j;
    j["flavor"] = flavor_name(merged.flavor);
    j["shared_entities"] = report.shared_entities;
    j["shared_relations"] = report.shared_relations;
    j["removed_from_a"] = report.removed_from_a;
    j["removed_from_b"] = report.removed_from_b;
    std::cout << j.dump(2) << "\n";
    return 0;
}

struct RunFlags {
    std::string filter, joint, decoder, ablate, out;
    std::optional<std::uint64_t> seed;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--filter", filter, "strict|loose");
        cmd->add_option("--joint", joint, "none|multitask|hybrid");
        cmd->add_option("--decoder", decoder, "transformer|conve-sh|conve-sf");
        cmd->add_option("--ablate", ablate, "intra|inter|factinit|gate|direction");
        cmd->add_option("--seed", seed, "RNG seed override");
        cmd->add_option("--out", out, "output directory override");
    }

    void apply(RunConfig& rc) const {
        if (!filter.empty()) rc.train.filter = filter;
        if (!joint.empty()) rc.train.joint_mode = joint;
        if (!decoder.empty()) rc.decoder.kind = decoder;
        if (!ablate.empty()) rc.ablate = ablate;
        if (seed) rc.train.seed = *seed;
        if (!out.empty()) rc.out = out;
        rc.validate();
    }
};

void write_report(const RankingReport& rep, const fs::path& dir,
                  const std::string& stem) {
    {
        std::ofstream os(dir / (stem + ".json"));
        os << rep.to_json().dump(2) << "\n";
    }
    {
        std::ofstream os(dir / (stem + "_ranks.txt"));
        os << rep.dump_ranks();
    }
}

int cmd_train(const std::string& cfg_path, const RunFlags& flags,
              const std::string& init_ckpt) {
    RunConfig rc = load_run_config(cfg_path);
    flags.apply(rc);
    const SourceDataset ds = load_dataset_dir(rc.dataset, rc.flavor);
    Model m = build_model(ds, rc);
    if (!init_ckpt.empty()) load_checkpoint(init_ckpt, m.params);

    fs::create_directories(rc.out);
    save_run_config(rc, (fs::path(rc.out) / "config_snapshot.json").string());
    std::ofstream losslog(fs::path(rc.out) / "loss.log");
    losslog << "epoch\tloss\tvalid_mrr\n";
    const EpochHook progress = [&](int ep, double loss, double mrr) {
        losslog << ep << "\t" << loss << "\t" << mrr << "\n" << std::flush;
        std::cout << "epoch " << ep << "  loss " << loss << "  valid_mrr " << mrr
                  << std::endl;
    };

    const TaskSpec task = task_from_config(rc);
    const TrainStats st = rc.train.task == "triple-pred"
                              ? fit_triple_prediction(m, ds, rc.train, progress)
                              : fit(m, ds, task, rc.train, progress);

    save_checkpoint((fs::path(rc.out) / "checkpoint.bin").string(), m.params,
                    checkpoint_metadata(rc, m));
    std::cout << "trained " << st.epochs_run << " epochs, best epoch "
              << st.best_epoch << ", best valid MRR " << st.best_mrr << "\n";
    return 0;
}

int cmd_eval(const std::string& cfg_path, const std::string& ckpt,
             const RunFlags& flags) {
    RunConfig rc = load_run_config(cfg_path);
    flags.apply(rc);
    const SourceDataset ds = load_dataset_dir(rc.dataset, rc.flavor);
    Model m = build_model(ds, rc);
    load_checkpoint(ckpt, m.params);

    const TaskSpec task = task_from_config(rc);
    const bool strictf = rc.train.filter == "strict";
    fs::create_directories(rc.out);

    const RankingReport rep =
        evaluate(m.binding, m.params, m.enc, m.dec, ds, task, strictf, m.ablate,
                 256, nullptr, eval_edges(m));
    write_report(rep, rc.out, "metrics");
    std::cout << rep.to_json().dump(2) << "\n";

    if (rc.train.joint_mode == "hybrid" && !ds.test_origin.empty()) {
        const std::vector<std::vector<int>> groups = tests_by_origin(ds);
        for (std::size_t i = 0; i < groups.size(); ++i) {
            const RankingReport sub =
                evaluate(m.binding, m.params, m.enc, m.dec, ds, task, strictf,
                         m.ablate, 256, &groups[i], eval_edges(m));
            write_report(sub, rc.out, "metrics_source" + std::to_string(i));
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unified hierarchical KG representation pipeline"};
    app.require_subcommand(1);
    int rc_exit = 0;

    std::string t_in, t_flavor, t_out;
    CLI::App* t = app.add_subcommand("transform", "lift a dataset to HiDR form");
    t->add_option("in", t_in, "dataset directory")->required();
    t->add_option("flavor", t_flavor, "triple|hkg|tkg|htkg|nkg")->required();
    t->add_option("out", t_out, "output directory")->required();
    t->callback([&] { rc_exit = cmd_transform(t_in, t_flavor, t_out); });

    std::string s_in, s_flavor;
    CLI::App* s = app.add_subcommand("stats", "dataset statistics as JSON");
    s->add_option("in", s_in, "dataset directory")->required();
    s->add_option("flavor", s_flavor, "triple|hkg|tkg|htkg|nkg");
    s->callback([&] { rc_exit = cmd_stats(s_in, s_flavor); });

    std::string g_spec, g_out;
    CLI::App* g = app.add_subcommand("gen", "generate a synthetic dataset");
    g->add_option("spec", g_spec, "generator spec JSON")->required();
    g->add_option("out", g_out, "output directory")->required();
    g->callback([&] { rc_exit = cmd_gen(g_spec, g_out); });

    std::string m_a, m_b, m_out, m_fa, m_fb;
    CLI::App* mg = app.add_subcommand("merge", "merge two datasets for hybrid runs");
    mg->add_option("a", m_a, "first dataset directory")->required();
    mg->add_option("b", m_b, "second dataset directory")->required();
    mg->add_option("out", m_out, "output directory")->required();
    mg->add_option("--flavor-a", m_fa, "flavor of a (default: its meta.json)");
    mg->add_option("--flavor-b", m_fb, "flavor of b (default: its meta.json)");
    mg->callback([&] { rc_exit = cmd_merge(m_a, m_b, m_out, m_fa, m_fb); });

    std::string tr_cfg, tr_init;
    RunFlags tr_flags;
    CLI::App* tr = app.add_subcommand("train", "train a model from a run config");
    tr->add_option("config", tr_cfg, "run config JSON")->required();
    tr->add_option("--init", tr_init, "warm-start checkpoint");
    tr_flags.add_to(tr);
    tr->callback([&] { rc_exit = cmd_train(tr_cfg, tr_flags, tr_init); });

    std::string ev_cfg, ev_ckpt;
    RunFlags ev_flags;
    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("config", ev_cfg, "run config JSON")->required();
    ev->add_option("checkpoint", ev_ckpt, "checkpoint file")->required();
    ev_flags.add_to(ev);
    ev->callback([&] { rc_exit = cmd_eval(ev_cfg, ev_ckpt, ev_flags); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return rc_exit;
}
