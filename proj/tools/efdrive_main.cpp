// efdrive: dataset generation, training, closed-loop evaluation, cost
// analysis, attention dumps, and gradient checks for the fused two-view
// driving stack. Exit codes: 0 ok, 2 config error, 3 runtime error,
// 4 gradient-check failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "efd/checkpoint.hpp"
#include "efd/cost_model.hpp"
#include "efd/gradcheck.hpp"
#include "efd/manifest.hpp"
#include "efd/model.hpp"
#include "efd/sim/dataset.hpp"
#include "efd/sim/eval.hpp"
#include "efd/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace efd;

namespace {

int verbosity() {
    const char* v = std::getenv("EFDRIVE_VERBOSE");
    return v ? std::atoi(v) : 0;
}

std::string join_argv(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += " ";
        s += argv[i];
    }
    return s;
}

int cmd_gen_data(const std::string& config_path, const std::string& routes_path,
                 const std::string& out, std::uint64_t seed, const std::string& cmdline) {
    Config cfg = parse_config_file(config_path);
    auto routes = load_routes(routes_path);
    const std::size_t n = collect_dataset(routes, cfg, out, seed, cmdline);
    std::printf("collected %zu samples from %zu routes into %s\n", n, routes.size(), out.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out,
              const std::string& resume, const std::string& cmdline) {
    Config cfg = parse_config_file(config_path);
    DatasetReader reader(data_dir);
    if (reader.config_hash() != config_hash(cfg) && verbosity() > 0)
        std::fprintf(stderr, "note: dataset was collected under a different config hash\n");
    auto data = load_training_set(reader, cfg.model);
    TrainResult r = train(cfg, data, out, resume, cmdline);
    std::printf("trained %lld steps; checkpoint: %s\n", static_cast<long long>(r.steps),
                r.checkpoint.c_str());
    if (!r.history.empty()) {
        const StepLog& l = r.history.back();
        std::printf("final losses: L_s %.4f L_f %.4f L_w %.4f L_c %.4f L_est %.4f total %.4f\n",
                    l.L_s, l.L_f, l.L_w, l.L_c, l.L_est, l.total);
    }
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& routes_path, const std::string& report_dir,
             const std::string& policy_kind, std::uint64_t seed, const std::string& cmdline) {
    Config cfg;
    std::string hash = "n/a";
    std::unique_ptr<Policy> policy;
    if (policy_kind == "model") {
        CheckpointMeta meta = read_checkpoint_meta(ckpt);
        if (meta.config_json.empty())
            throw IoError("eval: checkpoint has no embedded config: " + ckpt);
        cfg = parse_config_text(meta.config_json);
        hash = meta.config_hash;
        policy = make_model_policy(cfg, ckpt);
    } else if (policy_kind == "expert") {
        policy = make_expert_policy(cfg.sim);
    } else if (policy_kind == "zero") {
        policy = make_zero_policy();
    } else if (policy_kind == "random") {
        policy = make_random_policy(seed);
    } else {
        throw ConfigError("eval: unknown policy '" + policy_kind + "'");
    }
    auto routes = load_routes(routes_path);
    EvalReport rep = evaluate(*policy, routes, cfg.sim);
    fs::create_directories(report_dir);
    {
        std::ofstream j(fs::path(report_dir) / "report.json");
        j << report_to_json(rep, policy->name()) << "\n";
        std::ofstream t(fs::path(report_dir) / "report.txt");
        t << report_to_text(rep, policy->name());
    }
    write_run_manifest(report_dir, cmdline, hash, seed,
                       {report_dir + "/report.json", report_dir + "/report.txt"});
    std::fputs(report_to_text(rep, policy->name()).c_str(), stdout);
    return 0;
}

int cmd_analyze(const std::string& config_path, bool as_json, const std::string& out,
                const std::string& cmdline) {
    Config cfg = parse_config_file(config_path);
    CostReport rep = count_params_and_macs(cfg.model);
    if (as_json)
        std::printf("%s\n", cost_report_json(rep).c_str());
    else
        std::fputs(cost_report_text(rep).c_str(), stdout);
    if (!out.empty()) {
        fs::create_directories(out);
        std::ofstream j(fs::path(out) / "cost.json");
        j << cost_report_json(rep) << "\n";
        std::ofstream t(fs::path(out) / "cost.txt");
        t << cost_report_text(rep);
        write_run_manifest(out, cmdline, config_hash(cfg), 0, {out + "/cost.json", out + "/cost.txt"});
    }
    return 0;
}

int cmd_attn(const std::string& ckpt, const std::string& data_dir, int sample,
             const std::string& out, const std::string& cmdline) {
    CheckpointMeta meta = read_checkpoint_meta(ckpt);
    if (meta.config_json.empty()) throw IoError("attn: checkpoint has no embedded config");
    Config cfg = parse_config_text(meta.config_json);
    ParamStore<float> store;
    Rng init = Rng::substream(cfg.train.seed, "init");
    DrivingModel<float> model(cfg.model, store, init);
    load_checkpoint(ckpt, store, nullptr);

    DatasetReader reader(data_dir);
    if (sample < 0 || static_cast<std::size_t>(sample) >= reader.size())
        throw IoError("attn: sample index out of range (dataset has " +
                      std::to_string(reader.size()) + ")");
    DatasetSample s = reader.read(static_cast<std::size_t>(sample));
    auto inputs = DrivingModel<float>::make_inputs(s.obs, cfg.model);
    Tape<float> tp;
    auto fwd = model.forward(tp, inputs);

    json j;
    j["sample"] = sample;
    j["depth"] = fwd.attn.depth;
    j["heads"] = fwd.attn.heads;
    j["tokens"] = fwd.attn.tokens;
    j["layout"] = {{"n_pred", fwd.layout.n_pred},
                   {"n_meas", fwd.layout.n_meas},
                   {"n_side", fwd.layout.n_side},
                   {"n_main", fwd.layout.n_main},
                   {"boundaries", fwd.layout.boundaries()}};
    json layers = json::array();
    for (int l = 0; l < fwd.attn.depth; ++l)
        for (int h = 0; h < fwd.attn.heads; ++h) {
            auto v = tp.value(fwd.attn.at(l, h));
            json rec;
            rec["layer"] = l;
            rec["head"] = h;
            rec["attn"] = std::vector<double>(v.begin(), v.end());  // row-major T x T
            layers.push_back(std::move(rec));
        }
    j["maps"] = layers;

    fs::create_directories(out);
    {
        std::ofstream f(fs::path(out) / "attn.json");
        f << j.dump() << "\n";
    }
    write_run_manifest(out, cmdline, meta.config_hash, cfg.train.seed, {out + "/attn.json"});
    std::printf("attention dump: depth %d heads %d tokens %d -> %s/attn.json\n", fwd.attn.depth,
                fwd.attn.heads, fwd.attn.tokens, out.c_str());
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& scope) {
    bool ok = true;
    std::printf("gradcheck scope=%s seed=%llu tol=%g h=%g (f64 central differences)\n",
                scope.c_str(), static_cast<unsigned long long>(seed), kGcTol, kGcStep);
    if (scope == "primitive") {
        for (const auto& r : gradcheck_primitives(seed)) {
            std::printf("%-24s worst rel err %.3e over %d checks  %s\n", r.name.c_str(),
                        r.worst_rel, r.checked, r.pass ? "ok" : "FAIL");
            ok = ok && r.pass;
        }
    } else if (scope == "block") {
        for (const auto& r : gradcheck_blocks(seed)) {
            std::printf("%-24s worst rel err %.3e over %d checks  %s\n", r.name.c_str(),
                        r.worst_rel, r.checked, r.pass ? "ok" : "FAIL");
            ok = ok && r.pass;
        }
    } else if (scope == "model") {
        TrainConfig tc;
        ModelGcReport rep = model_gradcheck(tiny_model_config(), tc, seed);
        std::printf("model: %lld parameter scalars checked in %.1fs\n",
                    static_cast<long long>(rep.n_scalars), rep.seconds);
        std::printf("worst rel err %.3e at %s  %s\n", rep.worst_rel, rep.worst_param.c_str(),
                    rep.pass ? "ok" : "FAIL");
        ok = rep.pass;
    } else {
        throw ConfigError("gradcheck: unknown scope '" + scope + "'");
    }
    if (!ok) {
        std::fprintf(stderr, "error class=gradcheck: reverse-mode/finite-difference mismatch\n");
        return 4;
    }
    std::printf("gradcheck: all checks passed\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"efdrive: two-view cross-attention driving stack with a built-in 2D simulator"};
    app.require_subcommand(1);
    const std::string cmdline = join_argv(argc, argv);

    std::string config_path, routes_path, out_dir, data_dir, ckpt, resume, report_dir;
    std::string policy_kind = "model", scope = "primitive";
    std::uint64_t seed = 0;
    int sample = 0;
    bool as_json = false;

    auto* gen = app.add_subcommand("gen-data", "collect an expert dataset");
    gen->add_option("--config", config_path)->required();
    gen->add_option("--routes", routes_path)->required();
    gen->add_option("--out", out_dir)->required();
    gen->add_option("--seed", seed);

    auto* tr = app.add_subcommand("train", "imitation training");
    tr->add_option("--config", config_path)->required();
    tr->add_option("--data", data_dir)->required();
    tr->add_option("--out", out_dir)->required();
    tr->add_option("--resume", resume);

    auto* ev = app.add_subcommand("eval", "closed-loop evaluation");
    ev->add_option("--ckpt", ckpt);
    ev->add_option("--routes", routes_path)->required();
    ev->add_option("--report", report_dir)->required();
    ev->add_option("--policy", policy_kind)
        ->check(CLI::IsMember({"model", "expert", "zero", "random"}));
    ev->add_option("--seed", seed);

    auto* an = app.add_subcommand("analyze", "parameter / MAC cost report");
    an->add_option("--config", config_path)->required();
    an->add_flag("--json", as_json);
    an->add_option("--out", out_dir);

    auto* at = app.add_subcommand("attn", "decoder attention dump");
    at->add_option("--ckpt", ckpt)->required();
    at->add_option("--data", data_dir)->required();
    at->add_option("--sample", sample);
    at->add_option("--out", out_dir)->required();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gc->add_option("--seed", seed);
    gc->add_option("--scope", scope)->check(CLI::IsMember({"primitive", "block", "model"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::fprintf(stderr, "error class=config: %s\n", e.what());
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, routes_path, out_dir, seed, cmdline);
        if (tr->parsed()) return cmd_train(config_path, data_dir, out_dir, resume, cmdline);
        if (ev->parsed()) {
            if (policy_kind == "model" && ckpt.empty())
                throw ConfigError("eval: --ckpt is required with --policy model");
            return cmd_eval(ckpt, routes_path, report_dir, policy_kind, seed, cmdline);
        }
        if (an->parsed()) return cmd_analyze(config_path, as_json, out_dir, cmdline);
        if (at->parsed()) return cmd_attn(ckpt, data_dir, sample, out_dir, cmdline);
        if (gc->parsed()) return cmd_gradcheck(seed, scope);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error class=config: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error class=%s: %s\n", e.kind().c_str(), e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error class=runtime: %s\n", e.what());
        return 3;
    }
    return 0;
}
