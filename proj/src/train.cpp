#include "efd/train.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "efd/checkpoint.hpp"
#include "efd/cost_model.hpp"
#include "efd/manifest.hpp"
#include "efd/sim/eval.hpp"
#include "json.hpp"

namespace efd {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<TrainSample> load_training_set(const DatasetReader& reader, const ModelConfig& cfg) {
    std::vector<TrainSample> out;
    out.reserve(reader.size());
    for (std::size_t i = 0; i < reader.size(); ++i) {
        DatasetSample s = reader.read(i);
        TrainSample t;
        t.inputs = DrivingModel<float>::make_inputs(s.obs, cfg);
        t.label = s.label;
        out.push_back(std::move(t));
    }
    return out;
}

namespace {

std::string log_line(const StepLog& l) {
    json j;
    j["step"] = l.step;
    j["epoch"] = l.epoch;
    j["lr"] = l.lr;
    j["L_s"] = l.L_s;
    j["L_f"] = l.L_f;
    j["L_w"] = l.L_w;
    j["L_c"] = l.L_c;
    j["L_est"] = l.L_est;
    j["total"] = l.total;
    return j.dump();
}

}  // namespace

TrainResult train(const Config& cfg, const std::vector<TrainSample>& data,
                  const std::string& out_dir, const std::string& resume_path,
                  const std::string& command_line) {
    if (data.empty()) throw IoError("train: empty dataset");
    fs::create_directories(out_dir);

    ParamStore<float> store;
    Rng init_rng = Rng::substream(cfg.train.seed, "init");
    DrivingModel<float> model(cfg.model, store, init_rng);
    auto params = store.tensors();

    AdamState<float> adam;
    adam.weight_decay = cfg.train.weight_decay;
    adam.reset(params);

    Rng data_rng = Rng::substream(cfg.train.seed, "data");
    int start_epoch = 0;
    std::int64_t global_step = 0;
    if (!resume_path.empty()) {
        CheckpointMeta meta = load_checkpoint(resume_path, store, &adam);
        if (meta.config_hash != config_hash(cfg))
            throw ConfigError("train: resume checkpoint was built from a different config");
        start_epoch = meta.epoch;
        global_step = meta.step;
        data_rng.restore(meta.rng_state, meta.rng_inc);
    }

    const std::string log_path = (fs::path(out_dir) / "loss_log.jsonl").string();
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw IoError("train: cannot write " + log_path);

    TrainResult result;
    result.loss_log = log_path;

    const int B = cfg.train.batch_size;
    std::vector<std::size_t> order(data.size());

    auto save = [&](int epoch, const std::string& name) {
        CheckpointMeta meta;
        meta.config_hash = config_hash(cfg);
        meta.config_json = config_to_json(cfg);
        meta.epoch = epoch;
        meta.step = global_step;
        meta.rng_state = data_rng.state();
        meta.rng_inc = data_rng.inc();
        const std::string path = (fs::path(out_dir) / name).string();
        save_checkpoint(path, store, &adam, meta);
        return path;
    };

    for (int epoch = start_epoch; epoch < cfg.train.epochs; ++epoch) {
        data_rng.shuffle(order);
        const double lr = lr_at(epoch, cfg.train.schedule);
        for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(B)) {
            const std::size_t n = std::min<std::size_t>(B, order.size() - off);
            store.zero_grads();
            StepLog sl;
            for (std::size_t bi = 0; bi < n; ++bi) {
                const TrainSample& s = data[order[off + bi]];
                Tape<float> tp;
                auto fwd = model.forward(tp, s.inputs);
                auto labels = model.label_leaves(tp, s.label);
                auto bundle = compute_losses(tp, fwd.waypoints, fwd.control, fwd.speed,
                                             fwd.feature, fwd.est, labels, cfg.train);
                const double total = bundle.sum(tp);
                if (!std::isfinite(total)) {
                    std::string where = "unknown";
                    if (auto bad = tp.first_nonfinite())
                        where = std::string(bad->op) + " node " + std::to_string(bad->id) + " " +
                                bad->shape.str();
                    throw NumericError("train: non-finite loss at step " +
                                       std::to_string(global_step) + "; first bad tensor: " +
                                       where);
                }
                Val scaled = tp.scale(bundle.total, 1.0f / static_cast<float>(n));
                tp.backward(scaled);
                sl.L_s += bundle.s(tp);
                sl.L_f += bundle.f(tp);
                sl.L_w += bundle.w(tp);
                sl.L_c += bundle.c(tp);
                sl.L_est += bundle.est(tp);
                sl.total += total;
            }
            adam_step(params, adam, lr);
            global_step += 1;
            const double inv = 1.0 / static_cast<double>(n);
            sl.step = global_step;
            sl.epoch = epoch;
            sl.lr = lr;
            sl.L_s *= inv;
            sl.L_f *= inv;
            sl.L_w *= inv;
            sl.L_c *= inv;
            sl.L_est *= inv;
            sl.total *= inv;
            if (global_step % cfg.train.log_every == 0) log << log_line(sl) << "\n";
            result.history.push_back(sl);
        }
        if ((epoch + 1) % cfg.train.checkpoint_every == 0 || epoch + 1 == cfg.train.epochs) {
            char name[64];
            std::snprintf(name, sizeof(name), "ckpt_epoch_%04d.bin", epoch + 1);
            save(epoch + 1, name);
            result.checkpoint = save(epoch + 1, "latest.bin");
        }
    }
    log.close();
    result.steps = global_step;
    if (result.checkpoint.empty()) result.checkpoint = save(cfg.train.epochs, "latest.bin");
    write_run_manifest(out_dir, command_line, config_hash(cfg), cfg.train.seed,
                       {result.checkpoint, log_path});
    return result;
}

std::vector<AblationRow> ablation_matrix(const Config& base, const std::vector<std::string>& axes,
                                         const std::vector<TrainSample>& data,
                                         const std::vector<Route>& eval_routes,
                                         const std::string& workdir) {
    struct Variant {
        std::string axis, label;
        Config cfg;
    };
    std::vector<Variant> variants;
    for (const std::string& axis : axes) {
        if (axis == "depth") {
            for (int d : {1, 4, 8, 12}) {
                Config c = base;
                c.model.decoder_depth = d;
                variants.push_back({axis, std::to_string(d), c});
            }
        } else if (axis == "learnable_vector") {
            for (bool on : {true, false}) {
                Config c = base;
                c.model.readout = on ? ReadoutMode::LearnableVector : ReadoutMode::MeanPool;
                variants.push_back({axis, on ? "yes" : "no", c});
            }
        } else if (axis == "fusion") {
            for (bool on : {true, false}) {
                Config c = base;
                c.model.fusion = on;
                variants.push_back({axis, on ? "yes" : "no", c});
            }
        } else if (axis == "control") {
            for (bool dynamic : {false, true}) {
                Config c = base;
                c.model.mix_mode = dynamic ? MixMode::Dynamic : MixMode::StaticTcp;
                variants.push_back({axis, dynamic ? "dynamic" : "static_tcp", c});
            }
        } else {
            throw ConfigError("ablation: unknown axis '" + axis + "'");
        }
    }

    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        const std::string dir = (fs::path(workdir) / (v.axis + "_" + v.label)).string();
        // Variants whose flags touch the architecture need re-converted
        // inputs only if the patch geometry changed; these axes never do.
        TrainResult tr = train(v.cfg, data, dir, "", "ablation " + v.axis + "=" + v.label);
        auto policy = make_model_policy(v.cfg, tr.checkpoint);
        EvalReport rep = evaluate(*policy, eval_routes, v.cfg.sim);
        AblationRow row;
        row.axis = v.axis;
        row.variant = v.label;
        row.ds = rep.mean_ds;
        row.rc = rep.mean_rc;
        row.params = count_params_and_macs(v.cfg.model).total_params;
        row.checkpoint = tr.checkpoint;
        rows.push_back(row);
    }

    std::ofstream table(fs::path(workdir) / "ablation.json");
    json j = json::array();
    for (const auto& r : rows)
        j.push_back({{"axis", r.axis},
                     {"variant", r.variant},
                     {"ds", r.ds},
                     {"rc", r.rc},
                     {"params", r.params}});
    table << j.dump(2) << "\n";
    std::ofstream text(fs::path(workdir) / "ablation.txt");
    text << ablation_table_text(rows);
    return rows;
}

std::string ablation_table_text(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-18s %-12s %10s %8s %8s\n", "axis", "variant", "params",
                  "DS", "RC");
    os << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-18s %-12s %10lld %8.2f %8.2f\n", r.axis.c_str(),
                      r.variant.c_str(), static_cast<long long>(r.params), r.ds, r.rc);
        os << buf;
    }
    return os.str();
}

}  // namespace efd
