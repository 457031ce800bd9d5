#pragma once

#include <string>
#include <vector>

#include "efd/config.hpp"
#include "efd/model.hpp"
#include "efd/sim/dataset.hpp"

namespace efd {

struct TrainSample {
    DrivingModel<float>::Inputs inputs;
    ExpertLabel label;
};

// Pre-converted, in-memory training set (patch matrices instead of rasters).
std::vector<TrainSample> load_training_set(const DatasetReader& reader, const ModelConfig& cfg);

struct StepLog {
    std::int64_t step = 0;
    int epoch = 0;
    double lr = 0;
    double L_s = 0, L_f = 0, L_w = 0, L_c = 0, L_est = 0, total = 0;
};

struct TrainResult {
    std::string checkpoint;  // final checkpoint path
    std::string loss_log;    // jsonl path
    std::vector<StepLog> history;
    std::int64_t steps = 0;
};

// Imitation loop: shuffled minibatches, forward/backward per sample with
// serialized gradient accumulation, Adam with the stepwise-halved schedule,
// checkpoints at the configured cadence. Deterministic given the seed.
// A non-finite loss aborts naming the first bad tensor on the tape.
TrainResult train(const Config& cfg, const std::vector<TrainSample>& data,
                  const std::string& out_dir, const std::string& resume_path,
                  const std::string& command_line);

struct AblationRow {
    std::string axis;
    std::string variant;
    double ds = 0, rc = 0;
    std::int64_t params = 0;
    std::string checkpoint;
};

// Train and evaluate one variant per value of each requested axis
// (depth / learnable_vector / fusion / control), sharing seed and data.
std::vector<AblationRow> ablation_matrix(const Config& base, const std::vector<std::string>& axes,
                                         const std::vector<TrainSample>& data,
                                         const std::vector<Route>& eval_routes,
                                         const std::string& workdir);

std::string ablation_table_text(const std::vector<AblationRow>& rows);

}  // namespace efd
