#pragma once

#include <cstdint>
#include <string>

#include "efd/optim.hpp"
#include "efd/params.hpp"

namespace efd {

// Binary checkpoint: magic, json header (config hash, epoch/step counters,
// rng state, entry table), then 32-bit little-endian float payloads — the
// parameters in creation order, followed by the Adam moment buffers when
// present. load(save(W)) == W bit-exactly.
struct CheckpointMeta {
    std::string config_hash;
    std::string config_json;  // full config, so a checkpoint is self-describing
    int epoch = 0;
    std::int64_t step = 0;
    std::int64_t adam_step = 0;
    bool has_adam = false;
    std::uint64_t rng_state = 0;
    std::uint64_t rng_inc = 0;
};

void save_checkpoint(const std::string& path, const ParamStore<float>& store,
                     const AdamState<float>* adam, const CheckpointMeta& meta);

// Store must already hold identically named/shaped entries (built from the
// same config); values are overwritten in place.
CheckpointMeta load_checkpoint(const std::string& path, ParamStore<float>& store,
                               AdamState<float>* adam);

// Header-only peek (config hash validation without instantiating a model).
CheckpointMeta read_checkpoint_meta(const std::string& path);

}  // namespace efd
