#include "efd/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <vector>

#include "json.hpp"

namespace efd {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'E', 'F', 'D', 'C', 'K', 'P', 'T', '1'};

struct FileCloser {
    std::FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

void write_block(std::FILE* f, const void* p, size_t n, const char* what) {
    if (std::fwrite(p, 1, n, f) != n) throw IoError(std::string("checkpoint: write failed: ") + what);
}

void read_block(std::FILE* f, void* p, size_t n, const char* what) {
    if (std::fread(p, 1, n, f) != n) throw IoError(std::string("checkpoint: short read: ") + what);
}

json header_json(const ParamStore<float>& store, bool has_adam, const CheckpointMeta& meta) {
    json h;
    h["version"] = 1;
    h["config_hash"] = meta.config_hash;
    h["config_json"] = meta.config_json;
    h["epoch"] = meta.epoch;
    h["step"] = meta.step;
    h["adam_step"] = meta.adam_step;
    h["has_adam"] = has_adam;
    h["rng"] = {meta.rng_state, meta.rng_inc};
    json entries = json::array();
    for (size_t i = 0; i < store.count(); ++i) {
        const auto& t = store.tensor_of(i);
        entries.push_back({{"name", store.name_of(i)}, {"shape", t.shape.dims}});
    }
    h["entries"] = entries;
    return h;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore<float>& store,
                     const AdamState<float>* adam, const CheckpointMeta& meta_in) {
    CheckpointMeta meta = meta_in;
    meta.has_adam = adam != nullptr;
    if (adam) meta.adam_step = adam->step;
    fs::create_directories(fs::path(path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(path).parent_path());
    // Write-temp-then-rename keeps interrupted saves from clobbering a
    // previous good checkpoint.
    const std::string tmp = path + ".tmp";
    {
        std::FILE* f = std::fopen(tmp.c_str(), "wb");
        if (!f) throw IoError("checkpoint: cannot open " + tmp);
        FileCloser closer{f};
        const std::string h = header_json(store, meta.has_adam, meta).dump();
        const std::uint32_t hlen = static_cast<std::uint32_t>(h.size());
        write_block(f, kMagic, sizeof(kMagic), "magic");
        write_block(f, &hlen, sizeof(hlen), "header length");
        write_block(f, h.data(), h.size(), "header");
        for (size_t i = 0; i < store.count(); ++i) {
            const auto& t = store.tensor_of(i);
            write_block(f, t.data.data(), t.data.size() * sizeof(float), "params");
        }
        if (adam) {
            if (adam->m.size() != store.count())
                throw ShapeError("checkpoint: adam state does not match parameter count");
            for (const auto& m : adam->m) write_block(f, m.data(), m.size() * sizeof(float), "adam.m");
            for (const auto& v : adam->v) write_block(f, v.data(), v.size() * sizeof(float), "adam.v");
        }
    }
    fs::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("checkpoint: cannot open " + path);
    FileCloser closer{f};
    char magic[8];
    read_block(f, magic, sizeof(magic), "magic");
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    std::uint32_t hlen = 0;
    read_block(f, &hlen, sizeof(hlen), "header length");
    std::string htext(hlen, '\0');
    read_block(f, htext.data(), hlen, "header");
    json h;
    try {
        h = json::parse(htext);
    } catch (const json::exception& e) {
        throw IoError(std::string("checkpoint: bad header: ") + e.what());
    }
    CheckpointMeta meta;
    meta.config_hash = h.value("config_hash", "");
    meta.config_json = h.value("config_json", "");
    meta.epoch = h.value("epoch", 0);
    meta.step = h.value("step", std::int64_t{0});
    meta.adam_step = h.value("adam_step", std::int64_t{0});
    meta.has_adam = h.value("has_adam", false);
    const auto rng = h.value("rng", std::vector<std::uint64_t>{0, 0});
    meta.rng_state = rng.size() > 0 ? rng[0] : 0;
    meta.rng_inc = rng.size() > 1 ? rng[1] : 0;
    return meta;
}

CheckpointMeta load_checkpoint(const std::string& path, ParamStore<float>& store,
                               AdamState<float>* adam) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("checkpoint: cannot open " + path);
    FileCloser closer{f};
    char magic[8];
    read_block(f, magic, sizeof(magic), "magic");
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    std::uint32_t hlen = 0;
    read_block(f, &hlen, sizeof(hlen), "header length");
    std::string htext(hlen, '\0');
    read_block(f, htext.data(), hlen, "header");
    json h;
    try {
        h = json::parse(htext);
    } catch (const json::exception& e) {
        throw IoError(std::string("checkpoint: bad header: ") + e.what());
    }
    const auto& entries = h.at("entries");
    if (entries.size() != store.count())
        throw IoError("checkpoint: entry count " + std::to_string(entries.size()) +
                      " does not match store (" + std::to_string(store.count()) + ")");
    for (size_t i = 0; i < store.count(); ++i) {
        const std::string name = entries[i].at("name").get<std::string>();
        const auto shape = entries[i].at("shape").get<std::vector<Index>>();
        auto& t = store.tensor_of(i);
        if (name != store.name_of(i) || shape != t.shape.dims)
            throw IoError("checkpoint: entry mismatch at " + std::to_string(i) + " (" + name +
                          " vs " + store.name_of(i) + ")");
        read_block(f, t.data.data(), t.data.size() * sizeof(float), "params");
    }
    CheckpointMeta meta;
    meta.config_hash = h.value("config_hash", "");
    meta.config_json = h.value("config_json", "");
    meta.epoch = h.value("epoch", 0);
    meta.step = h.value("step", std::int64_t{0});
    meta.adam_step = h.value("adam_step", std::int64_t{0});
    meta.has_adam = h.value("has_adam", false);
    const auto rng = h.value("rng", std::vector<std::uint64_t>{0, 0});
    meta.rng_state = rng.size() > 0 ? rng[0] : 0;
    meta.rng_inc = rng.size() > 1 ? rng[1] : 0;
    if (adam) {
        if (!meta.has_adam) throw IoError("checkpoint: no optimizer state in " + path);
        adam->m.resize(store.count());
        adam->v.resize(store.count());
        for (size_t i = 0; i < store.count(); ++i) {
            adam->m[i].resize(store.tensor_of(i).data.size());
            read_block(f, adam->m[i].data(), adam->m[i].size() * sizeof(float), "adam.m");
        }
        for (size_t i = 0; i < store.count(); ++i) {
            adam->v[i].resize(store.tensor_of(i).data.size());
            read_block(f, adam->v[i].data(), adam->v[i].size() * sizeof(float), "adam.v");
        }
        adam->step = meta.adam_step;
    }
    return meta;
}

}  // namespace efd
