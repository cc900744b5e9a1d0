#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "tscir/config.hpp"
#include "tscir/mat.hpp"
#include "tscir/rng.hpp"

namespace tscir {

// Named parameter arrays with a trainability mask. std::map keeps iteration
// order deterministic, which the checkpoint format and freeze audits rely on.
struct ParameterSet {
    std::map<std::string, Mat> params;
    std::map<std::string, bool> trainable;

    void add(const std::string& name, Mat m, bool train = false);
    bool has(const std::string& name) const { return params.count(name) != 0; }
    Mat& at(const std::string& name);
    const Mat& at(const std::string& name) const;

    size_t count_scalars(const std::string& prefix = "") const;
    // FNV-1a over the raw bytes of every parameter matching prefix.
    uint64_t fingerprint(const std::string& prefix = "") const;

    void set_trainable_by_prefixes(const std::vector<std::string>& prefixes);
};

struct Checkpoint {
    uint32_t format_version = 1;
    int stage = 1;  // 1 or 2
    ModelConfig config;
    ParameterSet params;
    Rng::State rng{};
};

// Single-file binary container; parameter payloads are little-endian float32.
// save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);

}  // namespace tscir
