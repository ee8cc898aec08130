#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "voltron/objective.hpp"

namespace voltron {

struct RngSnapshot {
    std::string name;
    std::array<uint64_t, 4> state{};
};

// Writes the full training state: config, vocabulary, every named parameter
// (float32), optimizer moments, rng stream states, and step/epoch counters.
// The file lands via write-to-temp + rename, so a crash never leaves a
// partial file at `path`.
void save_checkpoint(const std::string& path, const VoltronModel& model,
                     const AdamW* optimizer, const std::vector<RngSnapshot>& streams,
                     uint64_t step, uint32_t epoch);

struct LoadedCheckpoint {
    VoltronModel model;
    uint64_t step = 0;
    uint32_t epoch = 0;
    std::vector<RngSnapshot> streams;
    bool has_optimizer = false;
    int64_t adam_step = 0;
    // name -> (first moment, second moment)
    std::vector<std::pair<std::string, std::pair<std::vector<double>, std::vector<double>>>>
        moments;

    const RngSnapshot* find_stream(const std::string& name) const;
    void restore_optimizer(AdamW& opt) const;
};

// Rejects unknown versions and malformed files outright; on success the
// rebuilt model reproduces forward outputs bit-exactly (float32 storage).
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace voltron
