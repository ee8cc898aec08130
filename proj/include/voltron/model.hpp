#pragma once

#include <string>
#include <utility>
#include <vector>

#include "voltron/config.hpp"
#include "voltron/dataops.hpp"
#include "voltron/decoder.hpp"
#include "voltron/encoder.hpp"

namespace voltron {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Encoder + decoder + vocabulary, with a stable parameter naming scheme used
// by checkpoints and the optimizer. The frozen language table appears in
// named_parameters (it must round-trip) but never in trainable_parameters.
struct VoltronModel {
    ModelConfig cfg;
    Vocabulary vocab;
    Encoder encoder;
    Decoder decoder;

    // Initializes every parameter from cfg.seed's "init" stream.
    static VoltronModel create(const ModelConfig& cfg, const Vocabulary& vocab);

    std::vector<NamedTensor> named_parameters() const;
    std::vector<Tensor> trainable_parameters() const;

    // The utterance the encoder conditions on for a given gate draw: the real
    // caption when z=0 (NoLang always substitutes <NULL>), <NULL> when z=1.
    TokenizedUtterance conditioning_utterance(const TokenizedUtterance& caption,
                                              int gate) const;

    // Reconstruction targets for the masked regions of every frame:
    // (k * dropped) x patch_dim, matching Decoder::reconstruct row order.
    Tensor reconstruction_targets(const FrameContext& ctx, const MaskSpec& mask) const;
};

}  // namespace voltron
