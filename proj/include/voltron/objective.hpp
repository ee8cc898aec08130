#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voltron/model.hpp"

namespace voltron {

// z ~ Bernoulli(alpha). z=0: language-conditioned reconstruction.
// z=1: <NULL>-conditioned reconstruction plus caption generation.
int sample_gate(double alpha, Rng& rng);

struct BatchItem {
    FrameContext ctx;
    MaskSpec mask;
    int gate = 0;
};

struct LossBreakdown {
    Tensor total;  // 1x1, recorded on the active tape
    double mse_mean = 0.0;   // over all examples
    double nll_mean = 0.0;   // over gated (z=1) examples; 0 when none
    double gate_rate = 0.0;
    int examples = 0;
};

// Mean over the batch of the per-example case losses. z=1 items are a
// contract error for variants trained with alpha=0.
LossBreakdown compute_loss(const VoltronModel& model,
                           const std::vector<BatchItem>& batch);

struct AdamWHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Decoupled-weight-decay adaptive-moment optimizer over an explicit parameter
// list. Anything not in the list (frozen tensors) is never touched.
class AdamW {
public:
    explicit AdamW(std::vector<Tensor> params);

    void step(const AdamWHyper& hp);
    void zero_grad();

    const std::vector<Tensor>& parameters() const { return params_; }
    int64_t step_count() const { return step_count_; }
    const std::vector<double>& first_moment(size_t i) const { return m_[i]; }
    const std::vector<double>& second_moment(size_t i) const { return v_[i]; }
    void restore(size_t i, std::vector<double> m, std::vector<double> v);
    void set_step_count(int64_t n) { step_count_ = n; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    int64_t step_count_ = 0;
};

// Scales gradients so their global L2 norm is at most max_norm; returns the
// pre-clip norm. max_norm <= 0 disables clipping.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

// Linear 0 -> peak over [0, warmup], then cosine peak -> 0 over (warmup, total].
double lr_schedule(int64_t step, int64_t warmup, int64_t total, double peak);

struct TrainResult {
    VoltronModel model;
    std::string checkpoint_path;
    std::string metrics_path;
    int64_t steps = 0;
    double final_mse = 0.0;
    double final_nll = 0.0;
};

// Full pretraining loop: builds the vocabulary from the corpus, trains for
// cfg.epochs, writes per-epoch index files, a metrics stream (config header
// echoed on '#' lines), and atomic checkpoints under cfg.out_dir.
TrainResult train(const RunConfig& cfg);

// Reads the '#'-prefixed header back out of a metrics file.
RunConfig parse_metrics_header(const std::string& metrics_path);

uint64_t derive_seed(uint64_t base, const std::string& name, uint64_t index);

}  // namespace voltron
