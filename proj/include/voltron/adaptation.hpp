#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "voltron/model.hpp"
#include "voltron/objective.hpp"

namespace voltron {

// Learned-query cross-attention pooling. n_seed queries attend over a set of
// feature rows; the output is the attention-weighted value sum, output
// projected and norm'd. Permutation invariant over input rows by construction.
// The queries and projections train during adaptation; the encoder by
// contract stays frozen, so callers hand in detached feature rows.
struct MapPool {
    Tensor queries;  // n_seed x d
    Tensor wq, wk, wv, wo;
    Tensor out_scale;  // 1 x d
    int heads = 1;

    static MapPool create(int n_seed, int dim, int heads, Rng& rng);

    Tensor pool(const Tensor& rows) const;  // n_seed x d; 0 rows is an error
    void collect(std::vector<Tensor>& params) const;
};

// Arithmetic mean over rows, 1 x d. The no-parameter baseline extractor.
Tensor mean_pool(const Tensor& rows);

// Shared adaptation-run settings. Optimizer defaults follow the adaptation
// protocol (lr 1e-3, weight decay 0.01); budgets are per-head.
struct AdaptConfig {
    int epochs = 0;   // epoch-based heads (grasp, refer, real-robot bc)
    int steps = 0;    // step-based heads (simulated bc)
    int batch_size = 0;
    double lr = 1e-3;
    double weight_decay = 0.01;
    uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Grasp affordance prediction: per-pixel 3-way labels.
// Label convention: 0 background, 1 graspable, 2 non-graspable.

struct GraspSample {
    std::vector<double> image;   // H*W*3 in [0,1]
    std::vector<uint8_t> labels;  // H*W, values in {0,1,2}
};

// Corpus directory convention plus labels.png per clip (gray, pixel value =
// class id). Label values outside {0,1,2} are a data error.
std::vector<GraspSample> load_grasp_dataset(const std::string& dir);

// Progressive-upsampling segmentation head: MAP with one query per patch
// region, then log2(patch) conv3x3 + bilinear-2x + ReLU stages (channel
// depths drawn from [128, 64, 32, 16]), then a 1x1 projection to 3 classes.
struct PupHead {
    MapPool map;
    std::vector<Tensor> conv_w;  // stage s: (9 * c_in) x c_out
    std::vector<Tensor> conv_b;  // 1 x c_out
    Tensor final_w;              // c_last x 3
    Tensor final_b;              // 1 x 3
    int grid_h = 0, grid_w = 0;
    int out_h = 0, out_w = 0;

    static PupHead create(const ModelConfig& cfg, Rng& rng);

    // (out_h*out_w) x 3 per-pixel class probabilities (rows sum to 1).
    Tensor forward(const Tensor& visual_rows) const;
    Tensor logits(const Tensor& visual_rows) const;
    std::vector<Tensor> parameters() const;
};

struct GraspMetrics {
    double top1 = 0.0;      // best-ranked pixel correct, averaged over images
    double top1pct = 0.0;   // precision among the top 1% ranked pixels
    double top5pct = 0.0;
    double ce = 0.0;        // mean per-pixel cross-entropy
};

// Rank pixels of one image by P(graspable); precision among the top `count`
// (ties broken toward the lowest flat index).
double ranked_precision(const std::vector<double>& graspable_probs,
                        const std::vector<uint8_t>& labels, int count);

struct GraspResult {
    PupHead head;
    GraspMetrics eval;
    int selected_fold = 0;
    std::vector<double> fold_top1;  // validation Top-1 per fold
};

// Per-pixel cross-entropy training with 5-fold model selection: the fold
// whose held-out Top-1 is best supplies the head used for eval metrics.
GraspResult grasp_adapt(const VoltronModel& model,
                        const std::vector<GraspSample>& train,
                        const std::vector<GraspSample>& eval,
                        const AdaptConfig& cfg);

// ---------------------------------------------------------------------------
// Referring-expression grounding: caption -> normalized (x, y, w, h).

struct ReferSample {
    std::vector<double> image;  // H*W*3
    std::string expression;
    std::array<double, 4> box{};  // x, y, w, h in [0,1] image units
};

// Corpus convention plus box.txt ("x y w h", normalized) per clip; the clip
// caption is the referring expression. w or h <= 0 is a data error.
std::vector<ReferSample> load_refer_dataset(const std::string& dir);

struct ReferHead {
    MapPool map;  // n_seed = 1 vector extractor
    std::vector<Tensor> mlp_w;  // [512, 128, 128, 64] hidden, GELU, then -> 4
    std::vector<Tensor> mlp_b;

    static ReferHead create(int in_dim, int map_dim, int map_heads, Rng& rng);

    Tensor forward(const Tensor& pooled_with_lang) const;  // rows x 4
    std::vector<Tensor> parameters() const;
};

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b);

struct ReferResult {
    ReferHead head;
    double accuracy = 0.0;  // fraction of eval boxes with IoU >= 0.25
    double loss = 0.0;      // final training Huber loss
};

// Pooled visual vector concatenated with the frozen-table language vector,
// through the MLP, Huber loss against the gold box. ablate_language routes
// the <NULL> utterance through both the encoder and the language vector.
ReferResult refer_adapt(const VoltronModel& model,
                        const std::vector<ReferSample>& train,
                        const std::vector<ReferSample>& eval,
                        const AdaptConfig& cfg, bool ablate_language = false);

// ---------------------------------------------------------------------------
// Behavior cloning from demonstrations.

struct DemoStep {
    std::vector<double> frame;  // H*W*3
    std::vector<double> proprio;
    std::vector<double> action;
};

struct Demo {
    std::vector<DemoStep> steps;
    std::string utterance;
    int height = 0;
    int width = 0;
};

// Versioned demo container ("VDEM"): utterance + per-step frame (8-bit RGB),
// proprio and action vectors.
void write_demos(const std::string& path, const std::vector<Demo>& demos);
std::vector<Demo> read_demos(const std::string& path);

enum class PoolKind { Map, Mean };

// 256-wide MLP for the simulated-control profile, 64 for the real-robot one.
enum class BcProfile { Simulated, Real };

// Feature batchnorm (running stats, momentum 0.1, frozen at eval) over
// pooled features (+ optional language vector) + proprio, then a 2-layer MLP
// to action targets.
struct BcHead {
    MapPool map;
    PoolKind pool = PoolKind::Map;
    Tensor bn_scale, bn_shift;  // 1 x in_dim
    std::vector<double> running_mean, running_var;
    double momentum = 0.1;
    Linear l1, l2;

    Tensor normalize(const Tensor& x, bool training);  // updates stats when training
    Tensor forward(const Tensor& features, bool training);
    std::vector<Tensor> parameters() const;
};

struct BcResult {
    BcHead head;
    double final_mse = 0.0;
};

// use_language appends the frozen-table vector of the demo utterance to the
// head input (the encoder also conditions on it for language variants).
BcResult bc_adapt(const VoltronModel& model, const std::vector<Demo>& demos,
                  BcProfile profile, PoolKind pool, const AdaptConfig& cfg,
                  bool use_language = false);

// Action chosen by a trained head for one observation.
std::vector<double> bc_policy_action(const VoltronModel& model, BcHead& head,
                                     const std::vector<double>& frame, int height,
                                     int width, const std::vector<double>& proprio,
                                     const std::string& utterance, bool use_language);

// ---------------------------------------------------------------------------
// Zero-shot intent scoring.

struct IntentPoint {
    int frame = 0;
    double score = 0.0;  // per-token log-likelihood of the utterance
};

// Length-normalized utterance scores per sampled frame (every `stride`-th).
// Dual-frame models pair each scored frame with the clip's first frame. Each
// score averages a fixed seeded set of mask draws so the encoder is queried
// in its training regime. Requires a generation-capable (V-Gen) model.
std::vector<IntentPoint> intent_curve(const VoltronModel& model,
                                      const std::vector<std::vector<double>>& frames,
                                      int height, int width,
                                      const TokenizedUtterance& utterance, int stride);

// ---------------------------------------------------------------------------
// Frozen-feature extraction shared by the heads.

// Encoder forward without masking (all regions visible), conditioned on
// `cond`; returns the detached visual rows. Single frames are duplicated
// into every slot of a k-frame context.
Tensor frozen_visual_rows(const VoltronModel& model, const std::vector<double>& frame,
                          int height, int width, const TokenizedUtterance& cond);

// Mean of the frozen language-table rows over the real tokens of `u`
// (1 x lang_dim), the desk-scale stand-in for an external text embedding.
Tensor frozen_language_vector(const VoltronModel& model, const TokenizedUtterance& u);

}  // namespace voltron
