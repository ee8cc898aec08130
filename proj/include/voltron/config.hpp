#pragma once

#include <cstdint>
#include <string>

namespace voltron {

enum class Variant { VCond, VDual, VGen, NoLang };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

// Architecture + objective hyperparameters. The variant pins alpha and k:
// V-Cond (0, 1), V-Dual (0, 2), V-Gen (0.5, 2); NoLang trains with alpha 0 and
// every caption replaced by the <NULL> utterance.
struct ModelConfig {
    Variant variant = Variant::VCond;
    double alpha = 0.0;
    int k = 1;
    double gamma = 0.75;
    int dim = 64;
    int depth = 2;
    int heads = 2;
    int patch = 8;
    int height = 32;
    int width = 32;
    int caption_len = 20;  // L
    int vocab_size = 64;
    int dec_dim = 32;
    int dec_depth = 2;
    int dec_heads = 4;
    int lang_dim = 768;  // frozen language table width
    bool final_norm = true;
    uint64_t seed = 0;

    int grid_h() const { return height / patch; }
    int grid_w() const { return width / patch; }
    int regions() const { return grid_h() * grid_w(); }
    int patch_dim() const { return patch * patch * 3; }
    int dropped_regions() const;
    int visible_regions() const { return regions() - dropped_regions(); }
    bool uses_language_captions() const { return variant != Variant::NoLang; }

    void validate() const;

    static ModelConfig desk(Variant v);
    static ModelConfig vit_small(Variant v);
};

// Pretraining run settings. lr == 0 selects the scaled default
// 1.5e-4 * batch_size / 256.
struct RunConfig {
    ModelConfig model;
    std::string corpus_dir;
    std::string out_dir = "run";
    int epochs = 10;
    int batch_size = 8;
    int frames_per_clip = 5;
    int checkpoint_every = 0;  // epochs; 0 = final only
    double lr = 0.0;
    double warmup_frac = 0.05;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double clip_norm = 1.0;
    std::string metrics_path;  // defaults to <out_dir>/metrics.txt

    void validate() const;
    std::string resolved_metrics_path() const;
    double resolved_lr() const;
};

std::string serialize_run_config(const RunConfig& cfg);
RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::string& path);  // applies VOLTRON_SEED

}  // namespace voltron
