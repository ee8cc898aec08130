#include "voltron/model.hpp"

#include "voltron/error.hpp"

namespace voltron {

namespace {

void append_linear(std::vector<NamedTensor>& out, const std::string& prefix,
                   const Linear& l) {
    out.push_back({prefix + ".weight", l.weight});
    if (l.bias.defined()) out.push_back({prefix + ".bias", l.bias});
}

void append_block(std::vector<NamedTensor>& out, const std::string& prefix,
                  const TransformerBlock& b) {
    out.push_back({prefix + ".wq", b.wq});
    out.push_back({prefix + ".wk", b.wk});
    out.push_back({prefix + ".wv", b.wv});
    out.push_back({prefix + ".wo", b.wo});
    append_linear(out, prefix + ".gate", b.gate);
    append_linear(out, prefix + ".up", b.up);
    append_linear(out, prefix + ".down", b.down);
    out.push_back({prefix + ".norm1", b.norm1});
    out.push_back({prefix + ".norm2", b.norm2});
    out.push_back({prefix + ".scale1", b.scale1});
    out.push_back({prefix + ".scale2", b.scale2});
}

}  // namespace

VoltronModel VoltronModel::create(const ModelConfig& cfg, const Vocabulary& vocab) {
    cfg.validate();
    Rng init = Rng::seeded(cfg.seed).child("init");
    VoltronModel m;
    m.cfg = cfg;
    m.vocab = vocab;
    m.encoder = Encoder::create(cfg, vocab, init);
    m.decoder = Decoder::create(cfg, init);
    for (auto& named : m.named_parameters()) named.tensor.set_name(named.name);
    return m;
}

std::vector<NamedTensor> VoltronModel::named_parameters() const {
    std::vector<NamedTensor> out;
    out.push_back({"encoder.lang_table", encoder.lang_table});
    append_linear(out, "encoder.patch_proj", encoder.patch_proj);
    append_linear(out, "encoder.lang_proj", encoder.lang_proj);
    out.push_back({"encoder.e_img", encoder.e_img});
    out.push_back({"encoder.e_lang", encoder.e_lang});
    for (size_t f = 0; f < encoder.e_frame.size(); ++f) {
        out.push_back({"encoder.e_frame" + std::to_string(f), encoder.e_frame[f]});
    }
    for (size_t b = 0; b < encoder.blocks.size(); ++b) {
        append_block(out, "encoder.block" + std::to_string(b), encoder.blocks[b]);
    }
    if (cfg.final_norm) out.push_back({"encoder.final_scale", encoder.final_scale});
    append_linear(out, "decoder.enc2dec", decoder.enc2dec);
    out.push_back({"decoder.mask_embed", decoder.mask_embed});
    out.push_back({"decoder.e_img_dec", decoder.e_img_dec});
    out.push_back({"decoder.e_lang_dec", decoder.e_lang_dec});
    for (size_t f = 0; f < decoder.e_frame_dec.size(); ++f) {
        out.push_back({"decoder.e_frame_dec" + std::to_string(f), decoder.e_frame_dec[f]});
    }
    out.push_back({"decoder.token_table", decoder.token_table});
    for (size_t b = 0; b < decoder.blocks.size(); ++b) {
        append_block(out, "decoder.block" + std::to_string(b), decoder.blocks[b]);
    }
    append_linear(out, "decoder.pixel_head", decoder.pixel_head);
    append_linear(out, "decoder.lang_head", decoder.lang_head);
    return out;
}

std::vector<Tensor> VoltronModel::trainable_parameters() const {
    std::vector<Tensor> out;
    for (auto& named : named_parameters()) {
        if (named.tensor.requires_grad()) out.push_back(named.tensor);
    }
    return out;
}

TokenizedUtterance VoltronModel::conditioning_utterance(
    const TokenizedUtterance& caption, int gate) const {
    if (gate == 1 || cfg.variant == Variant::NoLang) {
        return null_utterance(cfg.caption_len);
    }
    return caption;
}

Tensor VoltronModel::reconstruction_targets(const FrameContext& ctx,
                                            const MaskSpec& mask) const {
    std::vector<int> dropped = mask.dropped_indices();
    std::vector<Tensor> parts;
    for (int f = 0; f < ctx.k(); ++f) {
        Tensor norm = normalize_targets(patchify(ctx.frames[f], ctx.height, ctx.width,
                                                 cfg.patch));
        parts.push_back(gather_rows(norm, dropped));
    }
    return parts.size() == 1 ? parts[0] : concat_rows(parts);
}

}  // namespace voltron
