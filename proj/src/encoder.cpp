#include "voltron/encoder.hpp"

#include <cmath>
#include <fstream>

#include "voltron/error.hpp"

namespace voltron {

namespace {

uint64_t string_hash(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

Tensor seeded_language_table(const Vocabulary& vocab, int lang_dim) {
    std::vector<double> v(size_t(vocab.size()) * lang_dim);
    const double sigma = 1.0 / std::sqrt(double(lang_dim));
    for (int id = 0; id < vocab.size(); ++id) {
        Rng row_rng = Rng::seeded(string_hash(vocab.token_of(id)) ^ 0x564f4c54524f4eULL);
        for (int j = 0; j < lang_dim; ++j) {
            v[size_t(id) * lang_dim + j] = sigma * row_rng.normal();
        }
    }
    return Tensor::from_values(vocab.size(), lang_dim, std::move(v));
}

Tensor read_embedding_table(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("embedding table: cannot open '" + path + "'");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "VEMB") {
        throw DataError("embedding table: bad magic in '" + path + "'");
    }
    uint8_t hdr[8];
    f.read(reinterpret_cast<char*>(hdr), 8);
    uint32_t rows = uint32_t(hdr[0]) | (uint32_t(hdr[1]) << 8) | (uint32_t(hdr[2]) << 16) |
                    (uint32_t(hdr[3]) << 24);
    uint32_t cols = uint32_t(hdr[4]) | (uint32_t(hdr[5]) << 8) | (uint32_t(hdr[6]) << 16) |
                    (uint32_t(hdr[7]) << 24);
    if (!f || rows == 0 || cols == 0) throw DataError("embedding table: bad header");
    std::vector<float> raw(size_t(rows) * cols);
    f.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size() * 4));
    if (!f) throw DataError("embedding table: truncated '" + path + "'");
    std::vector<double> v(raw.begin(), raw.end());
    return Tensor::from_values(int(rows), int(cols), std::move(v));
}

void write_embedding_table(const std::string& path, const Tensor& table) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("embedding table: cannot write '" + path + "'");
    f.write("VEMB", 4);
    uint32_t rows = uint32_t(table.rows()), cols = uint32_t(table.cols());
    uint8_t hdr[8] = {uint8_t(rows),       uint8_t(rows >> 8), uint8_t(rows >> 16),
                      uint8_t(rows >> 24), uint8_t(cols),      uint8_t(cols >> 8),
                      uint8_t(cols >> 16), uint8_t(cols >> 24)};
    f.write(reinterpret_cast<const char*>(hdr), 8);
    for (double d : table.values()) {
        float x = float(d);
        f.write(reinterpret_cast<const char*>(&x), 4);
    }
    if (!f) throw DataError("embedding table: write failed for '" + path + "'");
}

Encoder Encoder::create(const ModelConfig& cfg, const Vocabulary& vocab, Rng& rng) {
    cfg.validate();
    if (vocab.size() != cfg.vocab_size) {
        throw VocabularyError("vocabulary size " + std::to_string(vocab.size()) +
                              " does not match config vocab_size " +
                              std::to_string(cfg.vocab_size));
    }
    Encoder e;
    e.cfg = cfg;
    e.lang_table = seeded_language_table(vocab, cfg.lang_dim);
    e.patch_proj = Linear::create(cfg.patch_dim(), cfg.dim, rng);
    e.lang_proj = Linear::create(cfg.lang_dim, cfg.dim, rng);
    e.e_img = trunc_normal(1, cfg.dim, 0.02, rng);
    e.e_lang = trunc_normal(1, cfg.dim, 0.02, rng);
    for (int f = 0; f < cfg.k; ++f) e.e_frame.push_back(trunc_normal(1, cfg.dim, 0.02, rng));
    for (int b = 0; b < cfg.depth; ++b) {
        e.blocks.push_back(TransformerBlock::create(cfg.dim, cfg.heads, rng));
    }
    e.final_scale = Tensor::full(1, cfg.dim, 1.0).set_requires_grad(true);
    e.pos_2d = sinusoid_2d(cfg.grid_h(), cfg.grid_w(), cfg.dim);
    e.pos_1d = sinusoid_1d(cfg.caption_len, cfg.dim);
    return e;
}

Tensor Encoder::embed_patches(const FrameContext& ctx, const MaskSpec* mask) const {
    if (ctx.height != cfg.height || ctx.width != cfg.width) {
        throw ContractError("frame context dimensions do not match the model config");
    }
    if (ctx.k() < 1 || ctx.k() > int(e_frame.size())) {
        throw ContractError("frame context size " + std::to_string(ctx.k()) +
                            " unsupported by this encoder");
    }
    std::vector<int> kept;
    if (mask != nullptr) {
        if (mask->num_regions() != cfg.regions()) {
            throw ContractError("mask region count does not match the patch grid");
        }
        kept = mask->kept_indices();
    } else {
        kept.resize(cfg.regions());
        for (int i = 0; i < cfg.regions(); ++i) kept[i] = i;
    }
    std::vector<Tensor> frames;
    Tensor pos = gather_rows(pos_2d, kept);
    for (int f = 0; f < ctx.k(); ++f) {
        Tensor patches = patchify(ctx.frames[f], ctx.height, ctx.width, cfg.patch);
        Tensor visible = gather_rows(patches, kept);
        Tensor rows = add(patch_proj.forward(visible), pos);
        rows = add_rowvec(rows, e_img);
        rows = add_rowvec(rows, e_frame[f]);
        frames.push_back(rows);
    }
    return frames.size() == 1 ? frames[0] : concat_rows(frames);
}

Tensor Encoder::embed_language(const TokenizedUtterance& utterance) const {
    if (int(utterance.ids.size()) != cfg.caption_len) {
        throw ContractError("utterance length does not match config caption_len");
    }
    for (int id : utterance.ids) {
        if (id < 0 || id >= cfg.vocab_size) {
            throw VocabularyError("token id " + std::to_string(id) +
                                  " outside vocabulary of size " +
                                  std::to_string(cfg.vocab_size));
        }
    }
    Tensor raw = gather_rows(lang_table, utterance.ids);
    Tensor rows = add(lang_proj.forward(raw), pos_1d);
    return add_rowvec(rows, e_lang);
}

EncodedSequence Encoder::encode(const FrameContext& ctx, const MaskSpec* mask,
                                const TokenizedUtterance& utterance) const {
    Tensor visual = embed_patches(ctx, mask);
    Tensor language = embed_language(utterance);
    const int num_visual = visual.rows();
    const int L = cfg.caption_len;
    const int total = num_visual + L;

    // Bidirectional attention restricted only by language padding: pad slots
    // are visible to themselves so their softmax stays defined, but no other
    // row may attend to them.
    AttentionMask attn = AttentionMask::all_visible(total, total);
    for (int j = 0; j < L; ++j) {
        if (utterance.length_mask[j]) continue;
        for (int i = 0; i < total; ++i) attn.set(i, num_visual + j, i == num_visual + j);
    }

    Tensor x = concat_rows({visual, language});
    for (const auto& block : blocks) x = block.forward(x, attn);
    if (cfg.final_norm) x = rmsnorm(x, final_scale);

    EncodedSequence out;
    out.h = x;
    out.k = ctx.k();
    out.visible_per_frame = num_visual / ctx.k();
    out.caption_len = L;
    if (mask != nullptr) {
        out.visible_region_ids = mask->kept_indices();
    } else {
        out.visible_region_ids.resize(cfg.regions());
        for (int i = 0; i < cfg.regions(); ++i) out.visible_region_ids[i] = i;
    }
    out.lang_mask = utterance.length_mask;
    out.null_conditioned = utterance.is_null();
    return out;
}

void Encoder::collect(std::vector<Tensor>& trainable) const {
    patch_proj.collect(trainable);
    lang_proj.collect(trainable);
    trainable.push_back(e_img);
    trainable.push_back(e_lang);
    for (const auto& f : e_frame) trainable.push_back(f);
    for (const auto& b : blocks) b.collect(trainable);
    if (cfg.final_norm) trainable.push_back(final_scale);
}

}  // namespace voltron
