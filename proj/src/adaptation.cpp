#include "voltron/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "voltron/error.hpp"
#include "voltron/png_io.hpp"

namespace voltron {

namespace {

constexpr int kMapHeads = 4;

double resolve(double v, double fallback) { return v > 0 ? v : fallback; }
int resolve(int v, int fallback) { return v > 0 ? v : fallback; }

}  // namespace

MapPool MapPool::create(int n_seed, int dim, int heads, Rng& rng) {
    if (n_seed < 1) throw ConfigError("attention pooling needs at least one query");
    if (dim % heads != 0) throw ConfigError("pool width must divide into heads");
    MapPool p;
    p.heads = heads;
    p.queries = trunc_normal(n_seed, dim, 0.02, rng);
    p.wq = trunc_normal(dim, dim, 0.02, rng);
    p.wk = trunc_normal(dim, dim, 0.02, rng);
    p.wv = trunc_normal(dim, dim, 0.02, rng);
    p.wo = trunc_normal(dim, dim, 0.02, rng);
    p.out_scale = Tensor::full(1, dim, 1.0);
    for (Tensor* t : {&p.queries, &p.wq, &p.wk, &p.wv, &p.wo, &p.out_scale}) {
        t->set_requires_grad(true);
    }
    return p;
}

Tensor MapPool::pool(const Tensor& rows) const {
    if (rows.rows() == 0) throw ContractError("attention pooling over an empty row set");
    AttentionMask mask = AttentionMask::all_visible(queries.rows(), rows.rows());
    Tensor attended = cross_attention(queries, rows, mask, wq, wk, wv, wo, heads);
    return rmsnorm(attended, out_scale);
}

void MapPool::collect(std::vector<Tensor>& params) const {
    params.push_back(queries);
    params.push_back(wq);
    params.push_back(wk);
    params.push_back(wv);
    params.push_back(wo);
    params.push_back(out_scale);
}

Tensor mean_pool(const Tensor& rows) {
    if (rows.rows() == 0) throw ContractError("mean pooling over an empty row set");
    return mean_rows(rows);
}

Tensor frozen_visual_rows(const VoltronModel& model, const std::vector<double>& frame,
                          int height, int width, const TokenizedUtterance& cond) {
    FrameContext ctx;
    ctx.frame_indices.assign(model.cfg.k, 0);
    ctx.frames.assign(model.cfg.k, frame);
    ctx.tokens = cond;
    ctx.height = height;
    ctx.width = width;
    EncodedSequence h = model.encoder.encode(ctx, nullptr, cond);
    return h.visual_rows().detach();
}

Tensor frozen_language_vector(const VoltronModel& model, const TokenizedUtterance& u) {
    std::vector<int> real;
    for (size_t i = 0; i < u.ids.size(); ++i) {
        if (u.length_mask[i]) real.push_back(u.ids[i]);
    }
    if (real.empty()) throw ContractError("utterance with no real tokens");
    return mean_rows(gather_rows(model.encoder.lang_table, real)).detach();
}

// ---------------------------------------------------------------------------
// Dataset loaders.

namespace {

std::vector<std::string> read_manifest(const std::string& dir) {
    std::ifstream manifest(dir + "/manifest.txt");
    if (!manifest) throw DataError("no manifest.txt under '" + dir + "'");
    std::vector<std::string> entries;
    std::string line;
    while (std::getline(manifest, line)) {
        if (!line.empty()) entries.push_back(dir + "/" + line);
    }
    if (entries.empty()) throw DataError("empty manifest under '" + dir + "'");
    return entries;
}

std::vector<double> image_to_unit(const Image& img) {
    std::vector<double> out(img.rgb.size());
    for (size_t i = 0; i < img.rgb.size(); ++i) out[i] = img.rgb[i] / 255.0;
    return out;
}

}  // namespace

std::vector<GraspSample> load_grasp_dataset(const std::string& dir) {
    std::vector<GraspSample> out;
    for (const auto& clip : read_manifest(dir)) {
        Image img = read_png(clip + "/0.png");
        Image lab = read_png(clip + "/labels.png");
        if (lab.width != img.width || lab.height != img.height) {
            throw DataError("label map size differs from image in '" + clip + "'");
        }
        GraspSample s;
        s.image = image_to_unit(img);
        s.labels.resize(size_t(lab.width) * lab.height);
        for (size_t p = 0; p < s.labels.size(); ++p) {
            uint8_t v = lab.rgb[p * 3];
            if (v > 2) {
                throw DataError("label value " + std::to_string(int(v)) + " outside {0,1,2} in '" +
                                clip + "'");
            }
            s.labels[p] = v;
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ReferSample> load_refer_dataset(const std::string& dir) {
    std::vector<ReferSample> out;
    for (const auto& clip : read_manifest(dir)) {
        Image img = read_png(clip + "/0.png");
        std::ifstream cap(clip + "/caption.txt");
        if (!cap) throw DataError("missing caption.txt in '" + clip + "'");
        std::ifstream boxf(clip + "/box.txt");
        if (!boxf) throw DataError("missing box.txt in '" + clip + "'");
        ReferSample s;
        s.image = image_to_unit(img);
        std::getline(cap, s.expression);
        if (!(boxf >> s.box[0] >> s.box[1] >> s.box[2] >> s.box[3])) {
            throw DataError("malformed box.txt in '" + clip + "'");
        }
        if (s.box[2] <= 0.0 || s.box[3] <= 0.0) {
            throw DataError("degenerate gold box in '" + clip + "'");
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// PUP head.

namespace {

// 3x3 same-padding convolution over a (h*w) x c_in feature grid, expressed as
// nine shifted gathers (out-of-frame taps hit the gather zero row).
Tensor conv3x3(const Tensor& x, int h, int w, const Tensor& weight, const Tensor& bias) {
    const int c_in = x.cols();
    Tensor acc;
    int tap = 0;
    for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx, ++tap) {
            std::vector<int> idx(size_t(h) * w);
            for (int y = 0; y < h; ++y) {
                for (int xx = 0; xx < w; ++xx) {
                    int sy = y + dy, sx = xx + dx;
                    bool in = sy >= 0 && sy < h && sx >= 0 && sx < w;
                    idx[size_t(y) * w + xx] = in ? sy * w + sx : -1;
                }
            }
            Tensor term = matmul(gather_rows(x, idx),
                                 slice_rows(weight, tap * c_in, (tap + 1) * c_in));
            acc = tap == 0 ? term : add(acc, term);
        }
    }
    return add_rowvec(acc, bias);
}

// Bilinear 2x upsample (half-pixel centers, edge clamped): four fixed-weight
// gathers per output pixel.
Tensor upsample2x(const Tensor& x, int h, int w) {
    const int oh = h * 2, ow = w * 2;
    const size_t n = size_t(oh) * ow;
    std::vector<int> i00(n), i01(n), i10(n), i11(n);
    std::vector<double> w00(n), w01(n), w10(n), w11(n);
    for (int y = 0; y < oh; ++y) {
        double sy = (y + 0.5) / 2.0 - 0.5;
        int y0 = std::clamp(int(std::floor(sy)), 0, h - 1);
        int y1 = std::min(y0 + 1, h - 1);
        double fy = std::clamp(sy - std::floor(sy), 0.0, 1.0);
        if (sy < 0) fy = 0.0;
        for (int xx = 0; xx < ow; ++xx) {
            double sx = (xx + 0.5) / 2.0 - 0.5;
            int x0 = std::clamp(int(std::floor(sx)), 0, w - 1);
            int x1 = std::min(x0 + 1, w - 1);
            double fx = std::clamp(sx - std::floor(sx), 0.0, 1.0);
            if (sx < 0) fx = 0.0;
            size_t p = size_t(y) * ow + xx;
            i00[p] = y0 * w + x0;
            i01[p] = y0 * w + x1;
            i10[p] = y1 * w + x0;
            i11[p] = y1 * w + x1;
            w00[p] = (1 - fy) * (1 - fx);
            w01[p] = (1 - fy) * fx;
            w10[p] = fy * (1 - fx);
            w11[p] = fy * fx;
        }
    }
    auto colvec = [&](const std::vector<double>& v) {
        return Tensor::from_values(int(n), 1, v);
    };
    Tensor out = mul_colvec(gather_rows(x, i00), colvec(w00));
    out = add(out, mul_colvec(gather_rows(x, i01), colvec(w01)));
    out = add(out, mul_colvec(gather_rows(x, i10), colvec(w10)));
    out = add(out, mul_colvec(gather_rows(x, i11), colvec(w11)));
    return out;
}

}  // namespace

PupHead PupHead::create(const ModelConfig& cfg, Rng& rng) {
    PupHead head;
    head.grid_h = cfg.grid_h();
    head.grid_w = cfg.grid_w();
    head.out_h = cfg.height;
    head.out_w = cfg.width;
    head.map = MapPool::create(cfg.regions(), cfg.dim, kMapHeads, rng);
    static const int kDepths[4] = {128, 64, 32, 16};
    int stages = 0;
    for (int p = cfg.patch; p > 1; p >>= 1) ++stages;
    if (stages > 4) throw ConfigError("patch size too large for the upsampling stack");
    int c_in = cfg.dim;
    for (int s = 0; s < stages; ++s) {
        int c_out = kDepths[s];
        Tensor w = trunc_normal(9 * c_in, c_out, 0.02, rng);
        Tensor b = Tensor::zeros(1, c_out);
        w.set_requires_grad(true);
        b.set_requires_grad(true);
        head.conv_w.push_back(w);
        head.conv_b.push_back(b);
        c_in = c_out;
    }
    head.final_w = trunc_normal(c_in, 3, 0.02, rng);
    head.final_b = Tensor::zeros(1, 3);
    head.final_w.set_requires_grad(true);
    head.final_b.set_requires_grad(true);
    return head;
}

Tensor PupHead::logits(const Tensor& visual_rows) const {
    Tensor feat = map.pool(visual_rows);  // one row per patch region
    int h = grid_h, w = grid_w;
    for (size_t s = 0; s < conv_w.size(); ++s) {
        feat = conv3x3(feat, h, w, conv_w[s], conv_b[s]);
        feat = upsample2x(feat, h, w);
        h *= 2;
        w *= 2;
        feat = relu(feat);
    }
    if (h != out_h || w != out_w) {
        throw ContractError("upsampling stack does not recover the image size");
    }
    return add_rowvec(matmul(feat, final_w), final_b);
}

Tensor PupHead::forward(const Tensor& visual_rows) const {
    return softmax_rows(logits(visual_rows));
}

std::vector<Tensor> PupHead::parameters() const {
    std::vector<Tensor> params;
    map.collect(params);
    for (size_t s = 0; s < conv_w.size(); ++s) {
        params.push_back(conv_w[s]);
        params.push_back(conv_b[s]);
    }
    params.push_back(final_w);
    params.push_back(final_b);
    return params;
}

double ranked_precision(const std::vector<double>& graspable_probs,
                        const std::vector<uint8_t>& labels, int count) {
    if (graspable_probs.size() != labels.size() || graspable_probs.empty()) {
        throw ContractError("ranked precision inputs disagree in size");
    }
    count = std::min<int>(count, int(graspable_probs.size()));
    std::vector<int> order(graspable_probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (graspable_probs[a] != graspable_probs[b]) {
            return graspable_probs[a] > graspable_probs[b];
        }
        return a < b;  // ties toward the lowest flat index
    });
    int hits = 0;
    for (int i = 0; i < count; ++i) hits += labels[order[i]] == 1;
    return double(hits) / count;
}

namespace {

struct GraspEval {
    GraspMetrics metrics;
};

GraspMetrics grasp_metrics(const PupHead& head, const std::vector<Tensor>& rows,
                           const std::vector<GraspSample>& samples) {
    GraspMetrics m;
    const int pixels = head.out_h * head.out_w;
    const int n1pct = std::max(1, int(std::lround(0.01 * pixels)));
    const int n5pct = std::max(1, int(std::lround(0.05 * pixels)));
    for (size_t i = 0; i < samples.size(); ++i) {
        Tensor probs = head.forward(rows[i]);
        const auto& v = probs.values();
        std::vector<double> grasp_col(pixels);
        double ce = 0.0;
        for (int p = 0; p < pixels; ++p) {
            grasp_col[p] = v[size_t(p) * 3 + 1];
            ce -= std::log(std::max(v[size_t(p) * 3 + samples[i].labels[p]], 1e-300));
        }
        m.top1 += ranked_precision(grasp_col, samples[i].labels, 1);
        m.top1pct += ranked_precision(grasp_col, samples[i].labels, n1pct);
        m.top5pct += ranked_precision(grasp_col, samples[i].labels, n5pct);
        m.ce += ce / pixels;
    }
    m.top1 /= double(samples.size());
    m.top1pct /= double(samples.size());
    m.top5pct /= double(samples.size());
    m.ce /= double(samples.size());
    return m;
}

Tensor grasp_batch_loss(const PupHead& head, const std::vector<Tensor>& rows,
                        const std::vector<GraspSample>& samples,
                        const std::vector<int>& batch) {
    Tensor loss;
    for (int i : batch) {
        Tensor lp = log_softmax_rows(head.logits(rows[i]));
        std::vector<int> ids(samples[i].labels.begin(), samples[i].labels.end());
        Tensor ce = neg(mean(take_per_row(lp, ids)));
        loss = loss.defined() ? add(loss, ce) : ce;
    }
    return scale(loss, 1.0 / double(batch.size()));
}

}  // namespace

GraspResult grasp_adapt(const VoltronModel& model,
                        const std::vector<GraspSample>& train,
                        const std::vector<GraspSample>& eval,
                        const AdaptConfig& cfg) {
    constexpr int kFolds = 5;
    if (int(train.size()) < kFolds) {
        throw DataError("5-fold selection needs at least 5 training samples");
    }
    if (eval.empty()) throw DataError("empty grasp evaluation set");
    const int epochs = resolve(cfg.epochs, 50);
    const int batch = resolve(cfg.batch_size, 64);
    const TokenizedUtterance null = null_utterance(model.cfg.caption_len);

    auto cache_rows = [&](const std::vector<GraspSample>& set) {
        std::vector<Tensor> rows;
        rows.reserve(set.size());
        for (const auto& s : set) {
            rows.push_back(frozen_visual_rows(model, s.image, model.cfg.height,
                                              model.cfg.width, null));
        }
        return rows;
    };
    std::vector<Tensor> train_rows = cache_rows(train);
    std::vector<Tensor> eval_rows = cache_rows(eval);

    AdamWHyper hp;
    hp.lr = resolve(cfg.lr, 1e-3);
    hp.weight_decay = cfg.weight_decay;

    GraspResult result;
    double best = -1.0;
    for (int fold = 0; fold < kFolds; ++fold) {
        Rng rng = Rng::seeded(cfg.seed).child("fold", uint64_t(fold));
        PupHead head = PupHead::create(model.cfg, rng);
        AdamW opt(head.parameters());
        std::vector<int> fit, held;
        for (int i = 0; i < int(train.size()); ++i) {
            (i % kFolds == fold ? held : fit).push_back(i);
        }
        Rng order_rng = rng.child("order");
        for (int epoch = 0; epoch < epochs; ++epoch) {
            order_rng.shuffle(fit);
            for (size_t start = 0; start < fit.size(); start += batch) {
                std::vector<int> chunk(fit.begin() + start,
                                       fit.begin() + std::min(fit.size(), start + batch));
                opt.zero_grad();
                GradTape tape;
                Tensor loss = grasp_batch_loss(head, train_rows, train, chunk);
                tape.backward(loss);
                opt.step(hp);
            }
        }
        double val = 0.0;
        for (int i : held) {
            Tensor probs = head.forward(train_rows[i]);
            const auto& v = probs.values();
            std::vector<double> g(size_t(head.out_h) * head.out_w);
            for (size_t p = 0; p < g.size(); ++p) g[p] = v[p * 3 + 1];
            val += ranked_precision(g, train[i].labels, 1);
        }
        val /= double(held.size());
        result.fold_top1.push_back(val);
        if (val > best) {
            best = val;
            result.head = head;
            result.selected_fold = fold;
        }
    }
    result.eval = grasp_metrics(result.head, eval_rows, eval);
    return result;
}

// ---------------------------------------------------------------------------
// Referring-expression head.

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    double aw = std::max(0.0, a[2]), ah = std::max(0.0, a[3]);
    double bw = std::max(0.0, b[2]), bh = std::max(0.0, b[3]);
    double ix0 = std::max(a[0], b[0]);
    double iy0 = std::max(a[1], b[1]);
    double ix1 = std::min(a[0] + aw, b[0] + bw);
    double iy1 = std::min(a[1] + ah, b[1] + bh);
    double inter = std::max(0.0, ix1 - ix0) * std::max(0.0, iy1 - iy0);
    double uni = aw * ah + bw * bh - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

ReferHead ReferHead::create(int in_dim, int map_dim, int map_heads, Rng& rng) {
    ReferHead head;
    head.map = MapPool::create(1, map_dim, map_heads, rng);
    const int dims[6] = {in_dim, 512, 128, 128, 64, 4};
    for (int l = 0; l < 5; ++l) {
        Tensor w = trunc_normal(dims[l], dims[l + 1], 0.02, rng);
        Tensor b = Tensor::zeros(1, dims[l + 1]);
        w.set_requires_grad(true);
        b.set_requires_grad(true);
        head.mlp_w.push_back(w);
        head.mlp_b.push_back(b);
    }
    return head;
}

Tensor ReferHead::forward(const Tensor& pooled_with_lang) const {
    Tensor x = pooled_with_lang;
    for (size_t l = 0; l < mlp_w.size(); ++l) {
        x = add_rowvec(matmul(x, mlp_w[l]), mlp_b[l]);
        if (l + 1 < mlp_w.size()) x = gelu(x);
    }
    return x;
}

std::vector<Tensor> ReferHead::parameters() const {
    std::vector<Tensor> params;
    map.collect(params);
    for (size_t l = 0; l < mlp_w.size(); ++l) {
        params.push_back(mlp_w[l]);
        params.push_back(mlp_b[l]);
    }
    return params;
}

ReferResult refer_adapt(const VoltronModel& model,
                        const std::vector<ReferSample>& train,
                        const std::vector<ReferSample>& eval,
                        const AdaptConfig& cfg, bool ablate_language) {
    if (train.empty() || eval.empty()) throw DataError("empty referring-expression dataset");
    const int epochs = resolve(cfg.epochs, 10);
    const int batch = resolve(cfg.batch_size, 512);
    const int L = model.cfg.caption_len;

    struct Cached {
        Tensor rows;
        Tensor lang;
        std::array<double, 4> box;
    };
    auto cache = [&](const std::vector<ReferSample>& set) {
        std::vector<Cached> out;
        out.reserve(set.size());
        for (const auto& s : set) {
            if (s.box[2] <= 0.0 || s.box[3] <= 0.0) throw DataError("degenerate gold box");
            TokenizedUtterance cond =
                ablate_language ? null_utterance(L)
                                : model.conditioning_utterance(
                                      tokenize(s.expression, model.vocab, L), 0);
            Cached c;
            c.rows = frozen_visual_rows(model, s.image, model.cfg.height, model.cfg.width, cond);
            c.lang = frozen_language_vector(model, cond);
            c.box = s.box;
            out.push_back(std::move(c));
        }
        return out;
    };
    std::vector<Cached> train_set = cache(train);
    std::vector<Cached> eval_set = cache(eval);

    Rng rng = Rng::seeded(cfg.seed).child("refer");
    ReferResult result{ReferHead::create(model.cfg.dim + model.cfg.lang_dim, model.cfg.dim,
                                         kMapHeads, rng),
                       0.0, 0.0};
    AdamW opt(result.head.parameters());
    AdamWHyper hp;
    hp.lr = resolve(cfg.lr, 1e-3);
    hp.weight_decay = cfg.weight_decay;

    auto head_input = [&](const std::vector<Cached>& set, const std::vector<int>& idx) {
        std::vector<Tensor> rows;
        rows.reserve(idx.size());
        for (int i : idx) {
            rows.push_back(concat_cols({result.head.map.pool(set[i].rows), set[i].lang}));
        }
        return concat_rows(rows);
    };

    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng = rng.child("order");
    for (int epoch = 0; epoch < epochs; ++epoch) {
        order_rng.shuffle(order);
        double epoch_loss = 0.0;
        int chunks = 0;
        for (size_t start = 0; start < order.size(); start += batch) {
            std::vector<int> chunk(order.begin() + start,
                                   order.begin() + std::min(order.size(), start + batch));
            std::vector<double> gold;
            gold.reserve(chunk.size() * 4);
            for (int i : chunk) {
                gold.insert(gold.end(), train_set[i].box.begin(), train_set[i].box.end());
            }
            opt.zero_grad();
            GradTape tape;
            Tensor pred = result.head.forward(head_input(train_set, chunk));
            Tensor loss = mean(huber(pred, Tensor::from_values(int(chunk.size()), 4, gold), 1.0));
            tape.backward(loss);
            opt.step(hp);
            epoch_loss += loss.item();
            ++chunks;
        }
        result.loss = epoch_loss / chunks;
    }

    int hits = 0;
    for (size_t i = 0; i < eval_set.size(); ++i) {
        Tensor pred = result.head.forward(head_input(eval_set, {int(i)}));
        std::array<double, 4> box{pred.at(0, 0), pred.at(0, 1), pred.at(0, 2), pred.at(0, 3)};
        hits += box_iou(box, eval_set[i].box) >= 0.25;
    }
    result.accuracy = double(hits) / double(eval_set.size());
    return result;
}

// ---------------------------------------------------------------------------
// Behavior cloning.

namespace {

void put_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<char*>(b), 2);
}
void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 4);
}
void put_f32(std::ostream& os, double v) {
    float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
}
uint16_t take_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return uint16_t(b[0] | (uint16_t(b[1]) << 8));
}
uint32_t take_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
    return v;
}
double take_f32(std::istream& is) {
    uint32_t bits = take_u32(is);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace

void write_demos(const std::string& path, const std::vector<Demo>& demos) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write demo file '" + path + "'");
    os.write("VDEM", 4);
    put_u32(os, 1);
    put_u32(os, uint32_t(demos.size()));
    for (const auto& d : demos) {
        put_u16(os, uint16_t(d.utterance.size()));
        os.write(d.utterance.data(), std::streamsize(d.utterance.size()));
        put_u32(os, uint32_t(d.steps.size()));
        put_u16(os, uint16_t(d.height));
        put_u16(os, uint16_t(d.width));
        uint32_t p_dim = d.steps.empty() ? 0 : uint32_t(d.steps[0].proprio.size());
        uint32_t a_dim = d.steps.empty() ? 0 : uint32_t(d.steps[0].action.size());
        put_u32(os, p_dim);
        put_u32(os, a_dim);
        for (const auto& step : d.steps) {
            if (step.proprio.size() != p_dim || step.action.size() != a_dim ||
                step.frame.size() != size_t(d.height) * d.width * 3) {
                throw DataError("inconsistent step record while writing demos");
            }
            for (double v : step.frame) {
                os.put(char(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
            }
            for (double v : step.proprio) put_f32(os, v);
            for (double v : step.action) put_f32(os, v);
        }
    }
    if (!os) throw DataError("demo write failed for '" + path + "'");
}

std::vector<Demo> read_demos(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open demo file '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "VDEM", 4) != 0) {
        throw DataError("'" + path + "' is not a demo file");
    }
    uint32_t version = take_u32(is);
    if (version != 1) {
        throw DataError("unsupported demo file version " + std::to_string(version));
    }
    std::vector<Demo> demos(take_u32(is));
    for (auto& d : demos) {
        uint16_t ulen = take_u16(is);
        d.utterance.resize(ulen);
        is.read(d.utterance.data(), ulen);
        uint32_t steps = take_u32(is);
        d.height = take_u16(is);
        d.width = take_u16(is);
        uint32_t p_dim = take_u32(is);
        uint32_t a_dim = take_u32(is);
        d.steps.resize(steps);
        const size_t frame_bytes = size_t(d.height) * d.width * 3;
        for (auto& step : d.steps) {
            step.frame.resize(frame_bytes);
            for (size_t i = 0; i < frame_bytes; ++i) {
                step.frame[i] = static_cast<unsigned char>(is.get()) / 255.0;
            }
            step.proprio.resize(p_dim);
            for (auto& v : step.proprio) v = take_f32(is);
            step.action.resize(a_dim);
            for (auto& v : step.action) v = take_f32(is);
        }
        if (!is) throw DataError("truncated demo file '" + path + "'");
    }
    return demos;
}

Tensor BcHead::normalize(const Tensor& x, bool training) {
    const double eps = 1e-5;
    if (training) {
        Tensor mu = mean_rows(x);
        Tensor xc = add_rowvec(x, neg(mu));
        Tensor var = mean_rows(square(xc));
        Tensor xn = mul_rowvec(xc, reciprocal(sqrt(add_scalar(var, eps))));
        const auto& mv = mu.values();
        const auto& vv = var.values();
        for (size_t j = 0; j < running_mean.size(); ++j) {
            running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mv[j];
            running_var[j] = (1.0 - momentum) * running_var[j] + momentum * vv[j];
        }
        return add_rowvec(mul_rowvec(xn, bn_scale), bn_shift);
    }
    std::vector<double> inv(running_var.size());
    for (size_t j = 0; j < inv.size(); ++j) inv[j] = 1.0 / std::sqrt(running_var[j] + eps);
    Tensor mu = Tensor::from_values(1, int(running_mean.size()), running_mean);
    Tensor iv = Tensor::from_values(1, int(inv.size()), inv);
    Tensor xn = mul_rowvec(add_rowvec(x, neg(mu)), iv);
    return add_rowvec(mul_rowvec(xn, bn_scale), bn_shift);
}

Tensor BcHead::forward(const Tensor& features, bool training) {
    Tensor x = normalize(features, training);
    return l2.forward(relu(l1.forward(x)));
}

std::vector<Tensor> BcHead::parameters() const {
    std::vector<Tensor> params;
    if (pool == PoolKind::Map) map.collect(params);
    params.push_back(bn_scale);
    params.push_back(bn_shift);
    l1.collect(params);
    l2.collect(params);
    return params;
}

namespace {

struct BcSample {
    Tensor rows;     // visual rows (Map) — undefined for Mean
    Tensor pooled;   // fixed 1 x d mean feature (Mean)
    Tensor lang;     // optional 1 x lang_dim
    std::vector<double> proprio;
    std::vector<double> action;
};

Tensor bc_input(const BcHead& head, const std::vector<BcSample>& set,
                const std::vector<int>& idx, bool use_language) {
    std::vector<Tensor> rows;
    rows.reserve(idx.size());
    for (int i : idx) {
        const BcSample& s = set[i];
        Tensor feat = head.pool == PoolKind::Map ? head.map.pool(s.rows) : s.pooled;
        std::vector<Tensor> parts{feat};
        if (use_language) parts.push_back(s.lang);
        parts.push_back(Tensor::from_values(1, int(s.proprio.size()), s.proprio));
        rows.push_back(concat_cols(parts));
    }
    return concat_rows(rows);
}

}  // namespace

BcResult bc_adapt(const VoltronModel& model, const std::vector<Demo>& demos,
                  BcProfile profile, PoolKind pool, const AdaptConfig& cfg,
                  bool use_language) {
    if (demos.empty()) throw DataError("behavior cloning needs at least one demonstration");
    const int L = model.cfg.caption_len;
    size_t p_dim = demos[0].steps.empty() ? 0 : demos[0].steps[0].proprio.size();
    size_t a_dim = demos[0].steps.empty() ? 0 : demos[0].steps[0].action.size();

    std::vector<BcSample> samples;
    for (const auto& d : demos) {
        TokenizedUtterance cond =
            use_language ? model.conditioning_utterance(tokenize(d.utterance, model.vocab, L), 0)
                         : null_utterance(L);
        Tensor lang = frozen_language_vector(model, cond);
        for (const auto& step : d.steps) {
            if (step.proprio.size() != p_dim || step.action.size() != a_dim) {
                throw DataError("demonstrations disagree on proprio/action dimensions");
            }
            BcSample s;
            s.rows = frozen_visual_rows(model, step.frame, d.height, d.width, cond);
            if (pool == PoolKind::Mean) s.pooled = mean_pool(s.rows).detach();
            s.lang = lang;
            s.proprio = step.proprio;
            s.action = step.action;
            samples.push_back(std::move(s));
        }
    }
    if (samples.empty() || a_dim == 0) throw DataError("demonstrations contain no usable steps");

    const bool simulated = profile == BcProfile::Simulated;
    const int width = simulated ? 256 : 64;
    const int batch = resolve(cfg.batch_size, simulated ? 32 : 256);
    const int in_dim = model.cfg.dim + (use_language ? model.cfg.lang_dim : 0) + int(p_dim);

    Rng rng = Rng::seeded(cfg.seed).child("bc");
    BcHead head;
    head.pool = pool;
    head.map = MapPool::create(1, model.cfg.dim, kMapHeads, rng);
    head.bn_scale = Tensor::full(1, in_dim, 1.0);
    head.bn_shift = Tensor::zeros(1, in_dim);
    head.bn_scale.set_requires_grad(true);
    head.bn_shift.set_requires_grad(true);
    head.running_mean.assign(size_t(in_dim), 0.0);
    head.running_var.assign(size_t(in_dim), 1.0);
    head.l1 = Linear::create(in_dim, width, rng);
    head.l2 = Linear::create(width, int(a_dim), rng);

    AdamW opt(head.parameters());
    AdamWHyper hp;
    hp.lr = resolve(cfg.lr, 1e-3);
    hp.weight_decay = cfg.weight_decay;

    auto run_batch = [&](const std::vector<int>& idx) {
        std::vector<double> gold;
        gold.reserve(idx.size() * a_dim);
        for (int i : idx) {
            gold.insert(gold.end(), samples[i].action.begin(), samples[i].action.end());
        }
        opt.zero_grad();
        GradTape tape;
        Tensor pred = head.forward(bc_input(head, samples, idx, use_language), true);
        Tensor loss =
            mean(square(sub(pred, Tensor::from_values(int(idx.size()), int(a_dim), gold))));
        tape.backward(loss);
        opt.step(hp);
        return loss.item();
    };

    double final_mse = 0.0;
    if (simulated) {
        const int steps = resolve(cfg.steps, 20000);
        Rng pick = rng.child("batch");
        for (int s = 0; s < steps; ++s) {
            std::vector<int> idx(size_t(std::min<int>(batch, int(samples.size()))));
            for (auto& i : idx) i = int(pick.uniform_int(int64_t(samples.size())));
            final_mse = run_batch(idx);
        }
    } else {
        const int epochs = resolve(cfg.epochs, 10);
        std::vector<int> order(samples.size());
        std::iota(order.begin(), order.end(), 0);
        Rng order_rng = rng.child("order");
        for (int epoch = 0; epoch < epochs; ++epoch) {
            order_rng.shuffle(order);
            for (size_t start = 0; start < order.size(); start += batch) {
                std::vector<int> chunk(order.begin() + start,
                                       order.begin() + std::min(order.size(), start + batch));
                final_mse = run_batch(chunk);
            }
        }
    }
    return BcResult{std::move(head), final_mse};
}

std::vector<double> bc_policy_action(const VoltronModel& model, BcHead& head,
                                     const std::vector<double>& frame, int height,
                                     int width, const std::vector<double>& proprio,
                                     const std::string& utterance, bool use_language) {
    const int L = model.cfg.caption_len;
    TokenizedUtterance cond =
        use_language ? model.conditioning_utterance(tokenize(utterance, model.vocab, L), 0)
                     : null_utterance(L);
    Tensor rows = frozen_visual_rows(model, frame, height, width, cond);
    Tensor feat = head.pool == PoolKind::Map ? head.map.pool(rows) : mean_pool(rows);
    std::vector<Tensor> parts{feat};
    if (use_language) parts.push_back(frozen_language_vector(model, cond));
    parts.push_back(Tensor::from_values(1, int(proprio.size()), proprio));
    Tensor out = head.forward(concat_cols(parts), false);
    return out.values();
}

// ---------------------------------------------------------------------------
// Intent scoring.

std::vector<IntentPoint> intent_curve(const VoltronModel& model,
                                      const std::vector<std::vector<double>>& frames,
                                      int height, int width,
                                      const TokenizedUtterance& utterance, int stride) {
    if (model.cfg.variant != Variant::VGen) {
        throw CapabilityError("intent scoring needs a generation-trained (v-gen) model");
    }
    if (stride < 1) throw ConfigError("frame stride must be positive");
    if (frames.empty()) throw DataError("no frames to score");
    const TokenizedUtterance null = null_utterance(model.cfg.caption_len);

    // The generator only ever sees gamma-masked inputs during training, so it
    // is queried the same way here: the score is the mean over a fixed set of
    // mask draws, shared across frame positions so equal frames score equally.
    const int draws = 8;
    Rng mask_rng = Rng::seeded(0x5c09e).child("intent-masks");
    std::vector<MaskSpec> masks;
    masks.reserve(draws);
    for (int m = 0; m < draws; ++m) {
        masks.push_back(make_mask(model.cfg.regions(), model.cfg.gamma, mask_rng));
    }

    std::vector<IntentPoint> curve;
    for (int f = 0; f < int(frames.size()); f += stride) {
        FrameContext ctx;
        ctx.height = height;
        ctx.width = width;
        if (model.cfg.k == 2) {
            ctx.frame_indices = {0, f};
            ctx.frames = {frames[0], frames[f]};
        } else {
            ctx.frame_indices = {f};
            ctx.frames = {frames[f]};
        }
        ctx.tokens = null;
        double sum = 0.0;
        for (const MaskSpec& mask : masks) {
            EncodedSequence h = model.encoder.encode(ctx, &mask, null);
            Tensor logits = model.decoder.generate_logits(h, utterance);
            sum += score_from_logits(logits, utterance).per_token();
        }
        curve.push_back({f, sum / draws});
    }
    return curve;
}

}  // namespace voltron
