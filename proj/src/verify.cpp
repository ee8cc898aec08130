#include "voltron/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "voltron/adaptation.hpp"
#include "voltron/error.hpp"
#include "voltron/fixtures.hpp"
#include "voltron/nn.hpp"
#include "voltron/rng.hpp"

namespace fs = std::filesystem;

namespace voltron {
namespace {

struct PrecisionScope {
    Precision saved;
    explicit PrecisionScope(Precision p) : saved(precision()) { set_precision(p); }
    ~PrecisionScope() { set_precision(saved); }
};

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

std::vector<double> random_frame(int height, int width, Rng& rng) {
    std::vector<double> f(static_cast<size_t>(height) * width * 3);
    for (auto& v : f) v = rng.uniform();
    return f;
}

FrameContext random_context(const ModelConfig& cfg, Rng& rng) {
    FrameContext ctx;
    ctx.height = cfg.height;
    ctx.width = cfg.width;
    for (int i = 0; i < cfg.k; ++i) {
        ctx.frame_indices.push_back(i);
        ctx.frames.push_back(random_frame(cfg.height, cfg.width, rng));
    }
    return ctx;
}

// A properly framed caption with random word ids; semantics don't matter.
TokenizedUtterance random_caption(const ModelConfig& cfg, Rng& rng) {
    TokenizedUtterance u;
    u.ids.assign(cfg.caption_len, Vocabulary::kPad);
    u.length_mask.assign(cfg.caption_len, 0);
    int words = 1 + static_cast<int>(rng.uniform_int(cfg.caption_len - 2));
    u.ids[0] = Vocabulary::kBos;
    for (int i = 1; i <= words; ++i)
        u.ids[i] = Vocabulary::kReserved +
                   static_cast<int>(rng.uniform_int(cfg.vocab_size - Vocabulary::kReserved));
    u.ids[words + 1] = Vocabulary::kEos;
    for (int i = 0; i <= words + 1; ++i) u.length_mask[i] = 1;
    return u;
}

// Draws gamma until round(gamma * regions) lands strictly inside (0, regions).
double usable_gamma(int regions, Rng& rng) {
    for (;;) {
        double gamma = 0.05 + 0.9 * rng.uniform();
        long dropped = std::lround(gamma * regions);
        if (dropped >= 1 && dropped < regions) return gamma;
    }
}

}  // namespace

ModelConfig toy_config(Variant v) {
    ModelConfig c = ModelConfig::desk(v);
    c.caption_len = 8;
    return c;
}

Vocabulary toy_vocab(int target_size) {
    std::ostringstream words;
    for (int i = 0; i + Vocabulary::kReserved < target_size; ++i) words << " word" << i;
    return Vocabulary::build({words.str()}, target_size);
}

CheckResult check_shape_law(int trials, uint64_t seed) {
    CheckResult r{"shape-law", true, ""};
    Rng rng = Rng::seeded(seed).child("shape");
    const int patch_sizes[3] = {2, 4, 8};
    for (int t = 0; t < trials; ++t) {
        ModelConfig cfg;
        cfg.dim = 8;
        cfg.depth = 1;
        cfg.heads = 2;
        cfg.caption_len = 4;
        cfg.vocab_size = 8;
        cfg.lang_dim = 16;
        cfg.dec_dim = 8;
        cfg.dec_depth = 1;
        cfg.dec_heads = 2;
        cfg.patch = patch_sizes[rng.uniform_int(3)];
        int gh = 1 + static_cast<int>(rng.uniform_int(6));
        int gw = 1 + static_cast<int>(rng.uniform_int(6));
        if (gh * gw < 2) gw = 2;
        cfg.height = gh * cfg.patch;
        cfg.width = gw * cfg.patch;
        cfg.k = 1 + static_cast<int>(rng.uniform_int(2));
        cfg.variant = cfg.k == 1 ? Variant::VCond : Variant::VDual;
        int regions = gh * gw;
        cfg.gamma = usable_gamma(regions, rng);
        cfg.validate();

        Vocabulary vocab = toy_vocab(cfg.vocab_size);
        Rng init = Rng::seeded(seed).child("init", t);
        Encoder enc = Encoder::create(cfg, vocab, init);

        MaskSpec mask = make_mask(regions, cfg.gamma, rng);
        int kept = static_cast<int>(std::count(mask.keep.begin(), mask.keep.end(), 1));
        long dropped = std::lround(cfg.gamma * regions);
        if (regions - kept != dropped) {
            r.passed = false;
            r.detail = "trial " + std::to_string(t) + ": mask dropped " +
                       std::to_string(regions - kept) + " regions, expected round(gamma*|R|)=" +
                       std::to_string(dropped);
            return r;
        }

        FrameContext ctx = random_context(cfg, rng);
        EncodedSequence h = enc.encode(ctx, &mask, null_utterance(cfg.caption_len));
        int expected = cfg.k * (regions - static_cast<int>(dropped));
        if (h.visual_row_count() != expected || h.h.rows() != expected + cfg.caption_len) {
            r.passed = false;
            r.detail = "trial " + std::to_string(t) + ": k=" + std::to_string(cfg.k) +
                       " |R|=" + std::to_string(regions) + " gamma=" + fmt(cfg.gamma) +
                       " gave " + std::to_string(h.visual_row_count()) +
                       " visual rows, expected " + std::to_string(expected);
            return r;
        }
    }
    r.detail = std::to_string(trials) +
               " random configurations match k*(|R| - round(gamma*|R|)) exactly";
    return r;
}

CheckResult check_mask_nonleakage(int trials, uint64_t seed) {
    CheckResult r{"mask-nonleakage", true, ""};
    Rng rng = Rng::seeded(seed).child("leak");
    for (int t = 0; t < trials; ++t) {
        ModelConfig cfg;
        cfg.dim = 16;
        cfg.depth = 1;
        cfg.heads = 2;
        cfg.patch = 8;
        cfg.caption_len = 6;
        cfg.vocab_size = 16;
        cfg.lang_dim = 32;
        cfg.dec_dim = 8;
        cfg.dec_depth = 1;
        cfg.dec_heads = 2;
        int gh = 2 + static_cast<int>(rng.uniform_int(3));
        int gw = 2 + static_cast<int>(rng.uniform_int(3));
        cfg.height = gh * cfg.patch;
        cfg.width = gw * cfg.patch;
        cfg.k = 1 + static_cast<int>(rng.uniform_int(2));
        cfg.variant = cfg.k == 1 ? Variant::VCond : Variant::VDual;
        int regions = gh * gw;
        cfg.gamma = usable_gamma(regions, rng);
        cfg.validate();

        Vocabulary vocab = toy_vocab(cfg.vocab_size);
        Rng init = Rng::seeded(seed).child("init", t);
        Encoder enc = Encoder::create(cfg, vocab, init);

        FrameContext ctx = random_context(cfg, rng);
        TokenizedUtterance cond =
            t % 2 == 0 ? null_utterance(cfg.caption_len) : random_caption(cfg, rng);
        MaskSpec mask = make_mask(regions, cfg.gamma, rng);
        EncodedSequence a = enc.encode(ctx, &mask, cond);

        FrameContext altered = ctx;
        for (int rgn = 0; rgn < regions; ++rgn) {
            if (mask.keep[rgn]) continue;
            int ry = rgn / gw, rx = rgn % gw;
            for (auto& frame : altered.frames)
                for (int y = ry * cfg.patch; y < (ry + 1) * cfg.patch; ++y)
                    for (int x = rx * cfg.patch; x < (rx + 1) * cfg.patch; ++x)
                        for (int c = 0; c < 3; ++c)
                            frame[(static_cast<size_t>(y) * cfg.width + x) * 3 + c] =
                                rng.uniform();
        }
        EncodedSequence b = enc.encode(altered, &mask, cond);
        if (a.h.values() != b.h.values()) {
            r.passed = false;
            r.detail = "trial " + std::to_string(t) +
                       ": rewriting dropped regions changed the encoding";
            return r;
        }
    }
    r.detail = std::to_string(trials) +
               " encodes bit-identical after rewriting every dropped region";
    return r;
}

CheckResult check_prefix_causality(int caption_len, bool inject_fault) {
    CheckResult r{"causality", true, ""};
    ModelConfig cfg = toy_config(Variant::VGen);
    cfg.caption_len = caption_len;
    cfg.validate();
    Vocabulary vocab = toy_vocab(cfg.vocab_size);
    VoltronModel model = VoltronModel::create(cfg, vocab);

    Rng rng = Rng::seeded(33).child("causality", static_cast<uint64_t>(caption_len));
    FrameContext ctx = random_context(cfg, rng);
    EncodedSequence h = model.encoder.encode(ctx, nullptr, null_utterance(caption_len));

    TokenizedUtterance teacher;
    teacher.ids.assign(caption_len, 0);
    teacher.length_mask.assign(caption_len, 1);
    teacher.ids[0] = Vocabulary::kBos;
    for (int i = 1; i + 1 < caption_len; ++i)
        teacher.ids[i] = Vocabulary::kReserved +
                         static_cast<int>(rng.uniform_int(cfg.vocab_size - Vocabulary::kReserved));
    teacher.ids[caption_len - 1] = Vocabulary::kEos;

    const AttentionMask* hook = nullptr;
    AttentionMask bad;
    if (inject_fault) {
        // Let the first language row peek one token ahead.
        bad = build_prefix_mask(h.visual_row_count(), caption_len);
        bad.set(h.visual_row_count(), h.visual_row_count() + 1, true);
        hook = &bad;
    }

    Tensor base = model.decoder.generate_logits(h, teacher, hook);
    int vcols = base.cols();
    for (int m = 1; m < caption_len; ++m) {
        TokenizedUtterance mod = teacher;
        mod.ids[m] = mod.ids[m] == Vocabulary::kReserved ? Vocabulary::kReserved + 1
                                                         : Vocabulary::kReserved;
        Tensor out = model.decoder.generate_logits(h, mod, hook);
        for (size_t i = 0; i < static_cast<size_t>(m) * vcols; ++i) {
            if (base.values()[i] != out.values()[i]) {
                r.passed = false;
                r.detail = "causality violated: perturbing teacher token " + std::to_string(m) +
                           " changed logits row " + std::to_string(i / vcols);
                return r;
            }
        }
    }
    r.detail = "exhaustive prefix check at L=" + std::to_string(caption_len) +
               ": earlier logit rows bit-identical under every token perturbation";
    return r;
}

CheckResult check_pooling_invariance(uint64_t seed) {
    CheckResult r{"pooling", true, ""};
    PrecisionScope scope(Precision::f32);
    Rng rng = Rng::seeded(seed).child("pool");
    const int d = 16, n = 10;

    MapPool map = MapPool::create(2, d, 4, rng);
    Tensor rows = trunc_normal(n, d, 1.0, rng);
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    Tensor pooled = map.pool(rows);
    Tensor permuted = map.pool(gather_rows(rows, perm));
    if (pooled.values() != permuted.values()) {
        r.passed = false;
        r.detail = "attention pooling changed under a row permutation";
        return r;
    }

    MapPool single = MapPool::create(1, d, 4, rng);
    Tensor one = trunc_normal(1, d, 1.0, rng);
    Tensor direct = rmsnorm(matmul(matmul(one, single.wv), single.wo), single.out_scale);
    if (single.pool(one).values() != direct.values()) {
        r.passed = false;
        r.detail = "single-row attention pooling differs from rmsnorm((row Wv) Wo)";
        return r;
    }

    Tensor row = trunc_normal(1, d, 1.0, rng);
    Tensor stacked = concat_rows({row, row, row, row, row});
    if (mean_pool(stacked).values() != row.values()) {
        r.passed = false;
        r.detail = "mean pooling of identical rows is not that row";
        return r;
    }

    Tensor opposed = mean_pool(concat_rows({row, scale(row, -1.0)}));
    for (double v : opposed.values()) {
        if (v != 0.0) {
            r.passed = false;
            r.detail = "mean pooling of a row and its negation is not exactly zero";
            return r;
        }
    }

    Tensor any = trunc_normal(7, d, 1.0, rng);
    Tensor mean = mean_pool(any);
    for (int c = 0; c < d; ++c) {
        double acc = 0.0;
        for (int i = 0; i < 7; ++i) acc += any.values()[static_cast<size_t>(i) * d + c];
        if (mean.values()[c] != static_cast<double>(static_cast<float>(acc / 7.0))) {
            r.passed = false;
            r.detail = "mean pooling differs from a direct loop at column " + std::to_string(c);
            return r;
        }
    }

    r.detail = "permutation, single-row, identical-rows, cancellation and direct-loop "
               "cases all bit-exact";
    return r;
}

CheckResult check_grad_correctness() {
    CheckResult r{"grad-check", false, ""};
    PrecisionScope scope(Precision::f64);
    Timer timer;

    ModelConfig cfg = toy_config(Variant::VGen);
    cfg.validate();
    Vocabulary vocab = toy_vocab(cfg.vocab_size);
    VoltronModel model = VoltronModel::create(cfg, vocab);

    Rng rng = Rng::seeded(99).child("gradcheck");
    std::vector<BatchItem> batch;
    for (int gate = 0; gate <= 1; ++gate) {
        BatchItem item;
        item.ctx = random_context(cfg, rng);
        item.ctx.tokens = random_caption(cfg, rng);
        item.mask = make_mask(cfg.regions(), cfg.gamma, rng);
        item.gate = gate;
        batch.push_back(std::move(item));
    }

    std::vector<Tensor> params = model.trainable_parameters();
    auto loss = [&]() { return compute_loss(model, batch).total; };
    GradCheckReport rep = grad_check(loss, params, 1e-5, 2, rng);

    r.passed = rep.max_rel_err <= 1e-3;
    r.detail = "max relative error " + fmt(rep.max_rel_err) + " over " +
               std::to_string(rep.entries_checked) + " sampled entries in " +
               fmt(timer.seconds()) + "s";
    return r;
}

LossBreakdown eval_losses(const VoltronModel& model, Corpus& corpus, uint64_t seed,
                          int contexts_per_clip, int gate) {
    if (corpus.clips.empty()) throw DataError("eval corpus has no clips");
    tokenize_corpus(corpus, model.vocab, model.cfg.caption_len);
    Rng rng = Rng::seeded(seed).child("eval");
    std::vector<BatchItem> items;
    for (const ClipRecord& clip : corpus.clips) {
        for (int i = 0; i < contexts_per_clip; ++i) {
            BatchItem item;
            item.ctx = sample_frame_context(clip, model.cfg.k, rng);
            item.mask = make_mask(model.cfg.regions(), model.cfg.gamma, rng);
            item.gate = gate;
            items.push_back(std::move(item));
        }
    }
    return compute_loss(model, items);
}

CheckResult check_overfit_reconstruction(const std::string& scratch_dir) {
    CheckResult r{"overfit-reconstruction", false, ""};
    Timer timer;
    fs::create_directories(scratch_dir);
    std::string corpus_dir = scratch_dir + "/colors";
    write_color_corpus(corpus_dir, 8, 5, 32, 32, 11);

    RunConfig run;
    run.model = toy_config(Variant::VCond);
    run.model.seed = 11;
    run.corpus_dir = corpus_dir;
    run.out_dir = scratch_dir + "/run";
    run.epochs = 400;
    run.batch_size = 8;
    run.frames_per_clip = 5;
    run.lr = 3e-3;
    run.weight_decay = 0.0;
    fs::remove_all(run.out_dir);
    TrainResult res = train(run);

    Corpus corpus = load_corpus(corpus_dir);
    LossBreakdown ev = eval_losses(res.model, corpus, 1234, 4, 0);
    r.passed = ev.mse_mean <= 0.05 && res.steps <= 2000;
    r.detail = "masked-reconstruction mse " + fmt(ev.mse_mean) + " after " +
               std::to_string(res.steps) + " steps (" + fmt(timer.seconds()) + "s)";
    return r;
}

CheckResult check_overfit_generation(const std::string& scratch_dir) {
    CheckResult r{"overfit-generation", false, ""};
    Timer timer;
    fs::create_directories(scratch_dir);
    std::string corpus_dir = scratch_dir + "/colors";
    write_color_corpus(corpus_dir, 8, 5, 32, 32, 13);

    RunConfig run;
    run.model = toy_config(Variant::VGen);
    run.model.seed = 13;
    run.corpus_dir = corpus_dir;
    run.out_dir = scratch_dir + "/run";
    run.epochs = 800;
    run.batch_size = 8;
    run.frames_per_clip = 5;
    run.lr = 3e-3;
    run.weight_decay = 0.0;
    fs::remove_all(run.out_dir);
    TrainResult res = train(run);

    Corpus corpus = load_corpus(corpus_dir);
    LossBreakdown ev = eval_losses(res.model, corpus, 4321, 4, 1);
    r.passed = ev.nll_mean <= 0.1 && res.steps <= 4000;
    r.detail = "caption nll " + fmt(ev.nll_mean) + " after " + std::to_string(res.steps) +
               " steps (" + fmt(timer.seconds()) + "s)";
    return r;
}

bool VerifyReport::all_passed() const {
    for (const CheckResult& c : checks)
        if (!c.passed) return false;
    return true;
}

const CheckResult* VerifyReport::find(const std::string& name) const {
    for (const CheckResult& c : checks)
        if (c.name == name) return &c;
    return nullptr;
}

VerifyReport run_verify(VerifyLevel level, const std::string& scratch_dir,
                        bool inject_causality_fault) {
    std::string scratch = scratch_dir.empty()
                              ? (fs::temp_directory_path() / "voltron-verify").string()
                              : scratch_dir;
    VerifyReport report;
    report.checks.push_back(check_shape_law(40, 5));
    report.checks.push_back(check_mask_nonleakage(20, 6));
    report.checks.push_back(check_prefix_causality(12, inject_causality_fault));
    report.checks.push_back(check_pooling_invariance(7));
    if (level == VerifyLevel::Full) {
        report.checks.push_back(check_grad_correctness());
        report.checks.push_back(check_overfit_reconstruction(scratch + "/recon"));
        report.checks.push_back(check_overfit_generation(scratch + "/gen"));
    }
    return report;
}

}  // namespace voltron
