#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "voltron/checkpoint.hpp"
#include "voltron/error.hpp"
#include "voltron/fixtures.hpp"
#include "voltron/model.hpp"
#include "voltron/objective.hpp"
#include "voltron/verify.hpp"

using namespace voltron;
namespace fs = std::filesystem;

namespace {

struct PrecisionGuard {
    Precision saved;
    explicit PrecisionGuard(Precision p) : saved(precision()) { set_precision(p); }
    ~PrecisionGuard() { set_precision(saved); }
};

fs::path scratch_dir(const std::string& leaf) {
    fs::path dir = fs::temp_directory_path() / "voltron-objective-tests" / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("gate sampling follows the mixing rate") {
    Rng rng = Rng::seeded(99).child("gate");

    SUBCASE("degenerate rates are exact") {
        Rng r0 = rng;
        Rng r1 = rng;
        for (int i = 0; i < 200; ++i) {
            CHECK(sample_gate(0.0, r0) == 0);
            CHECK(sample_gate(1.0, r1) == 1);
        }
    }

    SUBCASE("alpha 0.5 is near-balanced over many draws") {
        int ones = 0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) ones += sample_gate(0.5, rng);
        double rate = double(ones) / n;
        // Binomial(20000, 0.5) has sigma ~ 0.0035; 5 sigma leaves headroom.
        CHECK(rate > 0.48);
        CHECK(rate < 0.52);
    }

    SUBCASE("out-of-range rates are rejected") {
        CHECK_THROWS_AS(sample_gate(-0.1, rng), ConfigError);
        CHECK_THROWS_AS(sample_gate(1.5, rng), ConfigError);
    }
}

TEST_CASE("learning-rate schedule warms up then decays to zero") {
    const double peak = 2.0;
    const int64_t warmup = 10;
    const int64_t total = 50;

    SUBCASE("linear warmup") {
        CHECK(lr_schedule(0, warmup, total, peak) == doctest::Approx(0.0));
        CHECK(lr_schedule(5, warmup, total, peak) == doctest::Approx(peak * 0.5));
        CHECK(lr_schedule(10, warmup, total, peak) == doctest::Approx(peak));
    }

    SUBCASE("cosine decay hits zero at the end") {
        // Midpoint of the decay span sits at half the peak.
        CHECK(lr_schedule(30, warmup, total, peak) == doctest::Approx(peak * 0.5));
        CHECK(lr_schedule(total, warmup, total, peak) == doctest::Approx(0.0));
    }

    SUBCASE("monotone up then down") {
        for (int64_t s = 1; s <= warmup; ++s)
            CHECK(lr_schedule(s, warmup, total, peak) >
                  lr_schedule(s - 1, warmup, total, peak));
        for (int64_t s = warmup + 1; s <= total; ++s)
            CHECK(lr_schedule(s, warmup, total, peak) <
                  lr_schedule(s - 1, warmup, total, peak));
    }

    SUBCASE("degenerate spans are rejected") {
        CHECK_THROWS_AS(lr_schedule(0, 0, 0, peak), ConfigError);
        CHECK_THROWS_AS(lr_schedule(0, 5, -1, peak), ConfigError);
        // Past the end the rate pins at zero regardless of warmup.
        CHECK(lr_schedule(7, 5, 4, peak) == 0.0);
    }
}

TEST_CASE("optimizer step matches the hand-computed update") {
    // One parameter, one step: m = (1-b1) g, v = (1-b2) g^2, bias-corrected,
    // then the decoupled weight-decay term.
    PrecisionGuard guard(Precision::f64);
    Tensor p = Tensor::from_values(2, 1, {0.5, -1.25}, true);
    AdamW opt({p});

    AdamWHyper hp;
    hp.lr = 0.1;
    hp.beta1 = 0.9;
    hp.beta2 = 0.95;
    hp.eps = 1e-8;
    hp.weight_decay = 0.01;

    std::vector<double> g = {0.3, -0.7};
    p.node()->grad = g;
    opt.step(hp);

    for (int i = 0; i < 2; ++i) {
        double m = (1 - hp.beta1) * g[i];
        double v = (1 - hp.beta2) * g[i] * g[i];
        double mhat = m / (1 - hp.beta1);
        double vhat = v / (1 - hp.beta2);
        double w0 = i == 0 ? 0.5 : -1.25;
        double want = w0 - hp.lr * (mhat / (std::sqrt(vhat) + hp.eps) + hp.weight_decay * w0);
        CHECK(p.values()[i] == doctest::Approx(want).epsilon(1e-12));
        CHECK(opt.first_moment(0)[i] == doctest::Approx(m).epsilon(1e-12));
        CHECK(opt.second_moment(0)[i] == doctest::Approx(v).epsilon(1e-12));
    }
    CHECK(opt.step_count() == 1);

    SUBCASE("second step keeps compounding the moments") {
        std::vector<double> got1 = p.values();
        p.node()->grad = g;
        opt.step(hp);
        CHECK(opt.step_count() == 2);
        // With a repeated gradient the step direction is unchanged, so the
        // parameter keeps moving the same way (plus decay toward zero).
        CHECK(std::abs(p.values()[0] - got1[0]) > 0.0);
        CHECK(p.values()[0] < got1[0]);
        CHECK(p.values()[1] > got1[1]);
    }
}

TEST_CASE("optimizer housekeeping") {
    SUBCASE("frozen tensors are rejected from the parameter list") {
        Tensor frozen = Tensor::from_values(1, 1, {1.0}, false);
        CHECK_THROWS_AS(AdamW({frozen}), ContractError);
    }

    SUBCASE("non-finite gradients abort the step") {
        Tensor p = Tensor::from_values(1, 2, {1.0, 2.0}, true);
        AdamW opt({p});
        p.node()->grad = {1.0, std::numeric_limits<double>::quiet_NaN()};
        CHECK_THROWS_AS(opt.step(AdamWHyper{}), NumericsError);
    }

    SUBCASE("zero_grad clears accumulated gradients") {
        Tensor p = Tensor::from_values(1, 2, {1.0, 2.0}, true);
        AdamW opt({p});
        p.node()->grad = {3.0, 4.0};
        opt.zero_grad();
        CHECK(!p.has_grad());
    }

    SUBCASE("restore swaps in external moments") {
        Tensor p = Tensor::from_values(1, 1, {1.0}, true);
        AdamW opt({p});
        opt.restore(0, {0.25}, {0.5});
        CHECK(opt.first_moment(0)[0] == 0.25);
        CHECK(opt.second_moment(0)[0] == 0.5);
    }
}

TEST_CASE("gradient clipping reports and bounds the global norm") {
    PrecisionGuard guard(Precision::f64);
    Tensor a = Tensor::from_values(1, 2, {0.0, 0.0}, true);
    Tensor b = Tensor::from_values(1, 1, {0.0}, true);
    a.node()->grad = {3.0, 0.0};
    b.node()->grad = {4.0};
    // Global norm sqrt(9 + 16) = 5.

    SUBCASE("above the cap: scaled down to max_norm") {
        double pre = clip_grad_norm({a, b}, 1.0);
        CHECK(pre == doctest::Approx(5.0));
        CHECK(a.grad()[0] == doctest::Approx(3.0 / 5.0));
        CHECK(b.grad()[0] == doctest::Approx(4.0 / 5.0));
        double post = clip_grad_norm({a, b}, 10.0);
        CHECK(post == doctest::Approx(1.0));
    }

    SUBCASE("below the cap: untouched") {
        double pre = clip_grad_norm({a, b}, 100.0);
        CHECK(pre == doctest::Approx(5.0));
        CHECK(a.grad()[0] == 3.0);
        CHECK(b.grad()[0] == 4.0);
    }

    SUBCASE("non-positive cap disables clipping") {
        double pre = clip_grad_norm({a, b}, 0.0);
        CHECK(pre == doctest::Approx(5.0));
        CHECK(b.grad()[0] == 4.0);
    }
}

TEST_CASE("batch loss respects the gate contract") {
    ModelConfig cond = toy_config(Variant::VCond);
    Vocabulary vocab = toy_vocab(cond.vocab_size);
    VoltronModel model = VoltronModel::create(cond, vocab);

    fs::path dir = scratch_dir("loss-gate");
    write_color_corpus((dir / "corpus").string(), 2, 3, cond.height, cond.width, 7);
    Corpus corpus = load_corpus((dir / "corpus").string());
    tokenize_corpus(corpus, vocab, cond.caption_len);

    Rng rng = Rng::seeded(5);
    Rng data = rng.child("data");
    Rng maskr = rng.child("mask");

    BatchItem item;
    item.ctx = sample_frame_context(corpus.clips[0], cond.k, data);
    item.mask = make_mask(cond.regions(), cond.gamma, maskr);
    item.gate = 0;

    SUBCASE("gate 0 on a reconstruction-only variant works") {
        LossBreakdown loss = compute_loss(model, {item});
        CHECK(loss.examples == 1);
        CHECK(loss.gate_rate == 0.0);
        CHECK(loss.mse_mean > 0.0);
        CHECK(loss.nll_mean == 0.0);
        CHECK(loss.total.item() == doctest::Approx(loss.mse_mean).epsilon(1e-6));
    }

    SUBCASE("gate 1 outside the generative variant is a contract error") {
        item.gate = 1;
        CHECK_THROWS_AS(compute_loss(model, {item}), ContractError);
    }

    SUBCASE("empty batches are rejected") {
        CHECK_THROWS_AS(compute_loss(model, {}), ContractError);
    }
}

TEST_CASE("generative batches mix reconstruction and caption losses") {
    ModelConfig gen = toy_config(Variant::VGen);
    Vocabulary vocab = toy_vocab(gen.vocab_size);
    VoltronModel model = VoltronModel::create(gen, vocab);

    fs::path dir = scratch_dir("loss-gen");
    write_color_corpus((dir / "corpus").string(), 2, 3, gen.height, gen.width, 8);
    Corpus corpus = load_corpus((dir / "corpus").string());
    tokenize_corpus(corpus, vocab, gen.caption_len);

    Rng rng = Rng::seeded(6);
    Rng data = rng.child("data");
    Rng maskr = rng.child("mask");

    std::vector<BatchItem> batch(2);
    for (int i = 0; i < 2; ++i) {
        batch[i].ctx = sample_frame_context(corpus.clips[i], gen.k, data);
        batch[i].mask = make_mask(gen.regions(), gen.gamma, maskr);
        batch[i].gate = i;  // one plain, one gated
    }

    LossBreakdown loss = compute_loss(model, batch);
    CHECK(loss.examples == 2);
    CHECK(loss.gate_rate == doctest::Approx(0.5));
    CHECK(loss.mse_mean > 0.0);
    CHECK(loss.nll_mean > 0.0);
    // An untrained model scores captions near the uniform baseline.
    CHECK(loss.nll_mean == doctest::Approx(std::log(gen.vocab_size)).epsilon(0.5));
    CHECK(loss.total.item() > loss.mse_mean * 0.5);
}

TEST_CASE("training run writes metrics, epoch indices, and a checkpoint") {
    fs::path dir = scratch_dir("train-smoke");
    write_color_corpus((dir / "corpus").string(), 3, 3, 32, 32, 21);

    RunConfig cfg;
    cfg.model = toy_config(Variant::VCond);
    cfg.model.seed = 21;
    cfg.corpus_dir = (dir / "corpus").string();
    cfg.out_dir = (dir / "run").string();
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.frames_per_clip = 2;
    cfg.lr = 1e-3;
    cfg.weight_decay = 0.0;

    TrainResult result = train(cfg);

    SUBCASE("reported paths exist and counters add up") {
        CHECK(fs::exists(result.checkpoint_path));
        CHECK(fs::exists(result.metrics_path));
        // 3 clips x 2 contexts = 6 items per epoch, batches of 4 -> 2 steps.
        CHECK(result.steps == 4);
        CHECK(result.final_mse > 0.0);
        CHECK(result.final_nll == 0.0);
    }

    SUBCASE("metrics header round-trips the run configuration") {
        RunConfig echoed = parse_metrics_header(result.metrics_path);
        CHECK(echoed.epochs == cfg.epochs);
        CHECK(echoed.batch_size == cfg.batch_size);
        CHECK(echoed.frames_per_clip == cfg.frames_per_clip);
        CHECK(echoed.lr == doctest::Approx(cfg.lr));
        CHECK(echoed.model.dim == cfg.model.dim);
        CHECK(echoed.model.variant == cfg.model.variant);
        CHECK(echoed.corpus_dir == cfg.corpus_dir);
    }

    SUBCASE("every epoch leaves its sampling index on disk") {
        for (int e = 0; e < cfg.epochs; ++e) {
            fs::path idx = fs::path(cfg.out_dir) / ("epoch_" + std::to_string(e) + ".veix");
            CHECK(fs::exists(idx));
            EpochIndex loaded = read_epoch_index(idx.string(), cfg.model.k);
            CHECK(int(loaded.entries.size()) == 3 * cfg.frames_per_clip);
        }
    }

    SUBCASE("the checkpoint restores a model with identical parameters") {
        LoadedCheckpoint loaded = load_checkpoint(result.checkpoint_path);
        CHECK(loaded.step == uint64_t(result.steps));
        CHECK(loaded.epoch == uint32_t(cfg.epochs));
        CHECK(loaded.has_optimizer);
        CHECK(loaded.find_stream("mask") != nullptr);
        CHECK(loaded.find_stream("gate") != nullptr);

        auto want = result.model.named_parameters();
        auto got = loaded.model.named_parameters();
        REQUIRE(want.size() == got.size());
        for (size_t i = 0; i < want.size(); ++i) {
            CHECK(want[i].name == got[i].name);
            REQUIRE(want[i].tensor.size() == got[i].tensor.size());
            size_t mismatched = 0;
            for (size_t j = 0; j < want[i].tensor.values().size(); ++j)
                mismatched += want[i].tensor.values()[j] != got[i].tensor.values()[j];
            CHECK(mismatched == 0);
        }
    }
}

TEST_CASE("identical seeds reproduce a training run bit for bit") {
    fs::path dir = scratch_dir("train-determinism");
    write_color_corpus((dir / "corpus").string(), 2, 3, 32, 32, 31);

    auto run_once = [&](const std::string& leaf) {
        RunConfig cfg;
        cfg.model = toy_config(Variant::VGen);
        cfg.model.seed = 31;
        cfg.corpus_dir = (dir / "corpus").string();
        cfg.out_dir = (dir / leaf).string();
        cfg.epochs = 1;
        cfg.batch_size = 4;
        cfg.frames_per_clip = 2;
        cfg.lr = 1e-3;
        return train(cfg);
    };

    TrainResult a = run_once("run_a");
    TrainResult b = run_once("run_b");

    CHECK(a.steps == b.steps);
    CHECK(a.final_mse == b.final_mse);
    CHECK(a.final_nll == b.final_nll);

    auto pa = a.model.named_parameters();
    auto pb = b.model.named_parameters();
    REQUIRE(pa.size() == pb.size());
    size_t mismatched = 0;
    for (size_t i = 0; i < pa.size(); ++i)
        for (size_t j = 0; j < pa[i].tensor.values().size(); ++j)
            mismatched += pa[i].tensor.values()[j] != pb[i].tensor.values()[j];
    CHECK(mismatched == 0);
}

TEST_CASE("seed derivation separates named streams") {
    CHECK(derive_seed(7, "mask", 0) != derive_seed(7, "gate", 0));
    CHECK(derive_seed(7, "mask", 0) != derive_seed(7, "mask", 1));
    CHECK(derive_seed(7, "mask", 2) == derive_seed(7, "mask", 2));
    CHECK(derive_seed(8, "mask", 0) != derive_seed(7, "mask", 0));
}
