#include "voltron/objective.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "voltron/checkpoint.hpp"
#include "voltron/error.hpp"

namespace fs = std::filesystem;

namespace voltron {

int sample_gate(double alpha, Rng& rng) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("gate probability must lie in [0,1]");
    return rng.uniform() < alpha ? 1 : 0;
}

LossBreakdown compute_loss(const VoltronModel& model,
                           const std::vector<BatchItem>& batch) {
    if (batch.empty()) throw ContractError("compute_loss: empty batch");
    LossBreakdown out;
    out.examples = static_cast<int>(batch.size());
    Tensor total;
    double mse_acc = 0.0, nll_acc = 0.0;
    int gated = 0;
    for (const auto& item : batch) {
        if (item.gate == 1 && model.cfg.variant != Variant::VGen) {
            throw ContractError("generation gate drawn for a variant trained with alpha=0");
        }
        TokenizedUtterance cond = model.conditioning_utterance(item.ctx.tokens, item.gate);
        EncodedSequence h = model.encoder.encode(item.ctx, &item.mask, cond);
        Tensor pred = model.decoder.reconstruct(h, item.mask);
        Tensor targets = model.reconstruction_targets(item.ctx, item.mask);
        Tensor example_loss = mean(square(sub(pred, targets)));
        mse_acc += example_loss.item();
        if (item.gate == 1) {
            Tensor logits = model.decoder.generate_logits(h, item.ctx.tokens);
            Tensor nll = caption_nll(logits, item.ctx.tokens);
            nll_acc += nll.item();
            ++gated;
            example_loss = add(example_loss, nll);
        }
        total = total.defined() ? add(total, example_loss) : example_loss;
    }
    out.total = scale(total, 1.0 / out.examples);
    out.mse_mean = mse_acc / out.examples;
    out.nll_mean = gated > 0 ? nll_acc / gated : 0.0;
    out.gate_rate = double(gated) / out.examples;
    return out;
}

AdamW::AdamW(std::vector<Tensor> params) : params_(std::move(params)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        if (!p.requires_grad()) {
            throw ContractError("optimizer given a frozen tensor '" + p.name() + "'");
        }
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void AdamW::step(const AdamWHyper& hp) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(hp.beta1, double(step_count_));
    const double bc2 = 1.0 - std::pow(hp.beta2, double(step_count_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& node = *params_[i].node();
        if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < node.value.size(); ++j) {
            double g = node.grad[j];
            if (!std::isfinite(g)) {
                throw NumericsError("non-finite gradient in parameter '" +
                                    params_[i].name() + "'");
            }
            m[j] = quantize(hp.beta1 * m[j] + (1.0 - hp.beta1) * g);
            v[j] = quantize(hp.beta2 * v[j] + (1.0 - hp.beta2) * g * g);
            double m_hat = m[j] / bc1;
            double v_hat = v[j] / bc2;
            double update = m_hat / (std::sqrt(v_hat) + hp.eps) +
                            hp.weight_decay * node.value[j];
            node.value[j] = quantize(node.value[j] - hp.lr * update);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.clear_grad();
}

void AdamW::restore(size_t i, std::vector<double> m, std::vector<double> v) {
    if (i >= params_.size() || m.size() != m_[i].size() || v.size() != v_[i].size()) {
        throw CheckpointError("optimizer moment shapes do not match parameters");
    }
    m_[i] = std::move(m);
    v_[i] = std::move(v);
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) sq += g * g;
    }
    double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        double factor = max_norm / norm;
        for (const auto& p : params) {
            if (!p.has_grad()) continue;
            for (double& g : p.node()->grad) g *= factor;
        }
    }
    return norm;
}

double lr_schedule(int64_t step, int64_t warmup, int64_t total, double peak) {
    if (total < 1) throw ConfigError("lr schedule needs a positive total step count");
    if (step >= total) return 0.0;
    if (warmup > 0 && step <= warmup) return peak * double(step) / double(warmup);
    double progress = double(step - warmup) / double(total - warmup);
    return peak * 0.5 * (1.0 + std::cos(progress * M_PI));
}

uint64_t derive_seed(uint64_t base, const std::string& name, uint64_t index) {
    return Rng::seeded(base).child(name, index).next_u64();
}

namespace {

std::string format_metric(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace

TrainResult train(const RunConfig& run) {
    run.validate();
    if (run.corpus_dir.empty()) throw ConfigError("no corpus path configured");

    Corpus corpus = load_corpus(run.corpus_dir);
    if (corpus.height != run.model.height || corpus.width != run.model.width) {
        throw DataError("corpus frames are " + std::to_string(corpus.width) + "x" +
                        std::to_string(corpus.height) + " but the model expects " +
                        std::to_string(run.model.width) + "x" +
                        std::to_string(run.model.height));
    }
    Vocabulary vocab = Vocabulary::build(corpus_captions(corpus), run.model.vocab_size);
    tokenize_corpus(corpus, vocab, run.model.caption_len);

    VoltronModel model = VoltronModel::create(run.model, vocab);
    AdamW optimizer(model.trainable_parameters());
    AdamWHyper hyper;
    hyper.beta1 = run.beta1;
    hyper.beta2 = run.beta2;
    hyper.weight_decay = run.weight_decay;

    const int entries_per_epoch = int(corpus.clips.size()) * run.frames_per_clip;
    const int64_t steps_per_epoch =
        (entries_per_epoch + run.batch_size - 1) / run.batch_size;
    const int64_t total_steps = steps_per_epoch * run.epochs;
    const int64_t warmup_steps = int64_t(std::llround(run.warmup_frac * double(total_steps)));
    const double peak_lr = run.resolved_lr();

    fs::create_directories(run.out_dir);
    std::string metrics_path = run.resolved_metrics_path();
    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics) throw DataError("cannot write metrics file '" + metrics_path + "'");
    {
        std::istringstream cfg_lines(serialize_run_config(run));
        std::string line;
        while (std::getline(cfg_lines, line)) metrics << "# " << line << "\n";
    }

    Rng base = Rng::seeded(run.model.seed);
    Rng mask_rng = base.child("mask");
    Rng gate_rng = base.child("gate");

    TrainResult result{std::move(model), "", metrics_path, 0, 0.0, 0.0};
    int64_t step = 0;
    for (int epoch = 0; epoch < run.epochs; ++epoch) {
        EpochIndex index = build_epoch_index(corpus, run.frames_per_clip, run.model.k,
                                             derive_seed(run.model.seed, "data", epoch));
        write_epoch_index(run.out_dir + "/epoch_" + std::to_string(epoch) + ".veix", index);
        for (size_t start = 0; start < index.entries.size(); start += run.batch_size) {
            size_t stop = std::min(index.entries.size(), start + run.batch_size);
            std::vector<BatchItem> batch;
            batch.reserve(stop - start);
            for (size_t e = start; e < stop; ++e) {
                const auto& entry = index.entries[e];
                std::vector<int> frame_idx(entry.frame_indices.begin(),
                                           entry.frame_indices.end());
                BatchItem item;
                item.ctx = context_from_indices(corpus.clips[entry.clip_id], frame_idx);
                item.mask = make_mask(run.model.regions(), run.model.gamma, mask_rng);
                item.gate = sample_gate(run.model.alpha, gate_rng);
                batch.push_back(std::move(item));
            }
            double lr = lr_schedule(step, warmup_steps, total_steps, peak_lr);
            optimizer.zero_grad();
            LossBreakdown loss;
            {
                GradTape tape;
                loss = compute_loss(result.model, batch);
                tape.backward(loss.total);
            }
            clip_grad_norm(optimizer.parameters(), run.clip_norm);
            hyper.lr = lr;
            optimizer.step(hyper);
            metrics << "step=" << step << " epoch=" << epoch
                    << " loss=" << format_metric(loss.total.item())
                    << " mse=" << format_metric(loss.mse_mean)
                    << " nll=" << format_metric(loss.nll_mean)
                    << " lr=" << format_metric(lr)
                    << " gate_rate=" << format_metric(loss.gate_rate) << "\n";
            result.final_mse = loss.mse_mean;
            result.final_nll = loss.nll_mean;
            ++step;
        }
        if (run.checkpoint_every > 0 && (epoch + 1) % run.checkpoint_every == 0) {
            save_checkpoint(run.out_dir + "/ckpt_epoch" + std::to_string(epoch + 1) + ".vckp",
                            result.model, &optimizer,
                            {{"mask", mask_rng.state()}, {"gate", gate_rng.state()}},
                            uint64_t(step), uint32_t(epoch + 1));
        }
    }
    result.steps = step;
    result.checkpoint_path = run.out_dir + "/final.vckp";
    save_checkpoint(result.checkpoint_path, result.model, &optimizer,
                    {{"mask", mask_rng.state()}, {"gate", gate_rng.state()}},
                    uint64_t(step), uint32_t(run.epochs));
    metrics.close();
    if (!metrics) throw DataError("metrics write failed for '" + metrics_path + "'");
    return result;
}

RunConfig parse_metrics_header(const std::string& metrics_path) {
    std::ifstream f(metrics_path);
    if (!f) throw DataError("cannot open metrics file '" + metrics_path + "'");
    std::ostringstream cfg_text;
    std::string line;
    while (std::getline(f, line)) {
        if (line.rfind("# ", 0) == 0) {
            cfg_text << line.substr(2) << "\n";
        } else if (line.rfind("#", 0) != 0) {
            break;
        }
    }
    return parse_run_config_text(cfg_text.str());
}

}  // namespace voltron
