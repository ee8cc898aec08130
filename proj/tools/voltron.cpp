#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "voltron/adaptation.hpp"
#include "voltron/checkpoint.hpp"
#include "voltron/envs.hpp"
#include "voltron/error.hpp"
#include "voltron/fixtures.hpp"
#include "voltron/model.hpp"
#include "voltron/objective.hpp"
#include "voltron/png_io.hpp"
#include "voltron/verify.hpp"

namespace fs = std::filesystem;
using namespace voltron;

namespace {

// Numbered frames (0.png, 1.png, ...) from a directory, as H*W*3 in [0,1].
std::vector<std::vector<double>> load_frame_dir(const std::string& dir, int& height,
                                                int& width) {
    std::vector<std::vector<double>> frames;
    for (int i = 0;; ++i) {
        fs::path p = fs::path(dir) / (std::to_string(i) + ".png");
        if (!fs::exists(p)) break;
        Image img = read_png(p.string());
        if (frames.empty()) {
            height = img.height;
            width = img.width;
        } else if (img.height != height || img.width != width) {
            throw DataError("frame size mismatch in " + dir + " at " + p.string());
        }
        std::vector<double> f(img.rgb.size());
        for (size_t j = 0; j < img.rgb.size(); ++j) f[j] = img.rgb[j] / 255.0;
        frames.push_back(std::move(f));
    }
    if (frames.empty()) throw DataError("no numbered frames found in " + dir);
    return frames;
}

void write_metric_lines(const std::string& path,
                        const std::vector<std::pair<std::string, std::string>>& kv) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write metrics file " + path);
    for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

int run_pretrain(const std::string& config_path, const std::string& corpus,
                 const std::string& out, bool have_seed, uint64_t seed) {
    RunConfig cfg = load_run_config(config_path);
    if (!corpus.empty()) cfg.corpus_dir = corpus;
    if (!out.empty()) cfg.out_dir = out;
    if (have_seed) cfg.model.seed = seed;
    cfg.validate();
    TrainResult res = train(cfg);
    std::cout << "checkpoint=" << res.checkpoint_path << "\n"
              << "metrics=" << res.metrics_path << "\n"
              << "steps=" << res.steps << "\n"
              << "final_mse=" << fmt(res.final_mse) << "\n"
              << "final_nll=" << fmt(res.final_nll) << "\n";
    return 0;
}

int run_adapt(const std::string& task, const std::string& ckpt_path,
              const std::string& data, const std::string& eval_data,
              const std::string& out, const std::string& profile_name,
              const std::string& pool_name, bool ablate_language, bool use_language,
              const AdaptConfig& cfg, const std::string& rollout, int episodes) {
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
    const VoltronModel& model = ckpt.model;
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("task", task);
    kv.emplace_back("checkpoint", ckpt_path);
    kv.emplace_back("variant", variant_name(model.cfg.variant));
    if (model.cfg.k > 1) kv.emplace_back("duplicated_frames", "1");

    if (task == "grasp") {
        std::vector<GraspSample> train_set = load_grasp_dataset(data);
        std::vector<GraspSample> eval_set =
            eval_data.empty() ? train_set : load_grasp_dataset(eval_data);
        GraspResult res = grasp_adapt(model, train_set, eval_set, cfg);
        kv.emplace_back("top1", fmt(res.eval.top1));
        kv.emplace_back("top1pct", fmt(res.eval.top1pct));
        kv.emplace_back("top5pct", fmt(res.eval.top5pct));
        kv.emplace_back("ce", fmt(res.eval.ce));
        kv.emplace_back("selected_fold", std::to_string(res.selected_fold));
        for (size_t i = 0; i < res.fold_top1.size(); ++i)
            kv.emplace_back("fold" + std::to_string(i) + "_top1", fmt(res.fold_top1[i]));
    } else if (task == "refer") {
        std::vector<ReferSample> train_set = load_refer_dataset(data);
        std::vector<ReferSample> eval_set =
            eval_data.empty() ? train_set : load_refer_dataset(eval_data);
        ReferResult res = refer_adapt(model, train_set, eval_set, cfg, ablate_language);
        kv.emplace_back("accuracy", fmt(res.accuracy));
        kv.emplace_back("loss", fmt(res.loss));
        kv.emplace_back("ablate_language", ablate_language ? "1" : "0");
    } else if (task == "bc") {
        BcProfile profile =
            profile_name == "real" ? BcProfile::Real : BcProfile::Simulated;
        PoolKind pool = pool_name == "mean" ? PoolKind::Mean : PoolKind::Map;
        std::vector<Demo> demos = read_demos(data);
        BcResult res = bc_adapt(model, demos, profile, pool, cfg, use_language);
        kv.emplace_back("profile", profile_name);
        kv.emplace_back("pool", pool_name);
        kv.emplace_back("use_language", use_language ? "1" : "0");
        kv.emplace_back("final_mse", fmt(res.final_mse));
        if (!rollout.empty()) {
            Policy policy = [&](const std::vector<double>& frame,
                                const std::vector<double>& proprio,
                                const std::string& utterance) {
                int h = rollout == "two-goal" ? TwoGoalEnv{}.height : PointMassEnv{}.height;
                int w = rollout == "two-goal" ? TwoGoalEnv{}.width : PointMassEnv{}.width;
                return bc_policy_action(model, res.head, frame, h, w, proprio, utterance,
                                        use_language);
            };
            double success = 0.0;
            if (rollout == "point-mass") {
                success = evaluate_point_mass(PointMassEnv{}, policy, episodes, cfg.seed);
            } else if (rollout == "two-goal") {
                success = evaluate_two_goal(TwoGoalEnv{}, policy, episodes, cfg.seed);
            } else {
                throw ConfigError("unknown rollout environment: " + rollout);
            }
            kv.emplace_back("rollout", rollout);
            kv.emplace_back("episodes", std::to_string(episodes));
            kv.emplace_back("success", fmt(success));
        }
    } else {
        throw ConfigError("unknown adaptation task: " + task);
    }

    if (!out.empty()) write_metric_lines(out, kv);
    for (const auto& [k, v] : kv) std::cout << k << "=" << v << "\n";
    return 0;
}

int run_score(const std::string& ckpt_path, const std::string& frames_dir,
              const std::string& utterance, int stride) {
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
    int height = 0, width = 0;
    std::vector<std::vector<double>> frames = load_frame_dir(frames_dir, height, width);
    TokenizedUtterance u =
        tokenize(utterance, ckpt.model.vocab, ckpt.model.cfg.caption_len);
    std::vector<IntentPoint> curve =
        intent_curve(ckpt.model, frames, height, width, u, stride);
    for (const IntentPoint& p : curve)
        std::cout << p.frame << "\t" << fmt(p.score) << "\n";
    return 0;
}

int run_inspect(const std::string& ckpt_path) {
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
    const ModelConfig& m = ckpt.model.cfg;
    size_t scalars = 0;
    for (const NamedTensor& p : ckpt.model.named_parameters())
        scalars += p.tensor.values().size();
    std::cout << "checkpoint=" << ckpt_path << "\n"
              << "step=" << ckpt.step << "\n"
              << "epoch=" << ckpt.epoch << "\n"
              << "variant=" << variant_name(m.variant) << "\n"
              << "alpha=" << fmt(m.alpha) << "\n"
              << "k=" << m.k << "\n"
              << "gamma=" << fmt(m.gamma) << "\n"
              << "dim=" << m.dim << " depth=" << m.depth << " heads=" << m.heads << "\n"
              << "patch=" << m.patch << " height=" << m.height << " width=" << m.width
              << "\n"
              << "caption_len=" << m.caption_len << " vocab_size=" << m.vocab_size << "\n"
              << "dec_dim=" << m.dec_dim << " dec_depth=" << m.dec_depth
              << " dec_heads=" << m.dec_heads << "\n"
              << "lang_dim=" << m.lang_dim << "\n"
              << "seed=" << m.seed << "\n"
              << "tensors=" << ckpt.model.named_parameters().size() << "\n"
              << "scalars=" << scalars << "\n"
              << "optimizer=" << (ckpt.has_optimizer ? "present" : "absent") << "\n";
    for (const RngSnapshot& s : ckpt.streams) std::cout << "stream=" << s.name << "\n";
    return 0;
}

int run_verify_cmd(const std::string& level_name, const std::string& scratch,
                   bool inject) {
    VerifyLevel level = level_name == "full" ? VerifyLevel::Full : VerifyLevel::Fast;
    VerifyReport report = run_verify(level, scratch, inject);
    for (const CheckResult& c : report.checks)
        std::cout << (c.passed ? "[ ok ] " : "[FAIL] ") << c.name << ": " << c.detail
                  << "\n";
    if (!report.all_passed()) {
        std::cerr << "error: verification failed\n";
        return 5;
    }
    return 0;
}

int run_fixture(const std::string& kind, const std::string& out, uint64_t seed,
                int clips, int frames, int height, int width, int count, int episodes) {
    if (kind == "colors") {
        write_color_corpus(out, clips, frames, height, width, seed);
    } else if (kind == "progress") {
        write_progress_corpus(out, frames, height, width);
    } else if (kind == "grasp") {
        write_grasp_fixture(out, count, height, width, seed);
    } else if (kind == "refer") {
        write_refer_fixture(out, count, height, width, seed);
    } else if (kind == "point-mass") {
        write_point_mass_corpus(out, episodes, seed);
    } else if (kind == "two-goal") {
        write_two_goal_corpus(out, episodes, seed);
    } else {
        throw ConfigError("unknown fixture kind: " + kind);
    }
    std::cout << "wrote " << kind << " fixture to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voltron: language-driven representation learning from videos"};
    app.require_subcommand(1);

    auto* pre = app.add_subcommand("pretrain", "Train a model on a clip corpus");
    std::string pre_config, pre_corpus, pre_out;
    uint64_t pre_seed = 0;
    pre->add_option("--config", pre_config, "run config file (key=value lines)")
        ->required();
    pre->add_option("--corpus", pre_corpus, "override corpus directory");
    pre->add_option("--out", pre_out, "override output directory");
    pre->add_option("--seed", pre_seed, "override model seed");

    auto* adapt = app.add_subcommand("adapt", "Train an adaptation head");
    std::string ad_task, ad_ckpt, ad_data, ad_eval, ad_out;
    std::string ad_profile = "simulated", ad_pool = "map", ad_rollout;
    bool ad_ablate = false, ad_lang = false;
    AdaptConfig ad_cfg;
    int ad_episodes = 40;
    adapt->add_option("--task", ad_task, "grasp, refer, or bc")
        ->required()
        ->check(CLI::IsMember({"grasp", "refer", "bc"}));
    adapt->add_option("--checkpoint", ad_ckpt, "pretrained checkpoint")->required();
    adapt->add_option("--data", ad_data, "training dataset")->required();
    adapt->add_option("--eval-data", ad_eval, "held-out dataset (defaults to --data)");
    adapt->add_option("--out", ad_out, "metrics output file");
    adapt->add_option("--profile", ad_profile, "bc profile: simulated or real")
        ->check(CLI::IsMember({"simulated", "real"}));
    adapt->add_option("--pool", ad_pool, "feature pooling: map or mean")
        ->check(CLI::IsMember({"map", "mean"}));
    adapt->add_flag("--ablate-language", ad_ablate,
                    "refer: replace expressions with the null utterance");
    adapt->add_flag("--use-language", ad_lang, "bc: condition on the demo utterance");
    adapt->add_option("--epochs", ad_cfg.epochs, "epoch budget (task default if 0)");
    adapt->add_option("--steps", ad_cfg.steps, "step budget for simulated bc");
    adapt->add_option("--batch", ad_cfg.batch_size, "batch size (task default if 0)");
    adapt->add_option("--lr", ad_cfg.lr, "learning rate");
    adapt->add_option("--weight-decay", ad_cfg.weight_decay, "weight decay");
    adapt->add_option("--seed", ad_cfg.seed, "adaptation seed");
    adapt->add_option("--rollout", ad_rollout,
                      "bc: evaluate in an environment (point-mass or two-goal)");
    adapt->add_option("--episodes", ad_episodes, "rollout episode count");

    auto* score = app.add_subcommand("score", "Per-frame utterance scores for a clip");
    std::string sc_ckpt, sc_frames, sc_utterance;
    int sc_stride = 1;
    score->add_option("--checkpoint", sc_ckpt, "pretrained checkpoint")->required();
    score->add_option("--frames", sc_frames, "directory of numbered frames")->required();
    score->add_option("--utterance", sc_utterance, "utterance to score")->required();
    score->add_option("--stride", sc_stride, "score every Nth frame")
        ->check(CLI::PositiveNumber);

    auto* inspect = app.add_subcommand("inspect", "Summarize a checkpoint");
    std::string in_ckpt;
    inspect->add_option("--checkpoint", in_ckpt, "checkpoint to summarize")->required();

    auto* verify = app.add_subcommand("verify", "Run the self-check suite");
    std::string vf_level = "fast", vf_scratch;
    bool vf_inject = false;
    verify->add_option("--level", vf_level, "fast or full")
        ->check(CLI::IsMember({"fast", "full"}));
    verify->add_option("--scratch", vf_scratch, "scratch directory for disposable runs");
    verify->add_flag("--inject-causality-fault", vf_inject)->group("");

    auto* fixture = app.add_subcommand("fixture", "Write a synthetic dataset");
    std::string fx_kind, fx_out;
    uint64_t fx_seed = 0;
    int fx_clips = 8, fx_frames = 5, fx_height = 32, fx_width = 32;
    int fx_count = 12, fx_episodes = 40;
    fixture
        ->add_option("--kind", fx_kind,
                     "colors, progress, grasp, refer, point-mass, or two-goal")
        ->required();
    fixture->add_option("--out", fx_out, "output directory")->required();
    fixture->add_option("--seed", fx_seed, "generator seed");
    fixture->add_option("--clips", fx_clips, "clip count (colors)");
    fixture->add_option("--frames", fx_frames, "frames per clip");
    fixture->add_option("--height", fx_height, "frame height");
    fixture->add_option("--width", fx_width, "frame width");
    fixture->add_option("--count", fx_count, "image count (grasp, refer)");
    fixture->add_option("--episodes", fx_episodes, "episode count (environments)");

    try {
        app.parse(argc, argv);
        if (*pre)
            return run_pretrain(pre_config, pre_corpus, pre_out, pre->count("--seed") > 0,
                                pre_seed);
        if (*adapt)
            return run_adapt(ad_task, ad_ckpt, ad_data, ad_eval, ad_out, ad_profile,
                             ad_pool, ad_ablate, ad_lang, ad_cfg, ad_rollout,
                             ad_episodes);
        if (*score) return run_score(sc_ckpt, sc_frames, sc_utterance, sc_stride);
        if (*inspect) return run_inspect(in_ckpt);
        if (*verify) return run_verify_cmd(vf_level, vf_scratch, vf_inject);
        if (*fixture)
            return run_fixture(fx_kind, fx_out, fx_seed, fx_clips, fx_frames, fx_height,
                               fx_width, fx_count, fx_episodes);
        return 0;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const VocabularyError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const CapabilityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const NumericsError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
