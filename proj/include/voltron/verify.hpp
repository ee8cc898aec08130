#pragma once

#include <string>
#include <vector>

#include "voltron/config.hpp"
#include "voltron/model.hpp"
#include "voltron/objective.hpp"

namespace voltron {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Shared toy scale for self-checks, tests and the acceptance suite: large
// enough to exercise every code path (two frames, both gate branches, the
// full decoder), small enough that a complete gradient check runs in seconds.
ModelConfig toy_config(Variant v);

// A vocabulary of `target_size` ids backed by synthetic words; only id
// validity matters to the checks, not what the words mean.
Vocabulary toy_vocab(int target_size);

// Encoder visual row count equals k * (|R| - round(gamma*|R|)) across random
// patch sizes, grids, gammas and frame counts, and the mask keeps exactly
// that many regions.
CheckResult check_shape_law(int trials, uint64_t seed);

// Rewriting the pixels of every dropped region leaves the encoder output
// bit-identical, so masked content cannot leak into the representation.
CheckResult check_mask_nonleakage(int trials, uint64_t seed);

// Exhaustive prefix causality at caption length L: perturbing the teacher
// token consumed at row m leaves logits rows before m bit-identical. With
// inject_fault the decoder runs under a deliberately corrupted attention
// mask, so a healthy checker must report a causality violation; this proves
// the check can actually fail.
CheckResult check_prefix_causality(int caption_len, bool inject_fault);

// Attention pooling is permutation-invariant over input rows, reduces to
// rmsnorm((row Wv) Wo) for a single input row, and mean pooling matches a
// direct loop plus the identical-rows and cancellation identities. Runs in
// f32 storage mode, where reassociating double sums of f32 values cannot
// change the rounded result.
CheckResult check_pooling_invariance(uint64_t seed);

// Analytic gradients vs central differences on a toy batch that covers both
// gate branches, computed in f64. Passes at max relative error <= 1e-3.
CheckResult check_grad_correctness();

// Deterministic post-training evaluation: fresh seeded contexts and masks
// over every clip, forward only. gate selects which case loss is measured.
LossBreakdown eval_losses(const VoltronModel& model, Corpus& corpus,
                          uint64_t seed, int contexts_per_clip, int gate);

// Trains a toy model on a small synthetic corpus until it memorizes it:
// masked-reconstruction MSE <= 0.05 within 2000 steps, and for the
// generative variant caption NLL <= 0.1 within 4000 steps.
CheckResult check_overfit_reconstruction(const std::string& scratch_dir);
CheckResult check_overfit_generation(const std::string& scratch_dir);

enum class VerifyLevel { Fast, Full };

struct VerifyReport {
    std::vector<CheckResult> checks;

    bool all_passed() const;
    const CheckResult* find(const std::string& name) const;
};

// Fast runs the structural invariants in under a minute. Full adds the
// gradient check and both overfit oracles. scratch_dir receives disposable
// corpora and run outputs.
VerifyReport run_verify(VerifyLevel level, const std::string& scratch_dir,
                        bool inject_causality_fault = false);

}  // namespace voltron
