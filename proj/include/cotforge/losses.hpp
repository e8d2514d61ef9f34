#pragma once

#include <optional>
#include <span>
#include <vector>

#include "cotforge/model.hpp"
#include "cotforge/parallel.hpp"

namespace cotforge {

// --- scalar loss formulas --------------------------------------------------
// Pure functions of sequence log-probabilities so each objective can be
// checked against hand-computed values independently of the network.

double log_sigmoid(double x);
double sigmoid(double x);

struct PrefLogps {
    double policy_chosen = 0;
    double policy_rejected = 0;
    double ref_chosen = 0;
    double ref_rejected = 0;

    double margin(double beta) const {
        return beta * ((policy_chosen - ref_chosen) - (policy_rejected - ref_rejected));
    }
};

struct PrefItemGrad {
    double d_chosen = 0;  // d(item loss) / d(policy chosen logp)
    double d_rejected = 0;
};

double dpo_item(const PrefLogps& lp, double beta, PrefItemGrad* grad = nullptr);
double ipo_item(const PrefLogps& lp, double beta, PrefItemGrad* grad = nullptr);

// KTO decomposes each triplet into a desirable and an undesirable item with a
// shared (detached) reference point z0.
double kto_chosen_item(double reward, double beta, double z0, double* d_reward = nullptr);
double kto_rejected_item(double reward, double beta, double z0, double* d_reward = nullptr);

// ORPO over length-normalized log-probabilities; throws when a normalized
// log-probability is >= 0 (impossible for a proper distribution).
double orpo_item(double norm_logp_chosen, double norm_logp_rejected, double lambda,
                 double* d_chosen = nullptr, double* d_rejected = nullptr);

// --- batches -----------------------------------------------------------------

// Token layout: [EOS anchor] + prompt (+ separator space) + completion (+ EOS).
struct EncodedSeq {
    std::vector<int> ids;
    std::size_t completion_start = 0;

    std::size_t completion_len() const { return ids.size() - completion_start; }
};

EncodedSeq encode_pair(const Vocab& vocab, const std::string& prompt,
                       const std::string& completion, bool append_eos);

struct SftItem {
    EncodedSeq seq;
};

struct PrefItem {
    EncodedSeq chosen;
    EncodedSeq rejected;
};

enum class KtoReference { batch_estimate, zero };

struct LossStats {
    double mean_margin = 0;  // beta-scaled implicit-reward margin (preference losses)
};

// --- batch objectives ---------------------------------------------------------
// Each returns the batch mean loss; when grads is non-null the gradient of
// that mean is accumulated (LoRA projection included). Per-item work runs in
// parallel; reductions are in batch-index order, so results are bit-stable
// regardless of thread count.

template <class S>
double loss_sft(const ModelT<S>& policy, std::span<const SftItem> batch, GradsT<S>* grads);

template <class S>
double loss_dpo(const ModelT<S>& policy, const ModelT<S>& ref, std::span<const PrefItem> batch,
                double beta, GradsT<S>* grads, LossStats* stats = nullptr);

template <class S>
double loss_ipo(const ModelT<S>& policy, const ModelT<S>& ref, std::span<const PrefItem> batch,
                double beta, GradsT<S>* grads, LossStats* stats = nullptr);

template <class S>
double loss_kto(const ModelT<S>& policy, const ModelT<S>& ref, std::span<const PrefItem> batch,
                double beta, KtoReference z0_mode, GradsT<S>* grads, LossStats* stats = nullptr);

template <class S>
double loss_orpo(const ModelT<S>& policy, std::span<const PrefItem> batch, double lambda,
                 GradsT<S>* grads, LossStats* stats = nullptr);

}  // namespace cotforge

#include "cotforge/losses_impl.hpp"
