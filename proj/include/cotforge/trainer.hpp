#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cotforge/forge.hpp"
#include "cotforge/losses.hpp"
#include "cotforge/model.hpp"

namespace cotforge {

enum class Objective { sft, dpo, ipo, kto, orpo };

const char* objective_name(Objective o);
Objective objective_from_name(const std::string& name);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct TrainConfig {
    Objective objective = Objective::sft;
    double beta = 0.2;      // DPO/IPO/KTO scale (IPO: beta = 1/(2*tau))
    double lambda = 0.001;  // ORPO odds-ratio weight
    double lr_max = 1e-3;
    int warmup_steps = 10;
    std::string schedule = "linear";
    int epochs = 1;
    int batch_size = 16;
    std::uint64_t seed = 0;
    AdamWConfig adamw;
    double grad_clip = 1.0;  // global-norm clip; <= 0 disables
    int lora_rank = 0;       // 0 trains all arrays
    double lora_alpha = 16.0;
    bool append_eos = true;  // terminal EOS on completions (off for raw chunks)
    KtoReference kto_z0 = KtoReference::batch_estimate;

    void validate() const;
    nlohmann::json to_json() const;
};

double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& config);

struct AdamWState {
    std::vector<MatT<float>> m, v;  // aligned with the trainable list
    std::int64_t t = 0;
};

// Decoupled weight decay, bias-corrected moments. Deterministic.
void adamw_step(Model& model, Grads& grads, AdamWState& state, double lr,
                const AdamWConfig& config);

struct StepLog {
    std::int64_t step = 0;
    double lr = 0;
    double loss = 0;
    std::optional<double> margin;
    double grad_norm = 0;
};

struct TrainLog {
    std::vector<StepLog> steps;
    double initial_loss = 0;
    double final_loss = 0;

    void write_jsonl(const std::string& path) const;
};

using ProgressFn = std::function<void(const StepLog&)>;

// Supervised fine-tuning; attaches adapters when config.lora_rank > 0 and
// merges them back before returning.
TrainLog train_sft(Model& model, const std::vector<SftPair>& pairs, const TrainConfig& config,
                   const ProgressFn& progress = nullptr);

// Preference stage. DPO/IPO/KTO freeze a copy of the incoming model as the
// reference; ORPO trains reference-free (callers start it from the base
// model rather than the SFT checkpoint).
TrainLog train_pref(Model& model, const std::vector<PrefTriplet>& triplets,
                    const TrainConfig& config, const ProgressFn& progress = nullptr);

}  // namespace cotforge
