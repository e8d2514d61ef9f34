#include "cotforge/trainer.hpp"

#include <cmath>

#include "cotforge/jsonl.hpp"

namespace cotforge {

const char* objective_name(Objective o) {
    switch (o) {
        case Objective::sft: return "sft";
        case Objective::dpo: return "dpo";
        case Objective::ipo: return "ipo";
        case Objective::kto: return "kto";
        case Objective::orpo: return "orpo";
    }
    return "sft";
}

Objective objective_from_name(const std::string& name) {
    if (name == "sft") return Objective::sft;
    if (name == "dpo") return Objective::dpo;
    if (name == "ipo") return Objective::ipo;
    if (name == "kto") return Objective::kto;
    if (name == "orpo") return Objective::orpo;
    throw DataError("unknown objective: " + name);
}

void TrainConfig::validate() const {
    const bool needs_beta =
        objective == Objective::dpo || objective == Objective::ipo || objective == Objective::kto;
    if (needs_beta && beta <= 0) throw ModelError("beta must be positive");
    if (objective == Objective::orpo && lambda < 0) throw ModelError("lambda must be >= 0");
    if (lr_max <= 0) throw ModelError("lr_max must be positive");
    if (warmup_steps < 0) throw ModelError("warmup_steps must be >= 0");
    if (schedule != "linear") throw ModelError("unknown schedule: " + schedule);
    if (epochs < 1) throw ModelError("epochs must be >= 1");
    if (batch_size < 1) throw ModelError("batch_size must be >= 1");
    if (lora_rank < 0) throw ModelError("lora_rank must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"objective", objective_name(objective)},
            {"beta", beta},
            {"lambda", lambda},
            {"lr_max", lr_max},
            {"warmup_steps", warmup_steps},
            {"schedule", schedule},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"seed", seed},
            {"adamw",
             {{"beta1", adamw.beta1},
              {"beta2", adamw.beta2},
              {"eps", adamw.eps},
              {"weight_decay", adamw.weight_decay}}},
            {"grad_clip", grad_clip},
            {"lora_rank", lora_rank},
            {"lora_alpha", lora_alpha},
            {"append_eos", append_eos},
            {"kto_z0", kto_z0 == KtoReference::batch_estimate ? "batch_estimate" : "zero"}};
}

double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& config) {
    if (step < 0) throw ModelError("negative step");
    const std::int64_t warmup = config.warmup_steps;
    if (warmup > 0 && step < warmup)
        return config.lr_max * static_cast<double>(step) / static_cast<double>(warmup);
    if (total_steps <= warmup) return config.lr_max;
    const double remain = static_cast<double>(total_steps - step) /
                          static_cast<double>(total_steps - warmup);
    return config.lr_max * std::max(0.0, remain);
}

void adamw_step(Model& model, Grads& grads, AdamWState& state, double lr,
                const AdamWConfig& config) {
    std::vector<std::pair<MatT<float>*, MatT<float>*>> views;
    for_each_trainable(model, grads,
                       [&](const std::string&, MatT<float>& p, MatT<float>& g) {
                           views.emplace_back(&p, &g);
                       });
    if (state.m.empty()) {
        for (auto& [p, g] : views) {
            state.m.push_back(MatT<float>::Zero(p->rows(), p->cols()));
            state.v.push_back(MatT<float>::Zero(p->rows(), p->cols()));
        }
    }
    if (state.m.size() != views.size()) throw ModelError("optimizer state shape mismatch");

    state.t += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));

    for (std::size_t i = 0; i < views.size(); ++i) {
        auto& p = *views[i].first;
        auto& g = *views[i].second;
        if (!g.allFinite()) throw ModelError("non-finite gradient");
        auto& m = state.m[i];
        auto& v = state.v[i];
        m = static_cast<float>(config.beta1) * m + static_cast<float>(1.0 - config.beta1) * g;
        v = static_cast<float>(config.beta2) * v +
            static_cast<float>(1.0 - config.beta2) * g.cwiseProduct(g);
        for (Eigen::Index r = 0; r < p.rows(); ++r)
            for (Eigen::Index c = 0; c < p.cols(); ++c) {
                const double mhat = static_cast<double>(m(r, c)) / bc1;
                const double vhat = static_cast<double>(v(r, c)) / bc2;
                const double update =
                    mhat / (std::sqrt(vhat) + config.eps) +
                    config.weight_decay * static_cast<double>(p(r, c));
                p(r, c) = static_cast<float>(static_cast<double>(p(r, c)) - lr * update);
            }
    }
    if (model.lora_attached()) model.refresh_effective();
}

void TrainLog::write_jsonl(const std::string& path) const {
    std::string buf;
    for (const auto& s : steps) {
        nlohmann::json j{{"step", s.step}, {"lr", s.lr}, {"loss", s.loss},
                         {"grad_norm", s.grad_norm}};
        if (s.margin) j["margin"] = *s.margin;
        buf += j.dump();
        buf += '\n';
    }
    atomic_write(path, buf);
}

namespace {

double clip_grads(Grads& grads, double clip) {
    const double norm = std::sqrt(grads.squared_norm());
    if (clip > 0 && norm > clip) {
        const float scale = static_cast<float>(clip / norm);
        visit_arrays(grads.arrays, [&](const std::string&, MatT<float>& m) { m *= scale; });
        for (auto& [k, a] : grads.adapters) {
            a.down *= scale;
            a.up *= scale;
        }
    }
    return norm;
}

template <class Item>
struct EpochPlan {
    std::vector<std::size_t> order;
};

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, "epoch", {static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);
    return order;
}

}  // namespace

TrainLog train_sft(Model& model, const std::vector<SftPair>& pairs, const TrainConfig& config,
                   const ProgressFn& progress) {
    config.validate();
    if (pairs.empty()) throw ModelError("empty training set");

    if (config.lora_rank > 0)
        lora_attach(model, config.lora_rank, config.lora_alpha,
                    derive_seed(config.seed, "lora", {}), {});

    std::vector<SftItem> items(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i)
        items[i].seq = encode_pair(model.vocab, pairs[i].prompt, pairs[i].completion,
                                   config.append_eos);

    const std::int64_t batches_per_epoch =
        static_cast<std::int64_t>((pairs.size() + config.batch_size - 1) / config.batch_size);
    const std::int64_t total_steps = batches_per_epoch * config.epochs;

    TrainLog log;
    Grads grads = make_grads(model);
    AdamWState state;
    std::int64_t step = 0;
    std::vector<SftItem> batch;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = epoch_order(items.size(), config.seed, epoch);
        for (std::size_t pos = 0; pos < order.size(); pos += config.batch_size) {
            batch.clear();
            for (std::size_t i = pos; i < std::min(order.size(), pos + config.batch_size); ++i)
                batch.push_back(items[order[i]]);

            grads.zero();
            const double loss = loss_sft<float>(model, batch, &grads);
            const double norm = clip_grads(grads, config.grad_clip);
            const double lr = lr_at(step, total_steps, config);
            adamw_step(model, grads, state, lr, config.adamw);

            StepLog s{step, lr, loss, std::nullopt, norm};
            log.steps.push_back(s);
            if (progress) progress(s);
            ++step;
        }
    }
    if (!log.steps.empty()) {
        log.initial_loss = log.steps.front().loss;
        log.final_loss = log.steps.back().loss;
    }
    if (model.lora_attached()) lora_merge(model);
    return log;
}

TrainLog train_pref(Model& model, const std::vector<PrefTriplet>& triplets,
                    const TrainConfig& config, const ProgressFn& progress) {
    config.validate();
    if (triplets.empty()) throw ModelError("empty training set");
    if (config.objective == Objective::sft)
        throw ModelError("train_pref requires a preference objective");

    // Frozen reference = the incoming checkpoint (not used by ORPO).
    std::optional<Model> ref;
    if (config.objective != Objective::orpo) ref = model;

    if (config.lora_rank > 0)
        lora_attach(model, config.lora_rank, config.lora_alpha,
                    derive_seed(config.seed, "lora", {}), {});

    std::vector<PrefItem> items(triplets.size());
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        items[i].chosen =
            encode_pair(model.vocab, triplets[i].prompt, triplets[i].chosen, config.append_eos);
        items[i].rejected =
            encode_pair(model.vocab, triplets[i].prompt, triplets[i].rejected, config.append_eos);
    }

    const std::int64_t batches_per_epoch =
        static_cast<std::int64_t>((items.size() + config.batch_size - 1) / config.batch_size);
    const std::int64_t total_steps = batches_per_epoch * config.epochs;

    TrainLog log;
    Grads grads = make_grads(model);
    AdamWState state;
    std::int64_t step = 0;
    std::vector<PrefItem> batch;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = epoch_order(items.size(), config.seed, epoch);
        for (std::size_t pos = 0; pos < order.size(); pos += config.batch_size) {
            batch.clear();
            for (std::size_t i = pos; i < std::min(order.size(), pos + config.batch_size); ++i)
                batch.push_back(items[order[i]]);

            grads.zero();
            LossStats stats;
            double loss = 0;
            switch (config.objective) {
                case Objective::dpo:
                    loss = loss_dpo<float>(model, *ref, batch, config.beta, &grads, &stats);
                    break;
                case Objective::ipo:
                    loss = loss_ipo<float>(model, *ref, batch, config.beta, &grads, &stats);
                    break;
                case Objective::kto:
                    loss = loss_kto<float>(model, *ref, batch, config.beta, config.kto_z0, &grads,
                                           &stats);
                    break;
                case Objective::orpo:
                    loss = loss_orpo<float>(model, batch, config.lambda, &grads, &stats);
                    break;
                case Objective::sft: break;
            }
            const double norm = clip_grads(grads, config.grad_clip);
            const double lr = lr_at(step, total_steps, config);
            adamw_step(model, grads, state, lr, config.adamw);

            StepLog s{step, lr, loss, stats.mean_margin, norm};
            log.steps.push_back(s);
            if (progress) progress(s);
            ++step;
        }
    }
    if (!log.steps.empty()) {
        log.initial_loss = log.steps.front().loss;
        log.final_loss = log.steps.back().loss;
    }
    if (model.lora_attached()) lora_merge(model);
    return log;
}

}  // namespace cotforge
