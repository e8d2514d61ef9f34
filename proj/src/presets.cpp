#include "cotforge/presets.hpp"

namespace cotforge {

TrainConfig preset(const std::string& name) {
    TrainConfig c;
    if (name == "paper-sft") {
        c.objective = Objective::sft;
        c.lr_max = 1.4e-5;
        c.epochs = 3;
        c.batch_size = 16;
        c.warmup_steps = 10;
        c.lora_rank = 64;
        c.lora_alpha = 16;
        return c;
    }
    if (name == "paper-dpo" || name == "paper-ipo" || name == "paper-kto") {
        c.objective = name == "paper-dpo" ? Objective::dpo
                      : name == "paper-ipo" ? Objective::ipo
                                            : Objective::kto;
        c.beta = 0.2;
        c.lr_max = 8e-6;
        c.warmup_steps = 10;
        c.epochs = 1;
        c.batch_size = 16;
        c.lora_rank = 64;
        c.lora_alpha = 16;
        return c;
    }
    if (name == "paper-orpo") {
        c.objective = Objective::orpo;
        c.lambda = 0.001;
        c.lr_max = 1e-8;
        c.warmup_steps = 10;
        c.epochs = 1;
        c.batch_size = 16;
        c.lora_rank = 64;
        c.lora_alpha = 16;
        return c;
    }
    if (name == "desk-pretrain") {
        c.objective = Objective::sft;
        c.lr_max = 1e-3;
        c.epochs = 2;
        c.batch_size = 8;
        c.warmup_steps = 10;
        c.append_eos = false;  // raw text chunks
        return c;
    }
    if (name == "desk-sft") {
        c.objective = Objective::sft;
        c.lr_max = 3e-4;
        c.epochs = 3;
        c.batch_size = 16;
        c.warmup_steps = 10;
        return c;
    }
    if (name == "desk-dpo" || name == "desk-ipo" || name == "desk-kto") {
        c.objective = name == "desk-dpo" ? Objective::dpo
                      : name == "desk-ipo" ? Objective::ipo
                                           : Objective::kto;
        c.beta = 0.2;
        c.lr_max = 3e-5;
        c.warmup_steps = 10;
        c.epochs = 1;
        c.batch_size = 16;
        return c;
    }
    if (name == "desk-orpo") {
        c.objective = Objective::orpo;
        c.lambda = 0.001;
        c.lr_max = 3e-4;
        c.warmup_steps = 10;
        c.epochs = 1;
        c.batch_size = 16;
        return c;
    }
    throw DataError("unknown preset: " + name);
}

std::vector<std::string> preset_names() {
    return {"paper-sft", "paper-dpo", "paper-ipo", "paper-kto", "paper-orpo",
            "desk-pretrain", "desk-sft", "desk-dpo", "desk-ipo", "desk-kto", "desk-orpo"};
}

ModelConfig desk_model_config() {
    ModelConfig cfg;
    cfg.d_model = 32;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_ff = 128;
    cfg.context_len = 512;
    return cfg;
}

SyntheticSpec desk_synth_spec(std::uint64_t seed, int count) {
    SyntheticSpec spec;
    spec.n_ops_min = 1;
    spec.n_ops_max = 3;
    spec.operand_min = 2;
    spec.operand_max = 99;
    spec.allowed_ops = "+-*";
    spec.magnitude_bound = 9999;
    spec.seed = seed;
    spec.count = count;
    return spec;
}

}  // namespace cotforge
