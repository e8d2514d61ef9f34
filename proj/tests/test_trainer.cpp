#include "doctest.h"

#include <filesystem>
#include <limits>

#include "cotforge/digest.hpp"
#include "cotforge/gradcheck.hpp"
#include "cotforge/jsonl.hpp"
#include "cotforge/presets.hpp"
#include "cotforge/trainer.hpp"

using namespace cotforge;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.context_len = 96;
    return cfg;
}

std::vector<SftPair> toy_pairs() {
    std::vector<SftPair> pairs;
    for (int i = 0; i < 10; ++i) {
        const std::string n = std::to_string(i);
        pairs.push_back({"count " + n, "next is " + std::to_string(i + 1) + ".", {n, 1}});
    }
    return pairs;
}

std::vector<PrefTriplet> toy_triplets() {
    std::vector<PrefTriplet> out;
    for (int i = 0; i < 12; ++i) {
        PrefTriplet t;
        t.prompt = "Start with " + std::to_string(10 + i) + ".";
        t.chosen = std::to_string(10 + i) + " + 2 = " + std::to_string(12 + i) + ".";
        t.rejected = std::to_string(10 + i) + " + 2 = " + std::to_string(50 + i) + ".";
        t.scheme = Scheme::digit;
        t.origin = {std::to_string(i), 1, 0};
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace

TEST_CASE("lr schedule endpoints and linearity") {
    TrainConfig c;
    c.lr_max = 2.0;
    c.warmup_steps = 10;
    CHECK(lr_at(0, 110, c) == 0.0);
    CHECK(lr_at(10, 110, c) == 2.0);
    CHECK(lr_at(60, 110, c) == doctest::Approx(1.0));  // midpoint of decay
    CHECK(lr_at(110, 110, c) == 0.0);

    // the summed schedule matches the closed-form trapezoid area
    double total = 0;
    for (int s = 0; s < 110; ++s) total += lr_at(s, 110, c);
    // warmup sums to lr*(0+..+9)/10, decay from step 10..109 sums the ramp
    double expected = 0;
    for (int s = 0; s < 10; ++s) expected += 2.0 * s / 10.0;
    for (int s = 10; s < 110; ++s) expected += 2.0 * (110.0 - s) / 100.0;
    CHECK(total == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("lr schedule without warmup starts at the peak") {
    TrainConfig c;
    c.lr_max = 1.0;
    c.warmup_steps = 0;
    CHECK(lr_at(0, 100, c) == 1.0);
    CHECK(lr_at(50, 100, c) == doctest::Approx(0.5));
}

TEST_CASE("adamw basic behaviors") {
    auto model = init_model<float>(tiny_config(), Vocab::standard(), 30);
    Grads grads = make_grads(model);
    AdamWState state;
    AdamWConfig cfg;

    SUBCASE("zero gradients leave parameters unchanged") {
        const auto before = model.arrays.w_out;
        grads.zero();
        adamw_step(model, grads, state, 1e-2, cfg);
        CHECK((model.arrays.w_out - before).cwiseAbs().maxCoeff() == 0.0f);
    }

    SUBCASE("first step follows the closed form") {
        grads.zero();
        visit_arrays(grads.arrays,
                     [](const std::string&, MatT<float>& m) { m.setConstant(0.25f); });
        const float w0 = model.arrays.w_out(0, 0);
        adamw_step(model, grads, state, 1e-2, cfg);
        // bias-corrected first step: update = lr * g / (|g| + eps)
        const double expected = w0 - 1e-2 * 0.25 / (0.25 + cfg.eps);
        CHECK(model.arrays.w_out(0, 0) == doctest::Approx(expected).epsilon(1e-5));
    }

    SUBCASE("pure weight decay shrinks parameters") {
        cfg.weight_decay = 0.1;
        grads.zero();
        const float w0 = model.arrays.w_out(0, 0);
        adamw_step(model, grads, state, 1e-2, cfg);
        CHECK(model.arrays.w_out(0, 0) == doctest::Approx(w0 * (1.0 - 1e-2 * 0.1)));
    }

    SUBCASE("non-finite gradients abort") {
        grads.zero();
        grads.arrays.w_out(0, 0) = std::numeric_limits<float>::quiet_NaN();
        CHECK_THROWS_AS(adamw_step(model, grads, state, 1e-2, cfg), ModelError);
    }
}

TEST_CASE("train_sft descends and is bit-deterministic") {
    const auto pairs = toy_pairs();
    TrainConfig config;
    config.objective = Objective::sft;
    config.lr_max = 2e-3;
    config.epochs = 3;
    config.batch_size = 4;
    config.seed = 5;

    auto run = [&](const std::string& path) {
        Model model = init_model<float>(tiny_config(), Vocab::standard(), 31);
        const TrainLog log = train_sft(model, pairs, config);
        save_checkpoint(path, model, CheckpointMeta{});
        return log;
    };
    namespace fs = std::filesystem;
    const std::string p1 = fs::temp_directory_path() / "sft_a.bin";
    const std::string p2 = fs::temp_directory_path() / "sft_b.bin";
    const TrainLog log1 = run(p1);
    const TrainLog log2 = run(p2);

    CHECK(log1.final_loss < log1.initial_loss);
    CHECK(digest_file(p1) == digest_file(p2));
    REQUIRE(log1.steps.size() == log2.steps.size());
    for (std::size_t i = 0; i < log1.steps.size(); ++i)
        CHECK(log1.steps[i].loss == log2.steps[i].loss);

    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("train_pref starts at ln 2 and grows the margin") {
    Model model = init_model<float>(tiny_config(), Vocab::standard(), 32);
    TrainConfig config;
    config.objective = Objective::dpo;
    config.beta = 0.2;
    config.lr_max = 1e-3;
    config.epochs = 2;
    config.batch_size = 6;
    config.seed = 9;

    const TrainLog log = train_pref(model, toy_triplets(), config);
    REQUIRE(!log.steps.empty());
    // policy == reference before the first update
    CHECK(log.steps.front().loss == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    REQUIRE(log.steps.front().margin.has_value());
    REQUIRE(log.steps.back().margin.has_value());
    CHECK(*log.steps.back().margin > *log.steps.front().margin);
}

TEST_CASE("train_pref supports every preference objective") {
    const auto triplets = toy_triplets();
    for (const Objective objective :
         {Objective::dpo, Objective::ipo, Objective::kto, Objective::orpo}) {
        Model model = init_model<float>(tiny_config(), Vocab::standard(), 33);
        TrainConfig config;
        config.objective = objective;
        config.beta = 0.2;
        config.lambda = 0.1;
        config.lr_max = 5e-4;
        config.epochs = 1;
        config.batch_size = 4;
        const TrainLog log = train_pref(model, triplets, config);
        for (const auto& s : log.steps) CHECK(std::isfinite(s.loss));
    }
    Model model = init_model<float>(tiny_config(), Vocab::standard(), 34);
    TrainConfig config;
    config.objective = Objective::sft;
    CHECK_THROWS_AS(train_pref(model, triplets, config), ModelError);
}

TEST_CASE("train with lora trains only the adapters") {
    Model model = init_model<float>(tiny_config(), Vocab::standard(), 35);
    const Model before = model;
    TrainConfig config;
    config.objective = Objective::sft;
    config.lr_max = 1e-3;
    config.epochs = 2;
    config.batch_size = 4;
    config.lora_rank = 2;
    config.lora_alpha = 16;
    train_sft(model, toy_pairs(), config);
    // merged output differs from base, but the embedding tables were frozen
    CHECK(!model.lora_attached());
    CHECK((model.arrays.wte - before.arrays.wte).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((model.arrays.layers[0].wq - before.arrays.layers[0].wq).cwiseAbs().maxCoeff() >
          0.0f);
}

TEST_CASE("gradcheck passes for all five objectives") {
    for (const Objective objective : {Objective::sft, Objective::dpo, Objective::ipo,
                                      Objective::kto, Objective::orpo}) {
        // the spec step: error is finite-difference truncation, O(h^2)
        const auto at_spec_step = gradcheck_objective(objective, 1e-3, 60, 1);
        INFO(objective_name(objective) << " max rel err " << at_spec_step.max_rel_err);
        CHECK(at_spec_step.pass(1e-3));
        // a smaller step drops below the extended-precision gate
        const auto fine = gradcheck_objective(objective, 3e-5, 60, 1);
        INFO(objective_name(objective) << " fine-step rel err " << fine.max_rel_err);
        CHECK(fine.pass(1e-6));
    }
}

TEST_CASE("gradcheck catches an injected sign bug") {
    const auto result = gradcheck_objective(Objective::sft, 1e-3, 40, 1, true);
    CHECK(!result.pass(1e-3));
}

TEST_CASE("presets echo the published hyperparameters") {
    const TrainConfig sft = preset("paper-sft");
    CHECK(sft.lr_max == doctest::Approx(1.4e-5));
    CHECK(sft.epochs == 3);
    CHECK(sft.batch_size == 16);
    CHECK(sft.lora_rank == 64);
    CHECK(sft.lora_alpha == 16);

    const TrainConfig dpo = preset("paper-dpo");
    CHECK(dpo.beta == doctest::Approx(0.2));
    CHECK(dpo.lr_max == doctest::Approx(8e-6));
    CHECK(dpo.warmup_steps == 10);
    CHECK(dpo.epochs == 1);

    const TrainConfig orpo = preset("paper-orpo");
    CHECK(orpo.lambda == doctest::Approx(0.001));
    CHECK(orpo.lr_max == doctest::Approx(1e-8));

    CHECK_THROWS_AS(preset("nonsense"), DataError);
    for (const auto& name : preset_names()) CHECK_NOTHROW(preset(name).validate());
}

TEST_CASE("train log serializes") {
    namespace fs = std::filesystem;
    TrainLog log;
    log.steps.push_back({0, 1e-3, 2.5, 0.1, 0.9});
    log.steps.push_back({1, 9e-4, 2.4, std::nullopt, 0.8});
    const std::string path = fs::temp_directory_path() / "log.jsonl";
    log.write_jsonl(path);
    const std::string text = read_file(path);
    CHECK(text.find("\"margin\":0.1") != std::string::npos);
    CHECK(text.find("\"step\":1") != std::string::npos);
    fs::remove(path);
}
