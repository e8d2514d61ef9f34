// Command-line surface: synthesize -> forge -> train -> eval -> report, plus
// parsing of raw corpora, model init, and the gradient-check suite.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "cotforge/digest.hpp"
#include "cotforge/evaluate.hpp"
#include "cotforge/forge.hpp"
#include "cotforge/gradcheck.hpp"
#include "cotforge/jsonl.hpp"
#include "cotforge/lm_weak_generator.hpp"
#include "cotforge/manifest.hpp"
#include "cotforge/presets.hpp"
#include "cotforge/report.hpp"
#include "cotforge/trainer.hpp"

namespace cf = cotforge;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

std::string basename_of(const std::string& path) {
    return std::filesystem::path(path).filename().string();
}

// --- synth ------------------------------------------------------------------

int cmd_synth(const cf::SyntheticSpec& spec, const std::string& out) {
    Timer timer;
    cf::OutputLock lock(out);
    const auto examples = cf::gen_synthetic(spec);
    cf::write_cot_jsonl(out, examples);

    cf::RunManifest m;
    m.command = "synth";
    m.config = {{"count", spec.count},
                {"seed", spec.seed},
                {"n_ops", {spec.n_ops_min, spec.n_ops_max}},
                {"operand", {spec.operand_min, spec.operand_max}},
                {"ops", spec.allowed_ops},
                {"magnitude_bound", spec.magnitude_bound}};
    m.seed = spec.seed;
    m.add_output(out);
    m.wall_time_s = timer.seconds();
    m.write(out + ".manifest.json");
    std::cout << "wrote " << examples.size() << " examples to " << out << "\n";
    return 0;
}

// --- parse ------------------------------------------------------------------

int cmd_parse(const std::string& format, const std::string& in, const std::string& out) {
    Timer timer;
    cf::OutputLock lock(out);
    std::vector<cf::CotExample> examples;
    cf::ParseReport report;
    if (format == "gsm8k") {
        const auto records = cf::read_gsm8k_jsonl(in);
        for (std::size_t i = 0; i < records.size(); ++i)
            examples.push_back(
                cf::parse_gsm8k(records[i], "gsm8k-" + std::to_string(i), &report));
    } else if (format == "aqua") {
        const auto records = cf::read_aqua_jsonl(in);
        for (std::size_t i = 0; i < records.size(); ++i)
            examples.push_back(cf::parse_aqua(records[i], "aqua-" + std::to_string(i), &report));
    } else {
        std::cerr << "unknown format: " << format << "\n";
        return 1;
    }
    cf::write_cot_jsonl(out, examples);

    double steps = 0;
    for (const auto& ex : examples) steps += static_cast<double>(ex.steps.size());

    cf::RunManifest m;
    m.command = "parse";
    m.config = {{"format", format},
                {"parsed", report.parsed},
                {"unbalanced_annotations", report.unbalanced_annotations},
                {"mean_steps", examples.empty() ? 0.0 : steps / examples.size()}};
    m.add_input(in);
    m.add_output(out);
    m.wall_time_s = timer.seconds();
    m.write(out + ".manifest.json");
    std::cout << "parsed " << examples.size() << " examples (mean steps "
              << (examples.empty() ? 0.0 : steps / examples.size()) << ", "
              << report.unbalanced_annotations << " unbalanced annotations)\n";
    return 0;
}

// --- forge ------------------------------------------------------------------

struct ForgeArgs {
    std::string corpus;
    std::string out_sft, out_pref, out_pretrain;
    cf::ForgeConfig config;
    std::vector<std::string> scheme_args;  // "digit" or "weak_llm:ckpt.bin"
    int pretrain_chunk = 511;
    double pretrain_weak_fraction = 0.25;
    int weak_max_new = 64;
    bool weak_shareable = false;
    int fewshot_prefix = -1;
};

int cmd_forge(ForgeArgs& args) {
    Timer timer;
    const auto examples = cf::read_cot_jsonl(args.corpus);
    if (args.fewshot_prefix >= 0) args.config.fewshot_prefix = args.fewshot_prefix;

    std::vector<std::unique_ptr<cf::WeakGenerator>> owned;
    std::vector<cf::Model> owned_models;
    owned_models.reserve(args.scheme_args.size());
    cf::GeneratorMap generators;
    for (const auto& arg : args.scheme_args) {
        cf::SchemeSpec spec;
        const auto colon = arg.find(':');
        spec.kind = cf::scheme_from_name(arg.substr(0, colon));
        if (colon != std::string::npos) {
            spec.generator = arg.substr(colon + 1);
            if (!generators.count(spec.generator)) {
                owned_models.push_back(cf::load_checkpoint(spec.generator));
                owned.push_back(std::make_unique<cf::LmWeakGenerator>(
                    owned_models.back(), args.weak_max_new, args.weak_shareable));
                generators[spec.generator] = owned.back().get();
            }
        } else if (spec.kind != cf::Scheme::digit) {
            std::cerr << "scheme " << arg << " needs a generator checkpoint (scheme:ckpt)\n";
            return 1;
        }
        args.config.schemes.push_back(spec);
    }

    cf::RunManifest m;
    m.command = "forge";
    m.add_input(args.corpus);
    m.seed = args.config.seed;

    if (!args.out_sft.empty()) {
        cf::OutputLock lock(args.out_sft);
        cf::ForgeConfig cfg = args.config;
        if (cfg.schemes.empty()) cfg.schemes.push_back({cf::Scheme::digit, ""});
        const auto pairs = cf::build_sft_dataset(examples, cfg);
        cf::write_sft_jsonl(args.out_sft, pairs);
        cf::write_forge_manifest(args.out_sft, cfg, cf::ForgeReport{},
                                 static_cast<std::int64_t>(pairs.size()), "sft");
        m.add_output(args.out_sft);
        std::cout << "sft pairs: " << pairs.size() << " -> " << args.out_sft << "\n";
    }
    if (!args.out_pretrain.empty()) {
        cf::OutputLock lock(args.out_pretrain);
        const auto chunks = cf::build_pretrain_pairs(examples, args.pretrain_chunk,
                                                     args.pretrain_weak_fraction,
                                                     args.config.seed);
        cf::write_sft_jsonl(args.out_pretrain, chunks);
        cf::ForgeConfig cfg = args.config;
        if (cfg.schemes.empty()) cfg.schemes.push_back({cf::Scheme::digit, ""});
        cf::write_forge_manifest(args.out_pretrain, cfg, cf::ForgeReport{},
                                 static_cast<std::int64_t>(chunks.size()), "pretrain");
        m.add_output(args.out_pretrain);
        std::cout << "pretrain chunks: " << chunks.size() << " -> " << args.out_pretrain << "\n";
    }
    if (!args.out_pref.empty()) {
        if (args.config.schemes.empty()) {
            std::cerr << "preference forging needs at least one --scheme\n";
            return 1;
        }
        cf::OutputLock lock(args.out_pref);
        cf::ForgeReport report;
        const auto triplets = cf::build_preference(examples, args.config, generators, &report);
        cf::write_pref_jsonl(args.out_pref, triplets);
        cf::write_forge_manifest(args.out_pref, args.config, report,
                                 static_cast<std::int64_t>(triplets.size()), "pref");
        m.add_output(args.out_pref);
        std::cout << "preference triplets: " << triplets.size() << " -> " << args.out_pref
                  << "\n";
        for (const auto& [key, value] : report.counters)
            std::cout << "  " << key << ": " << value << "\n";
    }

    nlohmann::json schemes = nlohmann::json::array();
    for (const auto& s : args.config.schemes)
        schemes.push_back({{"kind", cf::scheme_name(s.kind)}, {"generator", s.generator}});
    m.config = {{"target_mode", cf::target_mode_name(args.config.target_mode)},
                {"rejects_per_chosen", args.config.rejects_per_chosen},
                {"schemes", schemes},
                {"seed", args.config.seed}};
    m.wall_time_s = timer.seconds();
    const std::string mpath = (!args.out_pref.empty()   ? args.out_pref
                               : !args.out_sft.empty()  ? args.out_sft
                                                        : args.out_pretrain) +
                              ".run.json";
    m.write(mpath);
    return 0;
}

// --- init -------------------------------------------------------------------

int cmd_init(const cf::ModelConfig& requested, std::uint64_t seed, const std::string& out) {
    Timer timer;
    cf::OutputLock lock(out);
    const cf::Vocab vocab = cf::Vocab::standard();
    const cf::Model model = cf::init_model<float>(requested, vocab, seed);
    cf::CheckpointMeta meta;
    meta.seed = seed;
    meta.objective = "init";
    cf::save_checkpoint(out, model, meta);

    cf::RunManifest m;
    m.command = "init";
    m.config = model.config.to_json();
    m.seed = seed;
    m.add_output(out);
    m.wall_time_s = timer.seconds();
    m.write(out + ".manifest.json");
    std::cout << "initialized checkpoint " << out << " (vocab " << vocab.size() << ")\n";
    return 0;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
    std::string in_ckpt, data, out_ckpt, base_ckpt;
    cf::TrainConfig config;
    bool quiet = false;
};

int cmd_train(TrainArgs& args) {
    Timer timer;
    cf::OutputLock lock(args.out_ckpt);

    cf::CheckpointMeta parent_meta;
    cf::Model model = cf::load_checkpoint(args.in_ckpt, &parent_meta);
    std::string parent_digest = cf::digest_file(args.in_ckpt);

    if (args.config.objective == cf::Objective::orpo && parent_meta.objective == "sft") {
        if (args.base_ckpt.empty()) {
            std::cerr << "orpo bypasses the SFT stage and trains from the base model; "
                         "got an SFT checkpoint (pass the base checkpoint, or --base)\n";
            return 1;
        }
        std::cerr << "warning: orpo ignores the SFT checkpoint and uses --base instead\n";
        model = cf::load_checkpoint(args.base_ckpt, &parent_meta);
        parent_digest = cf::digest_file(args.base_ckpt);
    }

    const std::int64_t every = 50;
    cf::ProgressFn progress = [&](const cf::StepLog& s) {
        if (!args.quiet && (s.step % every == 0))
            std::fprintf(stderr, "step %6lld  lr %.3g  loss %.4f\n",
                         static_cast<long long>(s.step), s.lr, s.loss);
    };

    cf::TrainLog log;
    if (args.config.objective == cf::Objective::sft) {
        const auto pairs = cf::read_sft_jsonl(args.data);
        log = cf::train_sft(model, pairs, args.config, progress);
    } else {
        const auto triplets = cf::read_pref_jsonl(args.data);
        log = cf::train_pref(model, triplets, args.config, progress);
    }

    cf::CheckpointMeta meta;
    meta.step_count = static_cast<std::int64_t>(log.steps.size());
    meta.seed = args.config.seed;
    meta.objective = cf::objective_name(args.config.objective);
    meta.parent_digest = parent_digest;
    meta.extra = args.config.to_json();
    cf::save_checkpoint(args.out_ckpt, model, meta);
    log.write_jsonl(args.out_ckpt + ".log.jsonl");

    cf::RunManifest m;
    m.command = "train";
    m.config = args.config.to_json();
    m.seed = args.config.seed;
    m.parents = {parent_digest};
    m.add_input(args.data);
    m.add_output(args.out_ckpt);
    m.wall_time_s = timer.seconds();
    m.write(args.out_ckpt + ".manifest.json");
    std::cout << "trained " << cf::objective_name(args.config.objective) << ": loss "
              << log.initial_loss << " -> " << log.final_loss << " over " << log.steps.size()
              << " steps (" << m.wall_time_s << " s)\n";
    return 0;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string ckpt, data, pool, out, model_label, dataset_label;
    cf::EvalConfig config;
};

int cmd_eval(EvalArgs& args) {
    Timer timer;
    cf::CheckpointMeta meta;
    const cf::Model model = cf::load_checkpoint(args.ckpt, &meta);
    const auto dataset = cf::read_cot_jsonl(args.data);
    const auto pool = cf::read_cot_jsonl(args.pool.empty() ? args.data : args.pool);

    cf::EvalReport report = cf::evaluate(model, dataset, pool, args.config);
    report.model_label =
        args.model_label.empty() ? meta.objective + ":" + basename_of(args.ckpt)
                                 : args.model_label;
    report.dataset_label =
        args.dataset_label.empty() ? basename_of(args.data) : args.dataset_label;

    if (!args.out.empty()) {
        cf::OutputLock lock(args.out);
        report.write(args.out);
        cf::RunManifest m;
        m.command = "eval";
        m.config = {{"k_shot", args.config.k_shot},
                    {"max_new_tokens", args.config.max_new_tokens},
                    {"temperature", args.config.temperature},
                    {"answer_kind", cf::answer_kind_name(args.config.answer_kind)}};
        m.seed = args.config.seed;
        m.add_input(args.ckpt);
        m.add_input(args.data);
        m.add_output(args.out);
        m.wall_time_s = timer.seconds();
        m.write(args.out + ".manifest.json");
    }

    std::printf("| %-24s | %-20s | %2d-shot | %6.2f %% |\n", report.model_label.c_str(),
                report.dataset_label.c_str(), report.k_shot, report.accuracy);
    return 0;
}

// --- gradcheck -----------------------------------------------------------------

int cmd_gradcheck(const std::string& which, double threshold, int coords, double fd_step,
                  bool inject_sign_bug) {
    std::vector<cf::Objective> objectives;
    if (which == "all") {
        objectives = {cf::Objective::sft, cf::Objective::dpo, cf::Objective::ipo,
                      cf::Objective::kto, cf::Objective::orpo};
    } else {
        objectives = {cf::objective_from_name(which)};
    }
    bool ok = true;
    for (const auto objective : objectives) {
        const auto result =
            cf::gradcheck_objective(objective, fd_step, coords, 0, inject_sign_bug);
        std::printf("%-5s max rel err %.3e (worst group %s, %d coords) %s\n",
                    cf::objective_name(objective), result.max_rel_err,
                    result.worst_group.c_str(), result.coords_checked,
                    result.pass(threshold) ? "PASS" : "FAIL");
        for (const auto& [group, err] : result.per_group)
            std::printf("    %-16s %.3e\n", group.c_str(), err);
        ok = ok && result.pass(threshold);
    }
    return ok ? 0 : 3;
}

// --- report -----------------------------------------------------------------

int cmd_report(const std::vector<std::string>& reports, const std::string& out_md,
               const std::string& out_json) {
    std::vector<cf::EvalSummary> rows;
    rows.reserve(reports.size());
    for (const auto& path : reports) rows.push_back(cf::load_eval_summary(path));
    const std::string md = cf::comparison_markdown(rows);
    std::cout << md;
    if (!out_md.empty()) cf::atomic_write(out_md, md);
    if (!out_json.empty()) cf::atomic_write(out_json, cf::comparison_json(rows).dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"chain-of-thought preference dataset forging and training"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key=value config file; flags win");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic arithmetic CoT corpus");
    cf::SyntheticSpec spec = cf::desk_synth_spec(0, 1000);
    std::string synth_out;
    synth->add_option("--count", spec.count, "examples to generate");
    synth->add_option("--seed", spec.seed, "corpus seed");
    synth->add_option("--n-ops-min", spec.n_ops_min);
    synth->add_option("--n-ops-max", spec.n_ops_max);
    synth->add_option("--operand-min", spec.operand_min);
    synth->add_option("--operand-max", spec.operand_max);
    synth->add_option("--ops", spec.allowed_ops, "subset of +-*");
    synth->add_option("--bound", spec.magnitude_bound, "magnitude bound");
    synth->add_option("--out", synth_out)->required();

    // parse
    auto* parse = app.add_subcommand("parse", "parse GSM8K/AQuA JSONL into canonical CoT form");
    std::string parse_format = "gsm8k", parse_in, parse_out;
    parse->add_option("--format", parse_format, "gsm8k or aqua");
    parse->add_option("--in", parse_in)->required();
    parse->add_option("--out", parse_out)->required();

    // forge
    auto* forge = app.add_subcommand("forge", "build SFT / preference / pretraining datasets");
    ForgeArgs forge_args;
    std::string forge_mode = "next_step";
    forge->add_option("--corpus", forge_args.corpus)->required();
    forge->add_option("--out-sft", forge_args.out_sft);
    forge->add_option("--out-pref", forge_args.out_pref);
    forge->add_option("--out-pretrain", forge_args.out_pretrain);
    forge->add_option("--mode", forge_mode, "next_step or remaining_steps");
    forge->add_option("--multiplicity", forge_args.config.rejects_per_chosen,
                      "rejected answers per chosen, per scheme");
    forge->add_option("--scheme", forge_args.scheme_args,
                      "digit | weak_llm:ckpt | weak_llm_corrupted:ckpt | iterative:ckpt "
                      "(repeatable)");
    forge->add_option("--max-retries", forge_args.config.max_retries);
    forge->add_option("--fewshot-prefix", forge_args.fewshot_prefix,
                      "prepend this many worked examples to every prompt");
    forge->add_option("--seed", forge_args.config.seed);
    forge->add_option("--pretrain-chunk", forge_args.pretrain_chunk);
    forge->add_option("--pretrain-weak-fraction", forge_args.pretrain_weak_fraction);
    forge->add_option("--weak-max-new", forge_args.weak_max_new);
    forge->add_flag("--weak-shareable", forge_args.weak_shareable,
                    "allow concurrent calls into the generator checkpoint");

    // init
    auto* init = app.add_subcommand("init", "initialize a fresh model checkpoint");
    cf::ModelConfig init_cfg = cf::desk_model_config();
    std::uint64_t init_seed = 0;
    std::string init_out;
    init->add_option("--d-model", init_cfg.d_model);
    init->add_option("--n-layers", init_cfg.n_layers);
    init->add_option("--n-heads", init_cfg.n_heads);
    init->add_option("--d-ff", init_cfg.d_ff);
    init->add_option("--context", init_cfg.context_len);
    init->add_option("--seed", init_seed);
    init->add_option("--out", init_out)->required();

    // train
    auto* train = app.add_subcommand("train", "run an SFT or preference training stage");
    TrainArgs train_args;
    std::string preset_name, objective_name_arg;
    train->add_option("--preset", preset_name,
                      "paper-{sft,dpo,ipo,kto,orpo} or desk-{pretrain,sft,dpo,ipo,kto,orpo}");
    train->add_option("--objective", objective_name_arg, "sft|dpo|ipo|kto|orpo");
    train->add_option("--in", train_args.in_ckpt)->required();
    train->add_option("--base", train_args.base_ckpt, "base checkpoint for orpo");
    train->add_option("--data", train_args.data)->required();
    train->add_option("--out", train_args.out_ckpt)->required();
    auto* lr_opt = train->add_option("--lr", train_args.config.lr_max);
    auto* beta_opt = train->add_option("--beta", train_args.config.beta);
    auto* lambda_opt = train->add_option("--lambda", train_args.config.lambda);
    auto* epochs_opt = train->add_option("--epochs", train_args.config.epochs);
    auto* batch_opt = train->add_option("--batch", train_args.config.batch_size);
    auto* warmup_opt = train->add_option("--warmup", train_args.config.warmup_steps);
    auto* lora_opt = train->add_option("--lora-rank", train_args.config.lora_rank);
    auto* alpha_opt = train->add_option("--lora-alpha", train_args.config.lora_alpha);
    auto* wd_opt = train->add_option("--weight-decay", train_args.config.adamw.weight_decay);
    auto* clip_opt = train->add_option("--grad-clip", train_args.config.grad_clip);
    auto* eos_opt = train->add_flag("--no-append-eos", "score raw chunks without terminal EOS");
    train->add_option("--seed", train_args.config.seed);
    train->add_flag("--quiet", train_args.quiet);

    // eval
    auto* eval = app.add_subcommand("eval", "few-shot evaluation of a checkpoint");
    EvalArgs eval_args;
    std::string answer_kind = "number";
    eval->add_option("--ckpt", eval_args.ckpt)->required();
    eval->add_option("--data", eval_args.data)->required();
    eval->add_option("--pool", eval_args.pool, "few-shot pool (defaults to --data)");
    eval->add_option("--k", eval_args.config.k_shot);
    eval->add_option("--max-new", eval_args.config.max_new_tokens);
    eval->add_option("--temperature", eval_args.config.temperature);
    eval->add_option("--seed", eval_args.config.seed);
    eval->add_option("--answer-kind", answer_kind, "number or letter");
    eval->add_option("--out", eval_args.out, "JSON report path");
    eval->add_option("--label", eval_args.model_label);
    eval->add_option("--dataset-label", eval_args.dataset_label);

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    std::string gc_which = "all";
    double gc_threshold = 1e-3, gc_step = 1e-3;
    int gc_coords = 200;
    bool gc_bug = false;
    gradcheck->add_option("--objective", gc_which, "all or one objective");
    gradcheck->add_option("--threshold", gc_threshold);
    gradcheck->add_option("--coords", gc_coords);
    gradcheck->add_option("--step", gc_step);
    gradcheck->add_flag("--inject-sign-bug", gc_bug, "negative control");

    // report
    auto* report = app.add_subcommand("report", "merge eval reports into a comparison table");
    std::vector<std::string> report_inputs;
    std::string report_md, report_json_path;
    report->add_option("reports", report_inputs, "eval report JSON files")->required();
    report->add_option("--out-md", report_md);
    report->add_option("--out-json", report_json_path);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) return cmd_synth(spec, synth_out);
        if (*parse) return cmd_parse(parse_format, parse_in, parse_out);
        if (*forge) {
            forge_args.config.target_mode = cf::target_mode_from_name(forge_mode);
            if (forge_args.out_sft.empty() && forge_args.out_pref.empty() &&
                forge_args.out_pretrain.empty()) {
                std::cerr << "forge needs at least one of --out-sft/--out-pref/--out-pretrain\n";
                return 1;
            }
            return cmd_forge(forge_args);
        }
        if (*init) return cmd_init(init_cfg, init_seed, init_out);
        if (*train) {
            cf::TrainConfig base;
            if (!preset_name.empty()) base = cf::preset(preset_name);
            if (!objective_name_arg.empty())
                base.objective = cf::objective_from_name(objective_name_arg);
            if (preset_name.empty() && objective_name_arg.empty()) {
                std::cerr << "train needs --preset and/or --objective\n";
                return 1;
            }
            // explicit flags win over the preset
            if (lr_opt->count()) base.lr_max = train_args.config.lr_max;
            if (beta_opt->count()) base.beta = train_args.config.beta;
            if (lambda_opt->count()) base.lambda = train_args.config.lambda;
            if (epochs_opt->count()) base.epochs = train_args.config.epochs;
            if (batch_opt->count()) base.batch_size = train_args.config.batch_size;
            if (warmup_opt->count()) base.warmup_steps = train_args.config.warmup_steps;
            if (lora_opt->count()) base.lora_rank = train_args.config.lora_rank;
            if (alpha_opt->count()) base.lora_alpha = train_args.config.lora_alpha;
            if (wd_opt->count()) base.adamw.weight_decay = train_args.config.adamw.weight_decay;
            if (clip_opt->count()) base.grad_clip = train_args.config.grad_clip;
            if (eos_opt->count()) base.append_eos = false;
            base.seed = train_args.config.seed;
            train_args.config = base;
            return cmd_train(train_args);
        }
        if (*eval) {
            eval_args.config.answer_kind = cf::answer_kind_from_name(answer_kind);
            return cmd_eval(eval_args);
        }
        if (*gradcheck) return cmd_gradcheck(gc_which, gc_threshold, gc_coords, gc_step, gc_bug);
        if (*report) return cmd_report(report_inputs, report_md, report_json_path);
    } catch (const cf::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const cf::ModelError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
