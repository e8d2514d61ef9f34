#include "cotforge/forge.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>

#include "cotforge/digest.hpp"
#include "cotforge/jsonl.hpp"
#include "cotforge/text.hpp"

namespace cotforge {

const char* scheme_name(Scheme s) {
    switch (s) {
        case Scheme::digit: return "digit";
        case Scheme::weak_llm: return "weak_llm";
        case Scheme::weak_llm_corrupted: return "weak_llm_corrupted";
        case Scheme::iterative: return "iterative";
    }
    return "digit";
}

Scheme scheme_from_name(const std::string& name) {
    if (name == "digit") return Scheme::digit;
    if (name == "weak_llm") return Scheme::weak_llm;
    if (name == "weak_llm_corrupted") return Scheme::weak_llm_corrupted;
    if (name == "iterative") return Scheme::iterative;
    throw DataError("unknown scheme: " + name);
}

const char* target_mode_name(TargetMode m) {
    return m == TargetMode::next_step ? "next_step" : "remaining_steps";
}

TargetMode target_mode_from_name(const std::string& name) {
    if (name == "next_step") return TargetMode::next_step;
    if (name == "remaining_steps") return TargetMode::remaining_steps;
    throw DataError("unknown target mode: " + name);
}

void ForgeConfig::validate() const {
    if (rejects_per_chosen < 1) throw DataError("rejects_per_chosen must be >= 1");
    if (schemes.empty()) throw DataError("at least one scheme required");
    if (max_retries < 1) throw DataError("max_retries must be >= 1");
    if (fewshot_prefix && *fewshot_prefix < 0) throw DataError("fewshot_prefix must be >= 0");
}

std::int64_t ForgeReport::total(const std::string& suffix) const {
    std::int64_t sum = 0;
    for (const auto& [key, value] : counters)
        if (key.size() > suffix.size() &&
            key.compare(key.size() - suffix.size(), suffix.size(), suffix) == 0)
            sum += value;
    return sum;
}

void ForgeReport::bump(Scheme scheme, const std::string& what, std::int64_t by) {
    counters[std::string(scheme_name(scheme)) + "." + what] += by;
}

std::string corrupt_digits_once(std::string_view step, Rng& rng) {
    std::string out(step);
    for (char& c : out)
        if (c >= '0' && c <= '9') c = static_cast<char>('0' + rng.below(10));
    return out;
}

std::string corrupt_digits(std::string_view step, Rng& rng, int max_retries) {
    if (!has_digit(step)) throw DataError("digit-free step");
    for (int i = 0; i < max_retries; ++i) {
        std::string out = corrupt_digits_once(step, rng);
        if (out != step) return out;
    }
    throw DataError("corruption retries exhausted");
}

namespace {

void append_next_step_lines(std::string& out, const CotExample& ex) {
    for (const auto& step : ex.steps) {
        out += "Next step: ";
        out += step;
        out += '\n';
    }
}

}  // namespace

std::string render_weak_prompt(const CotExample& example1, const CotExample& example2,
                               const CotExample& target, int k) {
    if (k < 1) throw DataError("step index must be >= 1");
    std::string out =
        "You are an obedient assistant. Your task is to reason about the following "
        "question. Write only the next step of the reasoning chain. Your answer should "
        "include exactly one following reasoning step and has to be exactly one sentence "
        "long! The answer should start with \"Next step: \". Here are two examples:\n\n";
    out += "Question: " + example1.question + "\n";
    append_next_step_lines(out, example1);
    out += "\nQuestion: " + example2.question + "\n";
    append_next_step_lines(out, example2);
    out += "\nQuestion: " + target.question + "\n";
    const int context_steps = std::min<int>(k - 1, static_cast<int>(target.steps.size()));
    for (int i = 0; i < context_steps; ++i) {
        out += "Next step: ";
        out += target.steps[static_cast<std::size_t>(i)];
        out += '\n';
    }
    return out;
}

std::optional<std::string> filter_weak_response(std::string response) {
    // generation stops at the first line break or full stop
    std::size_t cut = response.size();
    const std::size_t nl = response.find('\n');
    if (nl != std::string::npos) cut = nl;
    const std::size_t dot = response.find('.');
    if (dot != std::string::npos && dot + 1 < cut) cut = dot + 1;  // keep the stop
    response.resize(std::min(cut, response.size()));

    static constexpr std::string_view kPrefix = "Next step: ";
    if (response.size() <= kPrefix.size() || response.compare(0, kPrefix.size(), kPrefix) != 0)
        return std::nullopt;
    std::string sentence = response.substr(kPrefix.size());
    if (trim(sentence).empty()) return std::nullopt;
    return sentence;
}

std::optional<std::string> weak_generate_reject(WeakGenerator& gen, const std::string& prompt) {
    return filter_weak_response(gen.generate(prompt));
}

namespace {

std::string join_steps(const std::vector<std::string>& steps, std::size_t from,
                       std::size_t to_exclusive) {
    std::string out;
    for (std::size_t i = from; i < to_exclusive; ++i) {
        if (!out.empty()) out += ' ';
        out += steps[i];
    }
    return out;
}

}  // namespace

std::vector<SftPair> build_sft_pairs(const CotExample& example, TargetMode mode) {
    std::vector<SftPair> pairs;
    const std::size_t n = example.steps.size();
    pairs.reserve(n);
    std::string prompt = example.question;
    for (std::size_t k = 0; k < n; ++k) {
        SftPair pair;
        pair.prompt = prompt;
        pair.completion = mode == TargetMode::next_step ? example.steps[k]
                                                        : join_steps(example.steps, k, n);
        pair.origin = {example.id, static_cast<int>(k + 1)};
        pairs.push_back(std::move(pair));
        prompt += ' ';
        prompt += example.steps[k];
    }
    return pairs;
}

namespace {

// Deterministic exemplar picks for few-shot prefixes and weak prompts.
std::vector<std::size_t> pick_exemplars(std::size_t pool, std::size_t want, std::uint64_t seed,
                                        std::string_view tag) {
    std::vector<std::size_t> order(pool);
    for (std::size_t i = 0; i < pool; ++i) order[i] = i;
    Rng rng(derive_seed(seed, tag, {pool}));
    rng.shuffle(order);
    order.resize(std::min(pool, want));
    return order;
}

std::string render_fewshot_prefix(const std::vector<CotExample>& examples,
                                  const std::vector<std::size_t>& picks) {
    std::string out;
    for (std::size_t idx : picks) {
        out += "Question: " + examples[idx].rationale_text() + "\n";
    }
    out += "Question: ";
    return out;
}

}  // namespace

std::vector<SftPair> build_sft_dataset(const std::vector<CotExample>& examples,
                                       const ForgeConfig& config) {
    config.validate();
    std::string prefix;
    if (config.fewshot_prefix && *config.fewshot_prefix > 0) {
        const auto picks = pick_exemplars(examples.size(),
                                          static_cast<std::size_t>(*config.fewshot_prefix),
                                          config.seed, "fewshot-prefix");
        prefix = render_fewshot_prefix(examples, picks);
    }
    std::vector<SftPair> out;
    for (const auto& ex : examples) {
        auto pairs = build_sft_pairs(ex, config.target_mode);
        for (auto& p : pairs) {
            if (!prefix.empty()) p.prompt = prefix + p.prompt;
            out.push_back(std::move(p));
        }
    }
    return out;
}

namespace {

struct WeakCall {
    WeakGenerator* gen = nullptr;
    std::mutex* serializer = nullptr;

    std::string generate(const std::string& prompt) const {
        if (serializer) {
            std::lock_guard<std::mutex> lock(*serializer);
            return gen->generate(prompt);
        }
        return gen->generate(prompt);
    }
};

}  // namespace

std::vector<PrefTriplet> build_preference(const std::vector<CotExample>& examples,
                                          const ForgeConfig& config,
                                          const GeneratorMap& generators,
                                          ForgeReport* report) {
    config.validate();
    bool any_weak = false;
    for (const auto& scheme : config.schemes) {
        if (scheme.kind == Scheme::digit) continue;
        any_weak = true;
        auto it = generators.find(scheme.generator);
        if (it == generators.end() || it->second == nullptr)
            throw DataError(std::string("no generator supplied for scheme ") +
                            scheme_name(scheme.kind) + " (key '" + scheme.generator + "')");
    }

    // Two fixed exemplars populate the weak-prompt template for the run.
    std::vector<std::size_t> weak_exemplars;
    if (any_weak) {
        if (examples.size() < 2) throw DataError("weak schemes need at least 2 examples");
        weak_exemplars = pick_exemplars(examples.size(), 2, config.seed, "weak-exemplars");
    }

    std::string prefix;
    if (config.fewshot_prefix && *config.fewshot_prefix > 0) {
        const auto picks = pick_exemplars(examples.size(),
                                          static_cast<std::size_t>(*config.fewshot_prefix),
                                          config.seed, "fewshot-prefix");
        prefix = render_fewshot_prefix(examples, picks);
    }

    std::mutex generator_mutex;
    ForgeReport local_report;
    std::mutex report_mutex;

    std::vector<std::vector<PrefTriplet>> per_example(examples.size());

    auto forge_example = [&](std::size_t ei) {
        const CotExample& ex = examples[ei];
        const auto pairs = build_sft_pairs(ex, config.target_mode);
        ForgeReport rep;
        auto& out = per_example[ei];

        // Weak generations are deterministic per prompt, so one call per
        // (example, step, generator) serves every replica.
        std::map<std::string, std::optional<std::string>> weak_cache;

        for (std::size_t ki = 0; ki < ex.steps.size(); ++ki) {
            const int k = static_cast<int>(ki + 1);
            const std::string& step = ex.steps[ki];
            const std::string tail =
                config.target_mode == TargetMode::remaining_steps && ki + 1 < ex.steps.size()
                    ? " " + join_steps(ex.steps, ki + 1, ex.steps.size())
                    : std::string();
            const std::string& chosen = pairs[ki].completion;

            for (std::size_t si = 0; si < config.schemes.size(); ++si) {
                const SchemeSpec& scheme = config.schemes[si];
                for (int replica = 0; replica < config.rejects_per_chosen; ++replica) {
                    rep.bump(scheme.kind, "attempted");
                    Rng rng(derive_seed(config.seed, ex.id,
                                        {static_cast<std::uint64_t>(k),
                                         static_cast<std::uint64_t>(replica), si}));

                    std::string rejected_step;
                    if (scheme.kind == Scheme::digit) {
                        if (!has_digit(step)) {
                            rep.bump(scheme.kind, "skipped_digit_free");
                            continue;
                        }
                        rejected_step = corrupt_digits(step, rng, config.max_retries);
                    } else {
                        const std::string cache_key =
                            scheme.generator + "#" + std::to_string(k);
                        auto cached = weak_cache.find(cache_key);
                        if (cached == weak_cache.end()) {
                            WeakGenerator* gen = generators.at(scheme.generator);
                            WeakCall call{gen, gen->safely_shareable() ? nullptr
                                                                       : &generator_mutex};
                            const std::string prompt = render_weak_prompt(
                                examples[weak_exemplars[0]], examples[weak_exemplars[1]], ex, k);
                            std::optional<std::string> sentence;
                            try {
                                sentence = filter_weak_response(call.generate(prompt));
                            } catch (const std::exception& e) {
                                throw DataError(std::string("weak generator failed on ") +
                                                ex.id + " step " + std::to_string(k) + ": " +
                                                e.what());
                            }
                            cached = weak_cache.emplace(cache_key, std::move(sentence)).first;
                        }
                        if (!cached->second) {
                            rep.bump(scheme.kind, "skipped_no_prefix");
                            continue;
                        }
                        rejected_step = *cached->second;

                        const bool corrupt_after = scheme.kind == Scheme::weak_llm_corrupted ||
                                                   scheme.kind == Scheme::iterative;
                        if (corrupt_after && has_digit(rejected_step)) {
                            bool accepted = false;
                            for (int t = 0; t < config.max_retries; ++t) {
                                std::string cand = corrupt_digits_once(rejected_step, rng);
                                if (cand != rejected_step && cand != step) {
                                    rejected_step = std::move(cand);
                                    accepted = true;
                                    break;
                                }
                            }
                            if (!accepted) {
                                rep.bump(scheme.kind, "skipped_retries_exhausted");
                                continue;
                            }
                        }
                        if (rejected_step == step) {
                            rep.bump(scheme.kind, "skipped_equal_chosen");
                            continue;
                        }
                    }

                    PrefTriplet triplet;
                    triplet.prompt = prefix.empty() ? pairs[ki].prompt : prefix + pairs[ki].prompt;
                    triplet.chosen = chosen;
                    triplet.rejected = rejected_step + tail;
                    triplet.scheme = scheme.kind;
                    triplet.origin = {ex.id, k, replica};
                    if (triplet.rejected == triplet.chosen) {
                        rep.bump(scheme.kind, "skipped_equal_chosen");
                        continue;
                    }
                    rep.bump(scheme.kind, "built");
                    out.push_back(std::move(triplet));
                }
            }
        }

        std::lock_guard<std::mutex> lock(report_mutex);
        for (const auto& [key, value] : rep.counters) local_report.counters[key] += value;
    };

    const std::size_t workers =
        std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()),
                              examples.size() ? examples.size() : 1);
    if (workers <= 1 || examples.size() < 16) {
        for (std::size_t i = 0; i < examples.size(); ++i) forge_example(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> cursor{0};
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = cursor.fetch_add(1); i < examples.size();
                     i = cursor.fetch_add(1))
                    forge_example(i);
            });
        for (auto& t : pool) t.join();
    }

    std::vector<PrefTriplet> out;
    for (auto& chunk : per_example)
        for (auto& t : chunk) out.push_back(std::move(t));
    if (report) *report = std::move(local_report);
    return out;
}

std::vector<SftPair> build_pretrain_pairs(const std::vector<CotExample>& examples,
                                          int chunk_chars, double weak_format_fraction,
                                          std::uint64_t seed) {
    if (chunk_chars < 16) throw DataError("chunk_chars too small");
    if (examples.size() < 3) throw DataError("pretraining needs at least 3 examples");

    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, "pretrain", {examples.size()}));
    rng.shuffle(order);

    std::string stream;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const CotExample& ex = examples[order[oi]];
        if (rng.uniform01() < weak_format_fraction) {
            const CotExample& e1 = examples[order[(oi + 1) % order.size()]];
            const CotExample& e2 = examples[order[(oi + 2) % order.size()]];
            const int k = static_cast<int>(rng.range(1, static_cast<std::int64_t>(ex.steps.size())));
            stream += render_weak_prompt(e1, e2, ex, k);
            for (std::size_t j = static_cast<std::size_t>(k - 1); j < ex.steps.size(); ++j) {
                stream += "Next step: ";
                stream += ex.steps[j];
                stream += '\n';
            }
        } else {
            stream += "Question: " + ex.rationale_text() + "\n";
        }
    }

    std::vector<SftPair> chunks;
    const std::size_t width = static_cast<std::size_t>(chunk_chars);
    for (std::size_t pos = 0; pos < stream.size(); pos += width) {
        std::string piece = stream.substr(pos, width);
        if (piece.size() < 32 && !chunks.empty()) break;  // drop a tiny tail
        SftPair pair;
        pair.completion = std::move(piece);
        pair.origin = {"pretrain", static_cast<int>(chunks.size() + 1)};
        chunks.push_back(std::move(pair));
    }
    return chunks;
}

// --- dataset files ------------------------------------------------------

void write_sft_jsonl(const std::string& path, const std::vector<SftPair>& pairs) {
    std::string buf;
    for (const auto& p : pairs) {
        nlohmann::json j{{"prompt", p.prompt},
                         {"completion", p.completion},
                         {"origin", {{"id", p.origin.example_id}, {"k", p.origin.step_index}}}};
        buf += j.dump();
        buf += '\n';
    }
    atomic_write(path, buf);
}

std::vector<SftPair> read_sft_jsonl(const std::string& path) {
    std::vector<SftPair> out;
    for_each_jsonl(path, [&](std::size_t lineno, const nlohmann::json& j) {
        try {
            SftPair p;
            p.prompt = j.at("prompt").get<std::string>();
            p.completion = j.at("completion").get<std::string>();
            p.origin.example_id = j.at("origin").at("id").get<std::string>();
            p.origin.step_index = j.at("origin").at("k").get<int>();
            out.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    });
    return out;
}

void write_pref_jsonl(const std::string& path, const std::vector<PrefTriplet>& triplets) {
    std::string buf;
    for (const auto& t : triplets) {
        nlohmann::json j{{"prompt", t.prompt},
                         {"chosen", t.chosen},
                         {"rejected", t.rejected},
                         {"scheme", scheme_name(t.scheme)},
                         {"origin",
                          {{"id", t.origin.example_id},
                           {"k", t.origin.step_index},
                           {"replica", t.origin.replica}}}};
        buf += j.dump();
        buf += '\n';
    }
    atomic_write(path, buf);
}

std::vector<PrefTriplet> read_pref_jsonl(const std::string& path) {
    std::vector<PrefTriplet> out;
    for_each_jsonl(path, [&](std::size_t lineno, const nlohmann::json& j) {
        try {
            PrefTriplet t;
            t.prompt = j.at("prompt").get<std::string>();
            t.chosen = j.at("chosen").get<std::string>();
            t.rejected = j.at("rejected").get<std::string>();
            t.scheme = scheme_from_name(j.at("scheme").get<std::string>());
            t.origin.example_id = j.at("origin").at("id").get<std::string>();
            t.origin.step_index = j.at("origin").at("k").get<int>();
            t.origin.replica = j.at("origin").at("replica").get<int>();
            if (t.chosen == t.rejected)
                throw DataError("chosen equals rejected");
            out.push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    });
    return out;
}

void write_forge_manifest(const std::string& dataset_path, const ForgeConfig& config,
                          const ForgeReport& report, std::int64_t item_count,
                          const std::string& kind) {
    nlohmann::json schemes = nlohmann::json::array();
    for (const auto& s : config.schemes)
        schemes.push_back({{"kind", scheme_name(s.kind)}, {"generator", s.generator}});
    nlohmann::json j{
        {"kind", kind},
        {"config",
         {{"target_mode", target_mode_name(config.target_mode)},
          {"rejects_per_chosen", config.rejects_per_chosen},
          {"schemes", schemes},
          {"max_retries", config.max_retries},
          {"fewshot_prefix", config.fewshot_prefix ? nlohmann::json(*config.fewshot_prefix)
                                                   : nlohmann::json(nullptr)},
          {"seed", config.seed}}},
        {"counters", report.counters},
        {"items", item_count},
        {"digest", digest_file(dataset_path)}};
    atomic_write(dataset_path + ".manifest.json", j.dump(2) + "\n");
}

}  // namespace cotforge
