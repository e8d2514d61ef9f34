#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cotforge/corpus.hpp"
#include "cotforge/rng.hpp"

namespace cotforge {

struct SftOrigin {
    std::string example_id;
    int step_index = 0;  // 1-based k
};

struct SftPair {
    std::string prompt;      // x z^{1:k-1}, space-joined after the question
    std::string completion;  // z^k, or z^{k:n} in remaining mode
    SftOrigin origin;
};

enum class Scheme { digit, weak_llm, weak_llm_corrupted, iterative };

const char* scheme_name(Scheme s);
Scheme scheme_from_name(const std::string& name);

struct PrefOrigin {
    std::string example_id;
    int step_index = 0;
    int replica = 0;
};

struct PrefTriplet {
    std::string prompt;
    std::string chosen;
    std::string rejected;
    Scheme scheme = Scheme::digit;
    PrefOrigin origin;
};

enum class TargetMode { next_step, remaining_steps };

const char* target_mode_name(TargetMode m);
TargetMode target_mode_from_name(const std::string& name);

// Produces one continuation per prompt. Implementations must be
// deterministic; generate() may be called concurrently only when
// safely_shareable() returns true, otherwise the forge serializes calls.
class WeakGenerator {
public:
    virtual ~WeakGenerator() = default;
    virtual std::string generate(const std::string& prompt) = 0;
    virtual bool safely_shareable() const { return false; }
};

// Test/fixture generator driven by a plain function.
class ScriptedGenerator : public WeakGenerator {
public:
    explicit ScriptedGenerator(std::function<std::string(const std::string&)> fn)
        : fn_(std::move(fn)) {}
    std::string generate(const std::string& prompt) override { return fn_(prompt); }
    bool safely_shareable() const override { return true; }

private:
    std::function<std::string(const std::string&)> fn_;
};

struct SchemeSpec {
    Scheme kind = Scheme::digit;
    std::string generator;  // generator key for the weak-LLM schemes
};

struct ForgeConfig {
    TargetMode target_mode = TargetMode::next_step;
    int rejects_per_chosen = 1;
    std::vector<SchemeSpec> schemes;
    int max_retries = 64;
    std::optional<int> fewshot_prefix;  // prepend u = j-shot blocks to prompts
    std::uint64_t seed = 0;

    void validate() const;
};

struct ForgeReport {
    std::map<std::string, std::int64_t> counters;  // per-scheme built/skip counts

    std::int64_t get(const std::string& key) const {
        auto it = counters.find(key);
        return it == counters.end() ? 0 : it->second;
    }
    std::int64_t total(const std::string& suffix) const;
    void bump(Scheme scheme, const std::string& what, std::int64_t by = 1);
};

// --- core operations ---------------------------------------------------

// Every digit is independently redrawn uniformly from 0-9 (the draw may
// repeat the original); everything else is byte-identical.
std::string corrupt_digits_once(std::string_view step, Rng& rng);

// Redraws until the result differs from the input. Throws DataError
// ("digit-free step") when there is nothing to corrupt and on retry
// exhaustion.
std::string corrupt_digits(std::string_view step, Rng& rng, int max_retries = 64);

// Instruction paragraph, two worked examples with one "Next step: " line per
// step, then the target question and its first k-1 ground-truth steps.
std::string render_weak_prompt(const CotExample& example1, const CotExample& example2,
                               const CotExample& target, int k);

// Response filter: truncate at the first line break or full stop, require
// the "Next step: " prefix, return the bare sentence.
std::optional<std::string> filter_weak_response(std::string response);

std::optional<std::string> weak_generate_reject(WeakGenerator& gen, const std::string& prompt);

std::vector<SftPair> build_sft_pairs(const CotExample& example, TargetMode mode);

std::vector<SftPair> build_sft_dataset(const std::vector<CotExample>& examples,
                                       const ForgeConfig& config);

using GeneratorMap = std::map<std::string, WeakGenerator*>;

std::vector<PrefTriplet> build_preference(const std::vector<CotExample>& examples,
                                          const ForgeConfig& config,
                                          const GeneratorMap& generators,
                                          ForgeReport* report = nullptr);

// Raw-text pretraining chunks rendered from the corpus: question blocks in
// the evaluation format plus a weak-prompt-formatted slice, concatenated and
// cut to fixed-size windows. Returned as pairs with an empty prompt.
std::vector<SftPair> build_pretrain_pairs(const std::vector<CotExample>& examples,
                                          int chunk_chars, double weak_format_fraction,
                                          std::uint64_t seed);

// --- dataset files ------------------------------------------------------

void write_sft_jsonl(const std::string& path, const std::vector<SftPair>& pairs);
std::vector<SftPair> read_sft_jsonl(const std::string& path);
void write_pref_jsonl(const std::string& path, const std::vector<PrefTriplet>& triplets);
std::vector<PrefTriplet> read_pref_jsonl(const std::string& path);

// Sidecar manifest: config echo, seed, per-scheme counters, content digest.
void write_forge_manifest(const std::string& dataset_path, const ForgeConfig& config,
                          const ForgeReport& report, std::int64_t item_count,
                          const std::string& kind);

}  // namespace cotforge
