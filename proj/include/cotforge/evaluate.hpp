#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cotforge/corpus.hpp"
#include "cotforge/model.hpp"

namespace cotforge {

enum class AnswerKind { number, letter };

const char* answer_kind_name(AnswerKind k);
AnswerKind answer_kind_from_name(const std::string& name);

struct EvalConfig {
    int k_shot = 5;
    int max_new_tokens = 192;
    double temperature = 0.0;
    std::uint64_t seed = 0;
    AnswerKind answer_kind = AnswerKind::number;
};

struct AnswerValue {
    bool is_letter = false;
    Rational number;
    char letter = 'A';

    std::string str() const;
    bool matches(const Rational& gold, AnswerKind kind) const;
};

// number kind: value after the last final-answer or "####" marker, else the
// last standalone number; letter kind: last standalone A-E token.
std::optional<AnswerValue> extract_answer(const std::string& generated, AnswerKind kind);

// k exemplar blocks ("Question: <question> <steps...>") then the bare target
// question block. Exemplar choice is fixed per (pool, k, seed).
std::string build_fewshot_prompt(const std::vector<CotExample>& pool, const EvalConfig& config,
                                 const std::string& question);

struct EvalRecord {
    std::string id;
    std::string question;
    std::string generation;
    std::string extracted;  // empty when nothing extractable
    std::string gold;
    bool correct = false;
    std::string error;  // non-empty when generation failed
};

struct EvalReport {
    int n = 0;
    int correct = 0;
    double accuracy = 0;  // percentage
    int k_shot = 0;
    std::uint64_t seed = 0;
    std::string model_label;
    std::string dataset_label;
    std::vector<EvalRecord> records;

    nlohmann::json to_json() const;
    void write(const std::string& path) const;
};

// Greedy (or seeded) chain-of-thought generation per question, stopping at
// the final-answer sentence or the token budget. Few-shot exemplars come
// from `pool`; `dataset` must be disjoint from it.
EvalReport evaluate(const Model& model, const std::vector<CotExample>& dataset,
                    const std::vector<CotExample>& pool, const EvalConfig& config);

}  // namespace cotforge
