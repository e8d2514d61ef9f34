#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cotforge/rational.hpp"

namespace cotforge {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Source { gsm8k, aqua, synthetic };

const char* source_name(Source s);
Source source_from_name(const std::string& name);

// A question plus its ordered reasoning steps; the last step is the
// final-answer sentence whose value equals `answer`.
struct CotExample {
    std::string id;
    std::string question;
    std::vector<std::string> steps;
    Rational answer;
    Source source = Source::synthetic;

    const std::string& final_step() const { return steps.back(); }
    // question and steps run together with single spaces
    std::string rationale_text() const;
};

struct RawGsm8kRecord {
    std::string question;
    std::string answer_text;  // rationale lines ending with "#### N"
};

struct AquaRecord {
    std::string question;
    std::vector<std::string> options;  // exactly 5, labeled A-E
    std::string rationale;
    char correct = 'A';
};

struct SyntheticSpec {
    int n_ops_min = 1;
    int n_ops_max = 3;
    std::int64_t operand_min = 2;
    std::int64_t operand_max = 99;
    std::string allowed_ops = "+-*";  // subset of +, -, *
    std::int64_t magnitude_bound = 9999;
    std::uint64_t seed = 0;
    int count = 0;

    void validate() const;
};

struct ParseReport {
    int parsed = 0;
    int unbalanced_annotations = 0;
};

// Parsing renders the trailing "#### N" line as the final-answer sentence
// "The solution to the problem is N."
CotExample parse_gsm8k(const RawGsm8kRecord& record, const std::string& id,
                       ParseReport* report = nullptr);
CotExample parse_aqua(const AquaRecord& record, const std::string& id,
                      ParseReport* report = nullptr);

// eta(x, z): does the candidate final sentence answer the example's question?
bool check_answer(const CotExample& example, const std::string& candidate_final_sentence);

std::vector<CotExample> gen_synthetic(const SyntheticSpec& spec);

std::string final_answer_sentence(const Rational& value);

// JSON Lines IO for the canonical CotExample schema and the raw formats.
std::vector<CotExample> read_cot_jsonl(const std::string& path);
void write_cot_jsonl(const std::string& path, const std::vector<CotExample>& examples);
std::vector<RawGsm8kRecord> read_gsm8k_jsonl(const std::string& path);
std::vector<AquaRecord> read_aqua_jsonl(const std::string& path);

}  // namespace cotforge
