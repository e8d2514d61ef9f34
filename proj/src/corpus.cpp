#include "cotforge/corpus.hpp"

#include <algorithm>

#include "cotforge/jsonl.hpp"
#include "cotforge/rng.hpp"
#include "cotforge/text.hpp"

namespace cotforge {

const char* source_name(Source s) {
    switch (s) {
        case Source::gsm8k: return "gsm8k";
        case Source::aqua: return "aqua";
        case Source::synthetic: return "synthetic";
    }
    return "synthetic";
}

Source source_from_name(const std::string& name) {
    if (name == "gsm8k") return Source::gsm8k;
    if (name == "aqua") return Source::aqua;
    if (name == "synthetic") return Source::synthetic;
    throw DataError("unknown source: " + name);
}

std::string CotExample::rationale_text() const {
    std::string out = question;
    for (const auto& s : steps) {
        out += ' ';
        out += s;
    }
    return out;
}

void SyntheticSpec::validate() const {
    if (n_ops_min < 1 || n_ops_max < n_ops_min) throw DataError("bad n_ops range");
    if (operand_max < operand_min) throw DataError("bad operand range");
    if (allowed_ops.empty() || allowed_ops.find_first_not_of("+-*") != std::string::npos)
        throw DataError("allowed_ops must be a non-empty subset of +-*");
    if (count < 0) throw DataError("bad count");
    if (magnitude_bound < operand_max) throw DataError("magnitude bound below operand range");
}

std::string final_answer_sentence(const Rational& value) {
    return "The solution to the problem is " + value.str() + ".";
}

CotExample parse_gsm8k(const RawGsm8kRecord& record, const std::string& id, ParseReport* report) {
    const std::size_t marker = record.answer_text.find("####");
    if (marker == std::string::npos) throw DataError(id + ": no final answer");
    if (record.answer_text.find("####", marker + 4) != std::string::npos)
        throw DataError(id + ": multiple final answer markers");

    const std::string literal = trim(record.answer_text.substr(marker + 4));
    const auto answer = parse_rational(literal);
    if (!answer) throw DataError(id + ": bad answer literal: " + literal);

    bool unbalanced = false;
    const std::string body = strip_annotations(record.answer_text.substr(0, marker), &unbalanced);
    if (report && unbalanced) report->unbalanced_annotations += 1;

    CotExample ex;
    ex.id = id;
    ex.question = trim(record.question);
    if (!trim(body).empty()) ex.steps = split_steps(body);
    ex.steps.push_back(final_answer_sentence(*answer));
    ex.answer = *answer;
    ex.source = Source::gsm8k;
    if (report) report->parsed += 1;
    return ex;
}

CotExample parse_aqua(const AquaRecord& record, const std::string& id, ParseReport* report) {
    if (record.options.size() != 5) throw DataError(id + ": expected 5 options");
    if (record.correct < 'A' || record.correct > 'E')
        throw DataError(id + ": bad answer label");
    if (trim(record.rationale).empty()) throw DataError(id + ": no final answer");

    CotExample ex;
    ex.id = id;
    ex.question = trim(record.question);
    ex.steps = split_steps(strip_annotations(record.rationale));
    ex.answer = Rational(record.correct - 'A');
    ex.source = Source::aqua;

    // Append the canonical final sentence unless the rationale already ends
    // with the correct letter (trailing punctuation ignored).
    std::string last = ex.steps.back();
    while (!last.empty() && (last.back() == '.' || last.back() == ')' || last.back() == '"'))
        last.pop_back();
    if (last.empty() || last.back() != record.correct)
        ex.steps.push_back(std::string("The answer is ") + record.correct + ".");
    if (report) report->parsed += 1;
    return ex;
}

bool check_answer(const CotExample& example, const std::string& candidate_final_sentence) {
    if (example.source == Source::aqua) {
        const auto letter = extract_letter(candidate_final_sentence);
        return letter && Rational(*letter - 'A') == example.answer;
    }
    const auto value = extract_number(candidate_final_sentence);
    return value && *value == example.answer;
}

namespace {

struct ChainStep {
    char op;
    std::int64_t operand;
    std::int64_t result;
};

const char* op_phrase(char op) {
    switch (op) {
        case '+': return "Then add ";
        case '-': return "Then subtract ";
        default: return "Then multiply by ";
    }
}

bool try_chain(Rng& rng, const SyntheticSpec& spec, std::int64_t& start,
               std::vector<ChainStep>& chain) {
    chain.clear();
    const int n_ops = static_cast<int>(rng.range(spec.n_ops_min, spec.n_ops_max));
    start = rng.range(spec.operand_min, spec.operand_max);
    std::int64_t v = start;
    for (int j = 0; j < n_ops; ++j) {
        const char op = spec.allowed_ops[rng.below(spec.allowed_ops.size())];
        const std::int64_t b = rng.range(spec.operand_min, spec.operand_max);
        std::int64_t w = 0;
        switch (op) {
            case '+': w = v + b; break;
            case '-': w = v - b; break;
            default: w = v * b; break;
        }
        if (w < 0 || w > spec.magnitude_bound) return false;
        chain.push_back({op, b, w});
        v = w;
    }
    return true;
}

}  // namespace

std::vector<CotExample> gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::vector<CotExample> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    constexpr int kMaxAttempts = 64;

    for (int i = 0; i < spec.count; ++i) {
        std::int64_t start = 0;
        std::vector<ChainStep> chain;
        bool ok = false;
        for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
            Rng rng(derive_seed(spec.seed, "synth",
                                {static_cast<std::uint64_t>(i),
                                 static_cast<std::uint64_t>(attempt)}));
            ok = try_chain(rng, spec, start, chain);
        }
        if (!ok)
            throw DataError("magnitude bound exhausted retries at example " + std::to_string(i));

        CotExample ex;
        ex.id = "syn-" + std::to_string(spec.seed) + "-" + std::to_string(i);
        ex.question = "Start with " + std::to_string(start) + ".";
        std::int64_t v = start;
        for (const auto& step : chain) {
            ex.question += " ";
            ex.question += op_phrase(step.op);
            ex.question += std::to_string(step.operand) + ".";
            ex.steps.push_back(std::to_string(v) + " " + step.op + " " +
                               std::to_string(step.operand) + " = " +
                               std::to_string(step.result) + ".");
            v = step.result;
        }
        ex.question += " What is the result?";
        ex.answer = Rational(v);
        ex.steps.push_back(final_answer_sentence(ex.answer));
        ex.source = Source::synthetic;
        out.push_back(std::move(ex));
    }
    return out;
}

namespace {

nlohmann::json answer_to_json(const Rational& r) {
    if (r.is_integer()) return r.num;
    return r.str();
}

Rational answer_from_json(const nlohmann::json& j) {
    if (j.is_number_integer()) return Rational(j.get<std::int64_t>());
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        const auto slash = s.find('/');
        if (slash != std::string::npos) {
            return Rational(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)));
        }
        if (auto r = parse_rational(s)) return *r;
        throw DataError("bad answer literal: " + s);
    }
    throw DataError("answer must be an integer or string");
}

}  // namespace

std::vector<CotExample> read_cot_jsonl(const std::string& path) {
    std::vector<CotExample> out;
    for_each_jsonl(path, [&](std::size_t lineno, const nlohmann::json& j) {
        try {
            CotExample ex;
            ex.id = j.at("id").get<std::string>();
            ex.question = j.at("question").get<std::string>();
            ex.steps = j.at("steps").get<std::vector<std::string>>();
            ex.answer = answer_from_json(j.at("answer"));
            ex.source = source_from_name(j.at("source").get<std::string>());
            if (ex.steps.empty()) throw DataError("empty steps");
            out.push_back(std::move(ex));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    });
    return out;
}

void write_cot_jsonl(const std::string& path, const std::vector<CotExample>& examples) {
    std::string buf;
    for (const auto& ex : examples) {
        nlohmann::json j{{"id", ex.id},
                         {"question", ex.question},
                         {"steps", ex.steps},
                         {"answer", answer_to_json(ex.answer)},
                         {"source", source_name(ex.source)}};
        buf += j.dump();
        buf += '\n';
    }
    atomic_write(path, buf);
}

std::vector<RawGsm8kRecord> read_gsm8k_jsonl(const std::string& path) {
    std::vector<RawGsm8kRecord> out;
    for_each_jsonl(path, [&](std::size_t lineno, const nlohmann::json& j) {
        try {
            out.push_back({j.at("question").get<std::string>(), j.at("answer").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    });
    return out;
}

std::vector<AquaRecord> read_aqua_jsonl(const std::string& path) {
    std::vector<AquaRecord> out;
    for_each_jsonl(path, [&](std::size_t lineno, const nlohmann::json& j) {
        try {
            AquaRecord r;
            r.question = j.at("question").get<std::string>();
            r.options = j.at("options").get<std::vector<std::string>>();
            r.rationale = j.at("rationale").get<std::string>();
            const std::string c = j.at("correct").get<std::string>();
            if (c.size() != 1) throw DataError("bad answer label");
            r.correct = c[0];
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    });
    return out;
}

}  // namespace cotforge
