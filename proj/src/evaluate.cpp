#include "cotforge/evaluate.hpp"

#include "cotforge/jsonl.hpp"
#include "cotforge/parallel.hpp"
#include "cotforge/text.hpp"

namespace cotforge {

const char* answer_kind_name(AnswerKind k) {
    return k == AnswerKind::number ? "number" : "letter";
}

AnswerKind answer_kind_from_name(const std::string& name) {
    if (name == "number") return AnswerKind::number;
    if (name == "letter") return AnswerKind::letter;
    throw DataError("unknown answer kind: " + name);
}

std::string AnswerValue::str() const {
    return is_letter ? std::string(1, letter) : number.str();
}

bool AnswerValue::matches(const Rational& gold, AnswerKind kind) const {
    if (kind == AnswerKind::letter) return is_letter && Rational(letter - 'A') == gold;
    return !is_letter && number == gold;
}

std::optional<AnswerValue> extract_answer(const std::string& generated, AnswerKind kind) {
    AnswerValue v;
    if (kind == AnswerKind::letter) {
        const auto letter = extract_letter(generated);
        if (!letter) return std::nullopt;
        v.is_letter = true;
        v.letter = *letter;
        return v;
    }
    const auto number = extract_number(generated);
    if (!number) return std::nullopt;
    v.number = *number;
    return v;
}

namespace {

std::vector<std::size_t> exemplar_picks(std::size_t pool, int k, std::uint64_t seed) {
    if (k < 0 || static_cast<std::size_t>(k) > pool)
        throw DataError("k-shot exceeds the few-shot pool");
    std::vector<std::size_t> order(pool);
    for (std::size_t i = 0; i < pool; ++i) order[i] = i;
    Rng rng(derive_seed(seed, "fewshot", {pool}));
    rng.shuffle(order);
    order.resize(static_cast<std::size_t>(k));
    return order;
}

std::string render_prompt(const std::vector<CotExample>& pool,
                          const std::vector<std::size_t>& picks, const std::string& question) {
    std::string out;
    for (std::size_t idx : picks) out += "Question: " + pool[idx].rationale_text() + "\n";
    out += "Question: " + question;
    return out;
}

constexpr const char* kNumberMarker = "The solution to the problem is";
constexpr const char* kLetterMarker = "The answer is";

}  // namespace

std::string build_fewshot_prompt(const std::vector<CotExample>& pool, const EvalConfig& config,
                                 const std::string& question) {
    return render_prompt(pool, exemplar_picks(pool.size(), config.k_shot, config.seed), question);
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json examples = nlohmann::json::array();
    for (const auto& r : records) {
        examples.push_back({{"id", r.id},
                            {"question", r.question},
                            {"generation", r.generation},
                            {"extracted", r.extracted},
                            {"gold", r.gold},
                            {"correct", r.correct},
                            {"error", r.error}});
    }
    return {{"summary",
             {{"n", n},
              {"correct", correct},
              {"accuracy", accuracy},
              {"k_shot", k_shot},
              {"seed", seed},
              {"model", model_label},
              {"dataset", dataset_label}}},
            {"examples", examples}};
}

void EvalReport::write(const std::string& path) const { atomic_write(path, to_json().dump(2) + "\n"); }

EvalReport evaluate(const Model& model, const std::vector<CotExample>& dataset,
                    const std::vector<CotExample>& pool, const EvalConfig& config) {
    const auto picks = exemplar_picks(pool.size(), config.k_shot, config.seed);
    const char* marker =
        config.answer_kind == AnswerKind::number ? kNumberMarker : kLetterMarker;

    EvalReport report;
    report.n = static_cast<int>(dataset.size());
    report.k_shot = config.k_shot;
    report.seed = config.seed;
    report.records.resize(dataset.size());

    parallel_for(dataset.size(), [&](std::size_t i) {
        const CotExample& ex = dataset[i];
        EvalRecord& rec = report.records[i];
        rec.id = ex.id;
        rec.question = ex.question;
        rec.gold = config.answer_kind == AnswerKind::letter
                       ? std::string(1, static_cast<char>('A' + ex.answer.num))
                       : ex.answer.str();
        try {
            const std::string prompt = render_prompt(pool, picks, ex.question);
            std::string assembled;
            int budget = config.max_new_tokens;
            // One sentence per round: fine-tuned models terminate steps with
            // EOS, a raw model keeps going until a line break.
            while (budget > 0) {
                const std::string input =
                    assembled.empty() ? prompt + " " : prompt + " " + assembled + " ";
                const auto ids = model.vocab.encode(input);
                const std::string piece =
                    sample(model, ids, StopRule::line(), budget, config.temperature,
                           derive_seed(config.seed, ex.id, {static_cast<std::uint64_t>(budget)}));
                if (trim(piece).empty()) break;
                budget -= static_cast<int>(piece.size()) + 1;
                assembled = assembled.empty() ? piece : assembled + " " + piece;
                if (assembled.find(marker) != std::string::npos) break;
            }
            rec.generation = assembled;
            const auto extracted = extract_answer(assembled, config.answer_kind);
            if (extracted) {
                rec.extracted = extracted->str();
                rec.correct = extracted->matches(ex.answer, config.answer_kind);
            }
        } catch (const std::exception& e) {
            rec.error = e.what();
            rec.correct = false;
        }
    });

    for (const auto& r : report.records) report.correct += r.correct ? 1 : 0;
    report.accuracy =
        report.n == 0 ? 0.0 : 100.0 * static_cast<double>(report.correct) / report.n;
    return report;
}

}  // namespace cotforge
