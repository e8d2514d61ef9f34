#include "doctest.h"

#include <filesystem>
#include <set>

#include "cotforge/digest.hpp"
#include "cotforge/forge.hpp"
#include "cotforge/jsonl.hpp"
#include "cotforge/text.hpp"
#include "fixtures.hpp"

using namespace cotforge;

namespace {

CotExample natalia() { return parse_gsm8k(fixtures::natalia(), "nat"); }

std::vector<CotExample> tiny_corpus() {
    SyntheticSpec spec;
    spec.count = 20;
    spec.seed = 17;
    return gen_synthetic(spec);
}

}  // namespace

TEST_CASE("corrupt_digits_once touches only digits") {
    Rng rng(1);
    const std::string step = "Natalia sold 48/2 = 24 clips in May.";
    for (int i = 0; i < 200; ++i) {
        const std::string out = corrupt_digits_once(step, rng);
        REQUIRE(out.size() == step.size());
        for (std::size_t j = 0; j < out.size(); ++j) {
            const bool was_digit = step[j] >= '0' && step[j] <= '9';
            const bool is_digit = out[j] >= '0' && out[j] <= '9';
            CHECK(was_digit == is_digit);
            if (!was_digit) CHECK(out[j] == step[j]);
        }
    }
}

TEST_CASE("corrupt_digits_once identity on digit-free text") {
    Rng rng(2);
    CHECK(corrupt_digits_once("no digits here.", rng) == "no digits here.");
}

TEST_CASE("corrupt_digits_once golden draw") {
    // frozen from the shipped RNG at seed 12345
    Rng rng(12345);
    CHECK(corrupt_digits_once("1 + 1 = 2.", rng) == "4 + 7 = 5.");
}

TEST_CASE("corrupt_digits always differs and stays uniform") {
    Rng rng(7);
    std::array<int, 10> counts{};
    const int trials = 20000;
    for (int i = 0; i < trials; ++i) {
        const std::string out = corrupt_digits("x = 5.", rng);
        CHECK(out != "x = 5.");
        counts[static_cast<std::size_t>(out[4] - '0')] += 1;
    }
    CHECK(counts[5] == 0);
    // chi-square against uniform over the 9 admissible digits, 8 dof
    const double expected = trials / 9.0;
    double chi2 = 0;
    for (int d = 0; d < 10; ++d) {
        if (d == 5) continue;
        const double diff = counts[static_cast<std::size_t>(d)] - expected;
        chi2 += diff * diff / expected;
    }
    CHECK(chi2 < 26.125);  // p > 0.001
}

TEST_CASE("corrupt_digits rejects digit-free steps") {
    Rng rng(3);
    CHECK_THROWS_WITH(corrupt_digits("abc.", rng), "digit-free step");
}

TEST_CASE("render_weak_prompt shape") {
    const auto corpus = tiny_corpus();
    const auto target = natalia();

    SUBCASE("k=1 ends right after the target question") {
        const std::string prompt = render_weak_prompt(corpus[0], corpus[1], target, 1);
        const std::string tail = "Question: " + target.question + "\n";
        REQUIRE(prompt.size() > tail.size());
        CHECK(prompt.substr(prompt.size() - tail.size()) == tail);
    }

    SUBCASE("k=3 carries exactly two context lines") {
        const std::string prompt = render_weak_prompt(corpus[0], corpus[1], target, 3);
        const std::string marker = "Question: " + target.question + "\n";
        const auto at = prompt.find(marker);
        REQUIRE(at != std::string::npos);
        const std::string after = prompt.substr(at + marker.size());
        int lines = 0;
        std::size_t pos = 0;
        while ((pos = after.find("Next step: ", pos)) != std::string::npos) {
            ++lines;
            pos += 11;
        }
        CHECK(lines == 2);
        CHECK(after.find(target.steps[0]) != std::string::npos);
        CHECK(after.find(target.steps[1]) != std::string::npos);
        CHECK(after.find(target.steps[2]) == std::string::npos);
    }

    SUBCASE("instruction header is present") {
        const std::string prompt = render_weak_prompt(corpus[0], corpus[1], target, 1);
        CHECK(prompt.find("You are an obedient assistant.") == 0);
        CHECK(prompt.find("The answer should start with \"Next step: \".") !=
              std::string::npos);
        CHECK(prompt.find("Here are two examples:") != std::string::npos);
    }
}

TEST_CASE("render_weak_prompt golden fixture is stable") {
    CotExample a{"e1", "What is 1 + 1?", {"1 + 1 = 2.", "The solution to the problem is 2."},
                 Rational(2), Source::synthetic};
    CotExample b{"e2", "What is 3 - 1?", {"3 - 1 = 2.", "The solution to the problem is 2."},
                 Rational(2), Source::synthetic};
    CotExample t{"t", "What is 5 + 5?", {"5 + 5 = 10.", "The solution to the problem is 10."},
                 Rational(10), Source::synthetic};
    const std::string expected =
        "You are an obedient assistant. Your task is to reason about the following question. "
        "Write only the next step of the reasoning chain. Your answer should include exactly "
        "one following reasoning step and has to be exactly one sentence long! The answer "
        "should start with \"Next step: \". Here are two examples:\n"
        "\n"
        "Question: What is 1 + 1?\n"
        "Next step: 1 + 1 = 2.\n"
        "Next step: The solution to the problem is 2.\n"
        "\n"
        "Question: What is 3 - 1?\n"
        "Next step: 3 - 1 = 2.\n"
        "Next step: The solution to the problem is 2.\n"
        "\n"
        "Question: What is 5 + 5?\n"
        "Next step: 5 + 5 = 10.\n";
    CHECK(render_weak_prompt(a, b, t, 2) == expected);
}

TEST_CASE("filter_weak_response applies the paper's rules") {
    CHECK(*filter_weak_response("Next step: Natalia sold 24 clips in April.") ==
          "Natalia sold 24 clips in April.");
    CHECK(!filter_weak_response("I think the answer is 5"));
    CHECK(*filter_weak_response("Next step: A. B.") == "A.");
    CHECK(*filter_weak_response("Next step: no stop here\nsecond line") == "no stop here");
    CHECK(!filter_weak_response("Next step: "));
    CHECK(!filter_weak_response(""));
}

TEST_CASE("build_sft_pairs nested prefixes") {
    const auto ex = natalia();
    const auto pairs = build_sft_pairs(ex, TargetMode::next_step);
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].prompt == ex.question);
    CHECK(pairs[0].completion == ex.steps[0]);
    for (std::size_t k = 1; k < pairs.size(); ++k) {
        CHECK(pairs[k].prompt == pairs[k - 1].prompt + " " + pairs[k - 1].completion);
        CHECK(pairs[k].prompt.find(ex.question) == 0);
    }
    CHECK(pairs[2].completion == "The solution to the problem is 72.");
}

TEST_CASE("build_sft_pairs single step") {
    CotExample ex{"s", "Q?", {"The solution to the problem is 1."}, Rational(1),
                  Source::synthetic};
    const auto pairs = build_sft_pairs(ex, TargetMode::next_step);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].prompt == "Q?");
}

TEST_CASE("build_sft_pairs remaining mode joins the tail") {
    const auto ex = natalia();
    const auto pairs = build_sft_pairs(ex, TargetMode::remaining_steps);
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].completion == ex.steps[0] + " " + ex.steps[1] + " " + ex.steps[2]);
    CHECK(pairs[2].completion == ex.steps[2]);
}

TEST_CASE("build_preference digit counts and invariants") {
    const auto corpus = tiny_corpus();
    std::size_t digit_steps = 0;
    for (const auto& ex : corpus)
        for (const auto& s : ex.steps) digit_steps += has_digit(s) ? 1 : 0;

    ForgeConfig config;
    config.schemes = {{Scheme::digit, ""}};
    config.rejects_per_chosen = 3;
    config.seed = 21;
    ForgeReport report;
    const auto triplets = build_preference(corpus, config, {}, &report);
    CHECK(triplets.size() == 3 * digit_steps);
    CHECK(report.get("digit.built") == static_cast<std::int64_t>(triplets.size()));
    for (const auto& t : triplets) {
        CHECK(t.chosen != t.rejected);
        CHECK(t.scheme == Scheme::digit);
    }
}

TEST_CASE("build_preference skips digit-free steps with a counter") {
    CotExample ex{"d", "Q?", {"No digits in this one.", "The solution to the problem is 4."},
                  Rational(4), Source::synthetic};
    ForgeConfig config;
    config.schemes = {{Scheme::digit, ""}};
    ForgeReport report;
    const auto triplets = build_preference({ex, ex}, config, {}, &report);
    CHECK(triplets.size() == 2);  // only the final steps carry digits
    CHECK(report.get("digit.skipped_digit_free") == 2);
}

TEST_CASE("build_preference mixing two schemes gives two rejects per chosen") {
    const auto corpus = tiny_corpus();
    ScriptedGenerator gen([](const std::string&) {
        return std::string("Next step: The weak continuation is 77.");
    });
    ForgeConfig config;
    config.schemes = {{Scheme::digit, ""}, {Scheme::weak_llm, "fixture"}};
    config.seed = 4;
    GeneratorMap gens{{"fixture", &gen}};
    ForgeReport report;
    const auto triplets = build_preference(corpus, config, gens, &report);

    std::map<std::pair<std::string, int>, int> per_chosen;
    for (const auto& t : triplets)
        per_chosen[{t.origin.example_id, t.origin.step_index}] += 1;
    for (const auto& [key, count] : per_chosen) CHECK(count == 2);
}

TEST_CASE("build_preference weak scheme filters and counters") {
    const auto corpus = tiny_corpus();
    ScriptedGenerator refuses([](const std::string&) { return std::string("I cannot."); });
    ForgeConfig config;
    config.schemes = {{Scheme::weak_llm, "fixture"}};
    GeneratorMap gens{{"fixture", &refuses}};
    ForgeReport report;
    const auto triplets = build_preference(corpus, config, gens, &report);
    CHECK(triplets.empty());
    CHECK(report.get("weak_llm.skipped_no_prefix") > 0);
}

TEST_CASE("build_preference corrupts weak responses when asked") {
    const auto corpus = tiny_corpus();
    // echo the ground-truth step: plain weak_llm must skip (equal to chosen),
    // the corrupted scheme must differ
    ScriptedGenerator echo([&](const std::string& prompt) {
        const auto pos = prompt.rfind("Question: ");
        std::string question = prompt.substr(pos + 10);
        question = question.substr(0, question.find('\n'));
        for (const auto& ex : corpus)
            if (ex.question == question) return "Next step: " + ex.steps[0];
        return std::string("Next step: unknown.");
    });

    ForgeConfig config;
    config.seed = 9;
    GeneratorMap gens{{"fixture", &echo}};

    config.schemes = {{Scheme::weak_llm, "fixture"}};
    ForgeReport plain_report;
    const auto plain = build_preference(corpus, config, gens, &plain_report);
    CHECK(plain_report.get("weak_llm.skipped_equal_chosen") ==
          static_cast<std::int64_t>(corpus.size()));

    config.schemes = {{Scheme::weak_llm_corrupted, "fixture"}};
    const auto corrupted = build_preference(corpus, config, gens, nullptr);
    std::size_t firsts = 0;
    for (const auto& t : corrupted)
        if (t.origin.step_index == 1) {
            ++firsts;
            CHECK(t.chosen != t.rejected);
            CHECK(t.rejected.size() == t.chosen.size());
        }
    CHECK(firsts == corpus.size());
}

TEST_CASE("build_preference is deterministic") {
    const auto corpus = tiny_corpus();
    ForgeConfig config;
    config.schemes = {{Scheme::digit, ""}};
    config.rejects_per_chosen = 2;
    config.seed = 33;
    const auto a = build_preference(corpus, config, {}, nullptr);
    const auto b = build_preference(corpus, config, {}, nullptr);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].prompt == b[i].prompt);
        CHECK(a[i].rejected == b[i].rejected);
    }
}

TEST_CASE("remaining mode corrupts the next step and keeps the tail") {
    const auto ex = natalia();
    ForgeConfig config;
    config.target_mode = TargetMode::remaining_steps;
    config.schemes = {{Scheme::digit, ""}};
    config.seed = 2;
    const auto triplets = build_preference({ex}, config, {}, nullptr);
    REQUIRE(triplets.size() == 3);
    const auto& first = triplets[0];
    // rejected = corrupted z1 then the untouched z2, z3
    const std::string tail = " " + ex.steps[1] + " " + ex.steps[2];
    CHECK(first.chosen == ex.steps[0] + tail);
    CHECK(first.rejected.substr(first.rejected.size() - tail.size()) == tail);
    CHECK(first.rejected.substr(0, first.rejected.size() - tail.size()) != ex.steps[0]);
}

TEST_CASE("fewshot prefix prepends worked examples") {
    const auto corpus = tiny_corpus();
    ForgeConfig config;
    config.schemes = {{Scheme::digit, ""}};
    config.fewshot_prefix = 2;
    config.seed = 8;
    const auto pairs = build_sft_dataset(corpus, config);
    for (const auto& p : pairs) {
        CHECK(p.prompt.find("Question: ") == 0);
        CHECK(p.prompt.find(p.origin.example_id) == std::string::npos);
    }
    const auto triplets = build_preference(corpus, config, {}, nullptr);
    CHECK(triplets[0].prompt.find("Question: ") == 0);
}

TEST_CASE("pretrain pairs cover the corpus and chunk evenly") {
    const auto corpus = tiny_corpus();
    const auto chunks = build_pretrain_pairs(corpus, 240, 0.3, 5);
    REQUIRE(!chunks.empty());
    std::string all;
    for (const auto& c : chunks) {
        CHECK(c.prompt.empty());
        CHECK(c.completion.size() <= 240);
        all += c.completion;
    }
    CHECK(all.find("Question: ") != std::string::npos);
    CHECK(all.find("Next step: ") != std::string::npos);
    const auto again = build_pretrain_pairs(corpus, 240, 0.3, 5);
    CHECK(again.size() == chunks.size());
    CHECK(again[0].completion == chunks[0].completion);
}

TEST_CASE("dataset files round trip and manifest digests move with content") {
    namespace fs = std::filesystem;
    const auto corpus = tiny_corpus();
    ForgeConfig config;
    config.schemes = {{Scheme::digit, ""}};
    config.seed = 13;
    ForgeReport report;
    auto triplets = build_preference(corpus, config, {}, &report);

    const std::string path = fs::temp_directory_path() / "pref_roundtrip.jsonl";
    write_pref_jsonl(path, triplets);
    const auto back = read_pref_jsonl(path);
    REQUIRE(back.size() == triplets.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].prompt == triplets[i].prompt);
        CHECK(back[i].chosen == triplets[i].chosen);
        CHECK(back[i].rejected == triplets[i].rejected);
        CHECK(back[i].scheme == triplets[i].scheme);
    }

    write_forge_manifest(path, config, report, static_cast<std::int64_t>(triplets.size()),
                         "pref");
    const auto manifest1 = nlohmann::json::parse(read_file(path + ".manifest.json"));

    // flip one byte -> digest must change
    triplets[0].rejected[0] = triplets[0].rejected[0] == '1' ? '2' : '1';
    write_pref_jsonl(path, triplets);
    write_forge_manifest(path, config, report, static_cast<std::int64_t>(triplets.size()),
                         "pref");
    const auto manifest2 = nlohmann::json::parse(read_file(path + ".manifest.json"));
    CHECK(manifest1.at("digest") != manifest2.at("digest"));

    fs::remove(path);
    fs::remove(path + ".manifest.json");
}

TEST_CASE("empty dataset writes a valid empty file") {
    namespace fs = std::filesystem;
    const std::string path = fs::temp_directory_path() / "empty.jsonl";
    write_pref_jsonl(path, {});
    CHECK(read_pref_jsonl(path).empty());
    write_forge_manifest(path, ForgeConfig{.schemes = {{Scheme::digit, ""}}}, ForgeReport{}, 0,
                         "pref");
    const auto manifest = nlohmann::json::parse(read_file(path + ".manifest.json"));
    CHECK(manifest.at("items") == 0);
    fs::remove(path);
    fs::remove(path + ".manifest.json");
}

TEST_CASE("malformed dataset lines carry their location") {
    namespace fs = std::filesystem;
    const std::string path = fs::temp_directory_path() / "broken.jsonl";
    atomic_write(path, "{\"prompt\": \"p\", \"chosen\": \"c\"}\n");
    CHECK_THROWS_AS(read_pref_jsonl(path), DataError);
    try {
        read_pref_jsonl(path);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(":1:") != std::string::npos);
    }
    fs::remove(path);
}
