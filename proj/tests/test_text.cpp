#include "doctest.h"

#include "cotforge/rng.hpp"
#include "cotforge/text.hpp"

using namespace cotforge;

TEST_CASE("strip_annotations removes balanced spans") {
    CHECK(strip_annotations("12 x 2 = <<12*2=24>>24 months") == "12 x 2 = 24 months");
    CHECK(strip_annotations("no annotations here") == "no annotations here");
    CHECK(strip_annotations("a<<1+1=2>>2b<<3*3=9>>9c") == "a2b9c");
}

TEST_CASE("strip_annotations flags unbalanced opens and keeps the text") {
    bool unbalanced = false;
    CHECK(strip_annotations("broken <<1+1=2 here", &unbalanced) == "broken <<1+1=2 here");
    CHECK(unbalanced);
}

TEST_CASE("strip_annotations is idempotent and preserves outside bytes") {
    Rng rng(42);
    const std::string alphabet = "ab 12.*=\n";  // no angle brackets outside annotations
    for (int trial = 0; trial < 2000; ++trial) {
        // random text with injected annotations
        std::string text, expected;
        const int pieces = 1 + static_cast<int>(rng.below(6));
        for (int p = 0; p < pieces; ++p) {
            std::string outside;
            for (std::uint64_t i = rng.below(8); i > 0; --i)
                outside.push_back(alphabet[rng.below(alphabet.size())]);
            text += outside;
            expected += outside;
            if (rng.below(2)) {
                std::string inside;
                for (std::uint64_t i = rng.below(6); i > 0; --i)
                    inside.push_back(alphabet[rng.below(alphabet.size())]);
                text += "<<" + inside + ">>";
            }
        }
        const std::string once = strip_annotations(text);
        CHECK(once == expected);
        CHECK(strip_annotations(once) == once);
    }
}

TEST_CASE("split_steps by line breaks") {
    const auto steps = split_steps("A = 24 clips.\nB = 72 clips.\n#### 72");
    REQUIRE(steps.size() == 3);
    CHECK(steps[0] == "A = 24 clips.");
    CHECK(steps[1] == "B = 72 clips.");
    CHECK(steps[2] == "#### 72");
}

TEST_CASE("split_steps splits sentences inside a line") {
    const auto steps = split_steps(
        "There are a total of 5 vans x 28 students = 140 students. If 60 are boys, then 140 - "
        "60 = 80 of these students are girls.");
    REQUIRE(steps.size() == 2);
    CHECK(steps[1] == "If 60 are boys, then 140 - 60 = 80 of these students are girls.");
}

TEST_CASE("split_steps keeps decimals intact") {
    const auto steps = split_steps("He paid 3.50 dollars. Then left.");
    REQUIRE(steps.size() == 2);
    CHECK(steps[0] == "He paid 3.50 dollars.");
    CHECK(steps[1] == "Then left.");
}

TEST_CASE("split_steps rejects empty rationale") {
    CHECK_THROWS_WITH(split_steps("   \n  "), "empty rationale");
}

TEST_CASE("split_steps is stable under re-joining") {
    const auto steps = split_steps("12 + 7 = 19. 19 * 2 = 38.\nThe solution is 38.");
    std::string joined;
    for (const auto& s : steps) joined += s + "\n";
    CHECK(split_steps(joined) == steps);
}

TEST_CASE("extract_number prefers the final-answer marker") {
    CHECK(extract_number("clips 99. The solution to the problem is 72.")->num == 72);
    CHECK(extract_number("rationale text #### 200.")->num == 200);
    CHECK(extract_number("burned 3 then 5 then 9 total") == Rational(9));
    CHECK(!extract_number("no idea"));
    CHECK(extract_number("#### 1,000") == Rational(1000));
    CHECK(extract_number("price was 3.50 total")->den == 2);
}

TEST_CASE("extract_number ignores numbers embedded in words") {
    CHECK(extract_number("agent x42z saw 7 birds") == Rational(7));
}

TEST_CASE("extract_letter finds the last standalone option") {
    CHECK(extract_letter("The answer is C.") == 'C');
    CHECK(extract_letter("A cat. The answer is (B)") == 'B');
    CHECK(!extract_letter("no options stated"));
    CHECK(!extract_letter("ABE glued together"));
}

TEST_CASE("rational parsing and rendering") {
    CHECK(parse_rational("72") == Rational(72));
    CHECK(parse_rational(" 200. ") == Rational(200));
    CHECK(parse_rational("-5") == Rational(-5));
    CHECK(parse_rational("3.50") == Rational(7, 2));
    CHECK(parse_rational("1,234") == Rational(1234));
    CHECK(!parse_rational("12,34"));
    CHECK(!parse_rational("abc"));
    CHECK(!parse_rational(""));
    CHECK(Rational(7, 2).str() == "3.5");
    CHECK(Rational(1, 3).str() == "1/3");
    CHECK(Rational(-3, 2).str() == "-1.5");
}
