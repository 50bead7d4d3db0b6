#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "valign/error.hpp"
#include "valign/metrics.hpp"

using namespace valign;
using namespace valign::metrics;

namespace {

// Reference values below were produced once with sacrebleu 2.x (13a, exp
// smoothing) and rouge_score (no stemmer) and frozen here.

const std::vector<std::string> kHyp2{"Employees must report conflicts of interest to their manager.",
                                     "It's 3.5 times faster, isn't it?",
                                     "Gifts worth $100 or more (including travel) are not allowed!"};
const std::vector<std::string> kRef2{"Employees should report any conflict of interest to their manager promptly.",
                                     "It is 3.5 times faster, right?",
                                     "Gifts valued at $100 or more, including travel, are prohibited."};

void check_rouge(std::string_view hyp, std::string_view ref, double r1, double r2, double rl, double rlsum) {
    const auto s = rouge_scores(hyp, ref);
    CHECK(s.rouge1.f1 == doctest::Approx(r1).epsilon(1e-12));
    CHECK(s.rouge2.f1 == doctest::Approx(r2).epsilon(1e-12));
    CHECK(s.rougeL.f1 == doctest::Approx(rl).epsilon(1e-12));
    CHECK(s.rougeLsum.f1 == doctest::Approx(rlsum).epsilon(1e-12));
}

std::vector<std::vector<double>> letter_embedder(const std::vector<std::string>& words) {
    std::vector<std::vector<double>> out;
    for (const auto& w : words) {
        std::vector<double> v(26, 0.0);
        for (char c : w) {
            if (c >= 'a' && c <= 'z') v[static_cast<std::size_t>(c - 'a')] += 1.0;
        }
        v[0] += 0.01;
        out.push_back(v);
    }
    return out;
}

} // namespace

TEST_CASE("13a tokenization") {
    CHECK(tokenize_13a("It's 3.5 times faster, isn't it?") == "It's 3.5 times faster , isn't it ?");
    CHECK(tokenize_13a("Gifts worth $100 (incl. travel) &amp; more!") == "Gifts worth $ 100 ( incl . travel ) & more !");
    CHECK(tokenize_13a("a-b 1,000.5 x.y.") == "a-b 1,000.5 x . y .");
}

TEST_CASE("bleu matches reference implementation") {
    CHECK(std::abs(corpus_bleu({"the cat sat on the mat"}, {"the cat sat on the rug"}) - 75.98356856515926) < 1e-9);
    CHECK(std::abs(corpus_bleu(kHyp2, kRef2) - 30.86645882648455) < 1e-9);
    CHECK(corpus_bleu({"yes no"}, {"yes maybe"}) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(corpus_bleu({""}, {"the cat"}) == 0.0);
    CHECK(std::abs(corpus_bleu(kHyp2, kHyp2) - 100.0) < 1e-9);
}

TEST_CASE("bleu input errors") {
    CHECK_THROWS_WITH_AS(corpus_bleu({"a", "b"}, {"a"}), doctest::Contains("hypothesis/reference length mismatch"),
                         InputError);
    CHECK_THROWS_AS(corpus_bleu({}, {}), InputError);
}

TEST_CASE("bleu stats") {
    const auto s = bleu_stats({"the cat sat on the mat"}, {"the cat sat on the rug"});
    CHECK(s.sys_len == 6);
    CHECK(s.ref_len == 6);
    CHECK(s.correct == std::array<std::size_t, 4>{5, 4, 3, 2});
    CHECK(s.total == std::array<std::size_t, 4>{6, 5, 4, 3});
}

TEST_CASE("rouge matches reference implementation") {
    check_rouge("the cat sat", "the cat", 0.8, 0.6666666666666666, 0.8, 0.8);
    check_rouge("the quick brown fox jumps over the lazy dog", "a quick brown dog leaps over the lazy fox",
                0.7777777777777778, 0.375, 0.5555555555555556, 0.5555555555555556);
    check_rouge("police killed the gunman.\nthe gunman was shot.", "the gunman was killed by police.\nhe was armed.",
                0.5882352941176471, 0.26666666666666666, 0.35294117647058826, 0.35294117647058826);
    check_rouge("Staff must respect privacy.\nStaff may share data only with consent.",
                "Staff may share data only with consent.\nStaff must respect privacy.", 1.0, 0.9, 0.6363636363636364,
                1.0);
    check_rouge("the cat the cat\nthe dog", "the cat\nthe dog the dog", 0.8333333333333334, 0.6,
                0.8333333333333334, 0.8333333333333334);
    check_rouge("", "nothing here", 0.0, 0.0, 0.0, 0.0);
}

TEST_CASE("summary-level rouge also splits on sentence periods") {
    const auto a = rouge_scores("Staff must respect privacy. Staff may share data only with consent.",
                                "Staff may share data only with consent. Staff must respect privacy.");
    CHECK(a.rougeLsum.f1 == doctest::Approx(1.0));
    CHECK(a.rougeL.f1 == doctest::Approx(0.6363636363636364));
    CHECK(rouge_sentences("One. Two.\nThree") == std::vector<std::string>{"One.", "Two.", "Three"});
}

TEST_CASE("rouge properties") {
    const std::vector<std::string> texts{"a b c d", "the cat sat on the mat", "x", "one two. three four\nfive"};
    for (const auto& t : texts) {
        const auto s = rouge_scores(t, t);
        CHECK(s.rouge1.f1 == doctest::Approx(1.0));
        CHECK(s.rougeL.f1 == doctest::Approx(1.0));
        CHECK(s.rougeLsum.f1 == doctest::Approx(1.0));
        for (const auto& u : texts) {
            const auto r = rouge_scores(t, u);
            for (double v : {r.rouge1.f1, r.rouge2.f1, r.rougeL.f1, r.rougeLsum.f1}) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            CHECK(r.rouge1.f1 == doctest::Approx(rouge_scores(u, t).rouge1.f1));
        }
    }
}

TEST_CASE("embedding f1") {
    const Embedder emb = letter_embedder;
    const auto same = embed_f1("staff respect privacy", "staff respect privacy", emb);
    REQUIRE(same);
    CHECK(*same == doctest::Approx(1.0));
    const auto diff = embed_f1("staff respect privacy", "gifts are prohibited", emb);
    REQUIRE(diff);
    CHECK(*diff < 1.0);
    CHECK(*diff >= 0.0);
    const Embedder broken = [](const std::vector<std::string>&) -> std::vector<std::vector<double>> {
        throw std::runtime_error("service down");
    };
    CHECK_FALSE(embed_f1("a", "b", broken).has_value());
}

TEST_CASE("evaluate aggregates") {
    const auto r = evaluate(kHyp2, kRef2);
    CHECK(r.n == 3);
    CHECK(std::abs(r.bleu - 30.86645882648455) < 1e-9);
    CHECK_FALSE(r.embed_f1.has_value());
    const auto j = r.to_json();
    CHECK(j.contains("bleu"));
    CHECK(j.contains("rougeLsum"));
    CHECK(j["n"] == 3);
    const Embedder emb = letter_embedder;
    const auto with = evaluate(kHyp2, kHyp2, &emb);
    REQUIRE(with.embed_f1);
    CHECK(*with.embed_f1 == doctest::Approx(1.0));
    CHECK(with.rouge1 == doctest::Approx(1.0));
}
