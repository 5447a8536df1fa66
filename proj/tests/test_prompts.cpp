#include <fstream>

#include "support.hpp"

using testutil::vocab;

namespace {

std::vector<interp::Prompt> fixture_prompts() {
    std::ifstream in(testutil::kFixtures / "prompts.json");
    return interp::prompts_from_json(nlohmann::json::parse(in), vocab());
}

std::set<std::string> spell(const std::set<interp::TokenId>& ids) {
    std::set<std::string> out;
    for (auto id : ids) out.insert(vocab().token(id));
    return out;
}

}  // namespace

TEST(Prompt, FixtureCategories) {
    const auto p = interp::prompt_from_strings(
        "The capital of France is", {{"target", std::string("Paris")}, {"fake", std::vector<std::string>{"London", "Lyon"}}},
        vocab());
    ASSERT_EQ(p.categories.size(), 2u);
    EXPECT_EQ(spell(p.categories.at("fake")),
              (std::set<std::string>{"\xE2\x96\x81London", "Lon", "\xE2\x96\x81Lyo", "Ly"}));
    EXPECT_EQ(spell(p.categories.at("target")), (std::set<std::string>{"\xE2\x96\x81Paris", "Par"}));
}

TEST(Prompt, SingleTargetAndDuplicates) {
    const auto one = interp::prompt_from_strings("The city", {{"x", std::string("Rome")}}, vocab());
    EXPECT_LE(one.categories.at("x").size(), 2u);
    const auto dup = interp::prompt_from_strings("The city", {{"x", std::vector<std::string>{"Rome", "Rome"}}}, vocab());
    EXPECT_EQ(dup.categories, one.categories);
}

TEST(Prompt, Errors) {
    EXPECT_ERROR_CODE(interp::prompt_from_strings("The", {{"x", std::vector<std::string>{}}}, vocab()), "empty-category");
    EXPECT_ERROR_CODE(interp::prompt_from_strings("caf\xC3\xA9", {{"x", std::string("a")}}, vocab()), "unknown-character");
    EXPECT_ERROR_CODE(interp::prompts_from_json(nlohmann::json::parse(R"({"text": "x"})"), vocab()), "bad-prompts-file");
    EXPECT_ERROR_CODE(interp::prompts_from_json(nlohmann::json::parse(R"([{"text": "x", "targets": {"a": 3}}])"), vocab()),
                      "bad-prompts-file");
}

TEST(RunPrompts, ProbabilitiesAreMasses) {
    const auto prompts = fixture_prompts();
    for (const char* d : testutil::kDialects) {
        const auto probs = interp::run_prompts(testutil::model(d), prompts);
        ASSERT_EQ(probs.size(), prompts.size());
        for (std::size_t i = 0; i < probs.size(); ++i) {
            double total = 0;
            for (const auto& [name, p] : probs[i]) {
                EXPECT_GE(p, 0.0);
                EXPECT_LE(p, 1.0);
                total += p;
            }
            // target and fake are disjoint in every fixture record
            EXPECT_LE(total, 1.0 + 1e-6);
        }
    }
}

TEST(RunPrompts, EveryIdSumsToOne) {
    interp::Prompt p = interp::prompt_from_strings("The capital", {{"t", std::string("a")}}, vocab());
    for (std::size_t i = 0; i < vocab().size(); ++i) p.categories["all"].insert(static_cast<interp::TokenId>(i));
    EXPECT_NEAR(interp::run_prompts(testutil::model("alpha"), {p})[0].at("all"), 1.0, 1e-6);
}

TEST(RunPrompts, MatchesDirectForward) {
    const auto prompts = fixture_prompts();
    for (const char* d : testutil::kDialects) {
        const interp::Model m = testutil::model(d);
        const auto probs = interp::run_prompts(m, prompts);
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            const interp::Tensor logits = m.forward({prompts[i].tokens});
            const auto last = logits.row(prompts[i].tokens.size() - 1);
            double peak = last[0];
            for (float v : last) peak = std::max(peak, double(v));
            double z = 0;
            for (float v : last) z += std::exp(v - peak);
            for (const auto& [name, ids] : prompts[i].categories) {
                double want = 0;
                for (auto id : ids) want += std::exp(last[static_cast<std::size_t>(id)] - peak) / z;
                EXPECT_NEAR(probs[i].at(name), want, 1e-6) << d << " " << name;
            }
        }
    }
}

TEST(RunPrompts, BatchedEqualsUnbatched) {
    auto prompts = fixture_prompts();
    prompts.push_back(interp::prompt_from_strings("The city of Rome", {{"x", std::string("Italy")}}, vocab()));
    for (const char* d : testutil::kDialects) {
        const interp::Model m = testutil::model(d);
        const auto batched = interp::run_prompts(m, prompts);
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            const auto single = interp::run_prompts(m, {prompts[i]});
            for (const auto& [name, p] : single[0]) EXPECT_NEAR(batched[i].at(name), p, 1e-6) << d;
        }
    }
}

TEST(RunPrompts, MonotoneAndDeterministic) {
    const interp::Model m = testutil::model("beta");
    auto p = interp::prompt_from_strings("The capital of France is", {{"c", std::string("Paris")}}, vocab());
    const double before = interp::run_prompts(m, {p})[0].at("c");
    p.categories["c"].insert(vocab().id("\xE2\x96\x81Rome"));
    const double after = interp::run_prompts(m, {p})[0].at("c");
    EXPECT_GE(after, before);
    EXPECT_EQ(interp::run_prompts(m, {p})[0].at("c"), after);
}

TEST(RunPrompts, VocabMismatch) {
    interp::ModelDims small = interp::ModelDims::desk(50);
    EXPECT_ERROR_CODE(interp::run_prompts(interp::build_model("alpha", small, 42), fixture_prompts()), "vocab-mismatch");
}

TEST(RunPrompts, Json) {
    const auto prompts = fixture_prompts();
    const auto probs = interp::run_prompts(testutil::model("alpha"), prompts);
    const auto j = interp::to_json(prompts[0], probs[0]);
    EXPECT_EQ(j.at("prompt"), "The capital of France is");
    EXPECT_TRUE(j.at("categories").contains("target"));
    EXPECT_TRUE(j.at("categories").contains("fake"));
}
