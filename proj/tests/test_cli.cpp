#include <filesystem>
#include <fstream>

#include "cli_runner.hpp"
#include "support.hpp"

using testutil::run_cli;
using nlohmann::json;

TEST(Cli, RunTestsHealthyZoo) {
    const auto r = run_cli("run-tests --all --seed 42 --json");
    EXPECT_EQ(r.exit_code, 0);
    const json j = json::parse(r.out);
    EXPECT_EQ(j.at("overall"), "pass");
    EXPECT_EQ(j.at("reports").size(), 4u);
}

TEST(Cli, RunTestsFaultsExitOne) {
    for (const char* fault : {"tuple-convention-flip", "misrenamed-attn", "denormalized-attn-probs"}) {
        for (const char* d : testutil::kDialects) {
            EXPECT_EQ(run_cli(std::string("run-tests ") + d + " --inject-fault " + fault).exit_code, 1) << d << " " << fault;
        }
    }
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run_cli("run-tests nosuchmodel").exit_code, 2);
    EXPECT_EQ(run_cli("run-tests").exit_code, 2);
    EXPECT_EQ(run_cli("run-tests alpha --inject-fault bit-rot").exit_code, 2);
    EXPECT_EQ(run_cli("run-tests alpha --seed -3").exit_code, 2);
    EXPECT_EQ(run_cli("frobnicate").exit_code, 2);
    EXPECT_EQ(run_cli("logit-lens alpha --prompt 'caf\xC3\xA9'").exit_code, 2);
    EXPECT_EQ(run_cli("").exit_code, 2);
}

TEST(Cli, BadManifestExitsTwo) {
    const auto p = std::filesystem::temp_directory_path() / "interp_cli_bad_manifest.json";
    std::ofstream(p) << R"({"dialect": "alpha"})";
    EXPECT_EQ(run_cli("run-tests " + p.string()).exit_code, 2);
    std::ofstream(p) << R"({"dialect": "gamma", "dims": {"vocab_size": 124}, "seed": 3})";
    EXPECT_EQ(run_cli("run-tests " + p.string()).exit_code, 0);
}

TEST(Cli, RenameConfigFlag) {
    const auto p = std::filesystem::temp_directory_path() / "interp_cli_rename.json";
    std::ofstream(p) << R"({"attn_name": ["attention", "self_attention"]})";
    EXPECT_EQ(run_cli("run-tests gamma --rename-config " + p.string()).exit_code, 0);
    std::ofstream(p) << R"({"layers_name": "nonexistent"})";
    EXPECT_EQ(run_cli("run-tests gamma --rename-config " + p.string()).exit_code, 2);
}

TEST(Cli, LogitLensJson) {
    const auto r = run_cli("logit-lens alpha --prompt 'The capital of France is' --top-k 3 --json");
    ASSERT_EQ(r.exit_code, 0);
    const json j = json::parse(r.out);
    const auto& rows = j.at("lens");
    EXPECT_EQ(rows.size(), 3u * 5u);
    for (const auto& row : rows) {
        EXPECT_EQ(row.at("top").size(), 3u);
        for (const auto& t : row.at("top")) {
            EXPECT_GE(t.at("p").get<double>(), 0.0);
            EXPECT_LE(t.at("p").get<double>(), 1.0);
        }
    }
    // final layer top-1 at the last position is the greedy next token
    const auto logits = testutil::model("alpha").forward({testutil::france()});
    EXPECT_EQ(rows.back().at("top")[0].at("id").get<std::size_t>(), interp::argmax_rows(logits).back());
}

TEST(Cli, ByteIdenticalJson) {
    for (const char* args : {"run-tests --all --json --enable-attn-probs", "logit-lens beta --prompt 'The city' --json",
                             "run-prompts gamma --json", "zoo list --json"}) {
        const auto a = run_cli(args);
        const auto b = run_cli(args);
        EXPECT_EQ(a.exit_code, 0) << args;
        EXPECT_FALSE(a.out.empty()) << args;
        EXPECT_EQ(a.out, b.out) << args;
        EXPECT_TRUE(json::accept(a.out)) << args;
    }
}

TEST(Cli, ZooList) {
    const json j = json::parse(run_cli("zoo list --json").out);
    ASSERT_EQ(j.size(), 4u);
    EXPECT_EQ(j[2].at("dialect"), "beta-legacy");
    EXPECT_EQ(j[2].at("layer_returns"), "tuple");
    EXPECT_EQ(j[1].at("layer_returns"), "bare-tensor");
    const auto text = run_cli("zoo list").out;
    for (const char* d : testutil::kDialects) EXPECT_NE(text.find(d), std::string::npos);
}

TEST(Cli, SelfPatchDemo) {
    const auto r = run_cli("demo-patchscope alpha --source-prompt 'The capital of France is' "
                           "--target-prompt 'The capital of France is' --json");
    ASSERT_EQ(r.exit_code, 0);
    const json j = json::parse(r.out);
    EXPECT_EQ(j.at("before"), j.at("after"));
    const auto cross = json::parse(run_cli("demo-patchscope alpha --source-prompt 'The capital of France is' "
                                           "--target-prompt 'The capital of England is' --json")
                                       .out);
    EXPECT_GT(cross.at("max_abs_logit_diff").get<double>(), 0.0);
}

TEST(Cli, RunPromptsFixture) {
    const auto r = run_cli("run-prompts alpha --json");
    ASSERT_EQ(r.exit_code, 0);
    const json j = json::parse(r.out);
    ASSERT_EQ(j.size(), 3u);
    for (const auto& rec : j) {
        EXPECT_TRUE(rec.at("categories").contains("target"));
        EXPECT_TRUE(rec.at("categories").contains("fake"));
    }
    const auto bad = std::filesystem::temp_directory_path() / "interp_cli_bad_prompts.json";
    std::ofstream(bad) << R"([{"text": 1}])";
    EXPECT_EQ(run_cli("run-prompts alpha --file " + bad.string()).exit_code, 2);
}

TEST(Cli, FixturesDirOverride) {
    EXPECT_EQ(run_cli("run-prompts alpha", "INTERP_FIXTURES_DIR=/nonexistent").exit_code, 2);
    EXPECT_EQ(run_cli("run-prompts alpha", "INTERP_FIXTURES_DIR='" INTERP_TEST_FIXTURES_DIR "'").exit_code, 0);
}

TEST(Cli, OutFile) {
    const auto p = std::filesystem::temp_directory_path() / "interp_cli_out.json";
    std::filesystem::remove(p);
    const auto r = run_cli("zoo list --json --out " + p.string());
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_TRUE(r.out.empty());
    std::ifstream in(p);
    EXPECT_EQ(json::parse(in).size(), 4u);
}

TEST(Cli, Trace) {
    const auto r = run_cli("trace beta-legacy --prompt 'The city' --read 'layers_output[1]' --read logits");
    ASSERT_EQ(r.exit_code, 0);
    const json j = json::parse(r.out);
    EXPECT_EQ(j.at("captures").at("layers_output[1]").at("shape"), (json{1, 2, 16}));
    EXPECT_EQ(run_cli("trace alpha --prompt 'The' --read 'attention_probabilities[0]'").exit_code, 2);
}
