#include <filesystem>
#include <fstream>

#include "support.hpp"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("interp_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
    fs::create_directories(dir);
    return dir / name;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

}  // namespace

TEST(ModelIo, WeightsRoundTrip) {
    const interp::Model m = testutil::model("gamma", 9);
    const fs::path w = scratch("gamma.ntzo");
    interp::write_weights(w, m);
    const auto weights = interp::read_weights(w);
    EXPECT_EQ(weights, m.weights());

    interp::ModelManifest manifest{"gamma", m.dims(), 9, "gamma.ntzo"};
    const fs::path mp = scratch("gamma.json");
    write_text(mp, interp::manifest_to_json(manifest).dump());
    const interp::Model loaded = interp::load_model(mp);
    EXPECT_EQ(loaded.forward({testutil::france()}), m.forward({testutil::france()}));
}

TEST(ModelIo, ManifestWithoutWeightsRegenerates) {
    const fs::path mp = scratch("beta.json");
    write_text(mp, R"({"dialect": "beta", "dims": {"vocab_size": 124}, "seed": 5})");
    EXPECT_EQ(interp::load_model(mp).weights(), testutil::model("beta", 5).weights());
}

TEST(ModelIo, Errors) {
    const fs::path bad = scratch("bad.json");
    write_text(bad, R"({"dims": {}})");
    EXPECT_ERROR_CODE(interp::load_model(bad), "bad-manifest");
    write_text(bad, "{not json");
    EXPECT_ERROR_CODE(interp::load_model(bad), "bad-manifest");
    EXPECT_ERROR_CODE(interp::load_model(scratch("missing.json")), "bad-manifest");
    write_text(bad, R"({"dialect": "delta", "dims": {"vocab_size": 10}})");
    EXPECT_ERROR_CODE(interp::load_model(bad), "unknown-dialect");

    const fs::path junk = scratch("junk.ntzo");
    write_text(junk, "NOPE");
    EXPECT_ERROR_CODE(interp::read_weights(junk), "bad-weights-file");

    // truncated file
    const interp::Model m = testutil::model("alpha");
    const fs::path w = scratch("alpha.ntzo");
    interp::write_weights(w, m);
    fs::resize_file(w, fs::file_size(w) - 7);
    EXPECT_ERROR_CODE(interp::read_weights(w), "bad-weights-file");
}

TEST(ModelIo, WeightsMismatch) {
    auto weights = testutil::model("alpha").weights();
    weights.erase("lm_head.weight");
    EXPECT_ERROR_CODE(interp::Model::with_weights(interp::Dialect::alpha, interp::ModelDims::desk(testutil::vocab().size()), 42,
                                                  weights),
                      "weights-mismatch");
}
