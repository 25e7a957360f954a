// Run configuration: JSON parsing with strict key checking, defaults,
// round-tripping, validation, provenance files, and split generation.

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <catch2/catch_amalgamated.hpp>
#include <json.hpp>

#include "generaser/config.hpp"

using namespace generaser;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("generaser_config_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

// A valid config that differs from the defaults in every section.
RunConfig non_default_config() {
    RunConfig c;
    c.seed = 99;
    c.out = "runs/alt";
    c.data.train_aligned = 12;
    c.data.train_misaligned = 4;
    c.data.val = 3;
    c.data.val_ood = 2;
    c.data.frames = 4;
    c.data.height = 12;
    c.data.width = 12;
    c.data.train_effects = {EffectKind::kShadow, EffectKind::kNone};
    c.data.holdout_effect = EffectKind::kLightHalo;
    c.data.translation_jitter = 2;
    c.data.brightness_jitter = 0.1;
    c.data.mask_dilation = 1;
    c.model.frames = 4;
    c.model.height = 12;
    c.model.width = 12;
    c.model.d_model = 32;
    c.model.n_heads = 2;
    c.model.n_blocks = 2;
    c.model.d_txt = 16;
    c.model.d_time = 16;
    c.train.p_text_drop = 0.25;
    c.train.p_mask_zero = 0.15;
    c.train.locator_steps = 7;
    c.train.preserver_steps = 9;
    c.train.stage2_steps = 5;
    c.train.batch_size = 3;
    c.train.lr = 2e-3;
    c.train.boundary = 0.8;
    c.train.unfreeze_base = true;
    c.train.snapshot_fraction = 0.5;
    c.sample.sampler = SamplerMode::kLdCfg;
    c.sample.steps = 12;
    c.sample.w_txt = 2.0;
    c.sample.w_m = 3.0;
    c.sample.norm_scope = NormScope::kPerFrame;
    c.eval.max_samples = 5;
    c.eval.sweep_samples = 2;
    c.eval.grid = {0.5, 1.5};
    c.validate();
    return c;
}

}  // namespace

TEST_CASE("default run config validates and an empty document reproduces it", "[config]") {
    RunConfig defaults;
    REQUIRE_NOTHROW(defaults.validate());

    const RunConfig parsed = run_config_from_json(json::object());
    CHECK(parsed.seed == defaults.seed);
    CHECK(parsed.out == defaults.out);
    CHECK(parsed.data.train_aligned == defaults.data.train_aligned);
    CHECK(parsed.data.holdout_effect == EffectKind::kRipple);
    CHECK(parsed.model.d_model == defaults.model.d_model);
    CHECK(parsed.train.p_text_drop == defaults.train.p_text_drop);
    CHECK(parsed.sample.sampler == SamplerMode::kMcCfg);
    CHECK(parsed.eval.grid == default_sweep_grid());
    CHECK(run_config_to_json(parsed) == run_config_to_json(defaults));
}

TEST_CASE("unknown keys are rejected by name at every level", "[config]") {
    auto message_of = [](const json& doc) -> std::string {
        try {
            run_config_from_json(doc);
        } catch (const ConfigError& e) {
            return e.what();
        }
        return "";
    };
    CHECK(message_of({{"bogus_knob", 1}}) == "unknown config key: bogus_knob");
    CHECK(message_of({{"data", {{"bogus_knob", 1}}}}) == "unknown config key: data.bogus_knob");
    CHECK(message_of({{"model", {{"depth", 4}}}}) == "unknown config key: model.depth");
    CHECK(message_of({{"train", {{"momentum", 0.9}}}}) == "unknown config key: train.momentum");
    CHECK(message_of({{"sample", {{"eta", 0.0}}}}) == "unknown config key: sample.eta");
    CHECK(message_of({{"eval", {{"metrics", "all"}}}}) == "unknown config key: eval.metrics");

    // A section that is not an object is rejected before key inspection.
    REQUIRE_THROWS_AS(run_config_from_json({{"data", 7}}), ConfigError);
}

TEST_CASE("json round trip preserves a fully customized config", "[config]") {
    const RunConfig c = non_default_config();
    const json j = run_config_to_json(c);
    const RunConfig back = run_config_from_json(j);

    CHECK(back.seed == c.seed);
    CHECK(back.out == c.out);
    CHECK(back.data.train_aligned == c.data.train_aligned);
    CHECK(back.data.train_misaligned == c.data.train_misaligned);
    CHECK(back.data.val == c.data.val);
    CHECK(back.data.val_ood == c.data.val_ood);
    CHECK(back.data.frames == c.data.frames);
    CHECK(back.data.height == c.data.height);
    CHECK(back.data.width == c.data.width);
    CHECK(back.data.train_effects == c.data.train_effects);
    CHECK(back.data.holdout_effect == c.data.holdout_effect);
    CHECK(back.data.translation_jitter == c.data.translation_jitter);
    CHECK(back.data.brightness_jitter == c.data.brightness_jitter);
    CHECK(back.data.mask_dilation == c.data.mask_dilation);
    CHECK(back.model.d_model == c.model.d_model);
    CHECK(back.model.n_blocks == c.model.n_blocks);
    CHECK(back.model.d_txt == c.model.d_txt);
    CHECK(back.train.p_text_drop == c.train.p_text_drop);
    CHECK(back.train.lr == c.train.lr);
    CHECK(back.train.boundary == c.train.boundary);
    CHECK(back.train.unfreeze_base == c.train.unfreeze_base);
    CHECK(back.train.snapshot_fraction == c.train.snapshot_fraction);
    CHECK(back.sample.sampler == SamplerMode::kLdCfg);
    CHECK(back.sample.norm_scope == NormScope::kPerFrame);
    CHECK(back.sample.w_txt == c.sample.w_txt);
    CHECK(back.eval.grid == c.eval.grid);

    // Serializing the parsed copy reproduces the document exactly.
    CHECK(run_config_to_json(back) == j);
}

TEST_CASE("partial overrides leave untouched fields at their defaults", "[config]") {
    const RunConfig c = run_config_from_json({{"train", {{"lr", 5e-4}, {"batch_size", 4}}}});
    const TrainConfig defaults;
    CHECK(c.train.lr == 5e-4);
    CHECK(c.train.batch_size == 4);
    CHECK(c.train.locator_steps == defaults.locator_steps);
    CHECK(c.train.preserver_steps == defaults.preserver_steps);
    CHECK(c.train.boundary == defaults.boundary);
    CHECK(c.data.train_aligned == DataConfig{}.train_aligned);
}

TEST_CASE("malformed values and enum names are reported as config errors", "[config]") {
    REQUIRE_THROWS_AS(run_config_from_json({{"train", {{"lr", "fast"}}}}), ConfigError);
    REQUIRE_THROWS_WITH(run_config_from_json({{"train", {{"lr", "fast"}}}}),
                        Catch::Matchers::ContainsSubstring("train.lr"));
    REQUIRE_THROWS_AS(run_config_from_json({{"sample", {{"sampler", "plain"}}}}), ConfigError);
    REQUIRE_THROWS_AS(run_config_from_json({{"sample", {{"norm_scope", "per_pixel"}}}}), ConfigError);
    REQUIRE_THROWS_AS(run_config_from_json({{"data", {{"train_effects", json::array({"sparkle"})}}}}),
                      ConfigError);
    REQUIRE_THROWS_AS(sampler_mode_from_string("plain"), ConfigError);
    CHECK(sampler_mode_from_string("mccfg") == SamplerMode::kMcCfg);
    CHECK(sampler_mode_from_string("ldcfg") == SamplerMode::kLdCfg);
    CHECK(sampler_mode_from_string("conditional-only") == SamplerMode::kConditionalOnly);
    CHECK(sampler_mode_from_string("mask-only") == SamplerMode::kMaskOnly);
}

TEST_CASE("cross-section and data validation failures are rejected", "[config]") {
    // Model geometry must agree with the data geometry.
    REQUIRE_THROWS_WITH(run_config_from_json({{"model", {{"height", 32}, {"width", 32}}}}),
                        Catch::Matchers::ContainsSubstring("model dimensions"));
    // The held-out effect may not appear in the training pool.
    REQUIRE_THROWS_WITH(
        run_config_from_json({{"data", {{"train_effects", json::array({"shadow", "ripple"})}}}}),
        Catch::Matchers::ContainsSubstring("holdout"));
    // Empty training pool.
    REQUIRE_THROWS_AS(run_config_from_json({{"data", {{"train_effects", json::array()}}}}), ConfigError);
    // Nonsensical counts.
    REQUIRE_THROWS_AS(run_config_from_json({{"data", {{"train_aligned", 0}}}}), ConfigError);
    REQUIRE_THROWS_AS(run_config_from_json({{"sample", {{"steps", 0}}}}), ConfigError);
    REQUIRE_THROWS_AS(run_config_from_json({{"eval", {{"sweep_samples", 0}}}}), ConfigError);
}

TEST_CASE("config files load from disk and provenance copies are written", "[config]") {
    TempDir tmp;
    const RunConfig c = non_default_config();

    write_config_provenance(c, tmp.path / "run");
    const fs::path written = tmp.path / "run" / "config_used.json";
    REQUIRE(fs::exists(written));
    const RunConfig back = load_run_config(written);
    CHECK(run_config_to_json(back) == run_config_to_json(c));

    REQUIRE_THROWS_AS(load_run_config(tmp.path / "missing.json"), IoError);
    std::ofstream(tmp.path / "broken.json") << "{ not json";
    REQUIRE_THROWS_AS(load_run_config(tmp.path / "broken.json"), ConfigError);
}

TEST_CASE("generate_splits writes every configured split with the right contents", "[config]") {
    TempDir tmp;
    RunConfig c = non_default_config();
    c.data.train_aligned = 3;
    c.data.train_misaligned = 2;
    c.data.val = 2;
    c.data.val_ood = 2;

    generate_splits(c, tmp.path);
    const auto aligned = read_dataset(tmp.path / "train_aligned");
    const auto misaligned = read_dataset(tmp.path / "train_misaligned");
    const auto val = read_dataset(tmp.path / "val");
    const auto ood = read_dataset(tmp.path / "val_ood");
    REQUIRE(aligned.size() == 3);
    REQUIRE(misaligned.size() == 2);
    REQUIRE(val.size() == 2);
    REQUIRE(ood.size() == 2);

    for (const SampleRecord& r : aligned) {
        CHECK_FALSE(r.spec.misalignment.has_value());
        CHECK(r.spec.effect_kind != c.data.holdout_effect);
    }
    for (const SampleRecord& r : misaligned) {
        REQUIRE(r.spec.misalignment.has_value());
        CHECK(r.spec.misalignment->translation_jitter == c.data.translation_jitter);
        CHECK(r.spec.misalignment->brightness_jitter == c.data.brightness_jitter);
    }
    // The out-of-distribution split uses only the held-out effect kind.
    for (const SampleRecord& r : ood) CHECK(r.spec.effect_kind == c.data.holdout_effect);

    // Generation is a pure function of the config.
    TempDir tmp2;
    generate_splits(c, tmp2.path);
    const auto aligned2 = read_dataset(tmp2.path / "train_aligned");
    REQUIRE(aligned2.size() == aligned.size());
    CHECK(bit_identical(aligned2[0].gt_video, aligned[0].gt_video));
    CHECK(bit_identical(aligned2[0].ref_video, aligned[0].ref_video));

    // Splits that are configured away are not created.
    TempDir tmp3;
    c.data.train_misaligned = 0;
    c.data.val_ood = 0;
    generate_splits(c, tmp3.path);
    CHECK_FALSE(fs::exists(tmp3.path / "train_misaligned"));
    CHECK_FALSE(fs::exists(tmp3.path / "val_ood"));
}
