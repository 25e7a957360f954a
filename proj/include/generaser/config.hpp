#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "generaser/dataset.hpp"
#include "generaser/model.hpp"
#include "generaser/pipeline.hpp"
#include "generaser/trainer.hpp"

namespace generaser {

struct DataConfig {
    int train_aligned = 1200;
    int train_misaligned = 400;
    int val = 320;
    int val_ood = 80;  // held-out effect kind, never trained on
    int frames = 8;
    int height = 16;
    int width = 16;
    std::vector<EffectKind> train_effects = {EffectKind::kShadow, EffectKind::kLightHalo,
                                             EffectKind::kReflection, EffectKind::kNone};
    EffectKind holdout_effect = EffectKind::kRipple;
    int translation_jitter = 1;
    double brightness_jitter = 0.05;
    int mask_dilation = 0;

    void validate() const {
        if (train_aligned < 1 || train_misaligned < 0 || val < 1 || val_ood < 0) {
            throw ConfigError("data: split sizes must be positive (misaligned/ood may be zero)");
        }
        if (train_effects.empty()) throw ConfigError("data: train_effects must be non-empty");
        for (EffectKind k : train_effects) {
            if (k == holdout_effect) {
                throw ConfigError(std::string("data: holdout effect '") + to_string(k) +
                                  "' also appears in train_effects");
            }
        }
        if (translation_jitter < 0 || brightness_jitter < 0.0 || mask_dilation < 0) {
            throw ConfigError("data: jitter and dilation amounts must be non-negative");
        }
    }
};

struct SampleConfig {
    SamplerMode sampler = SamplerMode::kMcCfg;
    int steps = 40;
    double w_txt = 1.0;
    double w_m = 1.0;
    NormScope norm_scope = NormScope::kPerSample;

    InferOptions to_infer_options(std::uint64_t seed) const {
        InferOptions o;
        o.mode = sampler;
        o.steps = steps;
        o.scales.w_txt = w_txt;
        o.scales.w_m = w_m;
        o.scope = norm_scope;
        o.seed = seed;
        return o;
    }
};

struct EvalConfig {
    int max_samples = 8;    // per-eval inference cap (0 = whole split)
    int sweep_samples = 4;  // samples scored per sweep cell
    std::vector<double> grid = default_sweep_grid();
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out = "runs/toy";
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    SampleConfig sample;
    EvalConfig eval;

    void validate() const {
        data.validate();
        model.validate();
        train.validate();
        if (sample.steps < 1) throw ConfigError("sample: steps must be positive");
        if (eval.max_samples < 0 || eval.sweep_samples < 1) {
            throw ConfigError("eval: sample counts must be positive");
        }
        if (model.frames != data.frames || model.height != data.height || model.width != data.width) {
            throw ConfigError("model dimensions must match data dimensions");
        }
    }
};

namespace config_detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                                const std::string& section) {
    if (!j.is_object()) throw ConfigError("config section '" + section + "' must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) {
            throw ConfigError("unknown config key: " + (section.empty() ? key : section + "." + key));
        }
    }
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad value for config key " + section + "." + key + ": " + e.what());
    }
}

inline void parse_data(const nlohmann::json& j, DataConfig& d) {
    reject_unknown_keys(j,
                        {"train_aligned", "train_misaligned", "val", "val_ood", "frames", "height", "width",
                         "train_effects", "holdout_effect", "translation_jitter", "brightness_jitter",
                         "mask_dilation"},
                        "data");
    get_if(j, "train_aligned", d.train_aligned, "data");
    get_if(j, "train_misaligned", d.train_misaligned, "data");
    get_if(j, "val", d.val, "data");
    get_if(j, "val_ood", d.val_ood, "data");
    get_if(j, "frames", d.frames, "data");
    get_if(j, "height", d.height, "data");
    get_if(j, "width", d.width, "data");
    if (j.contains("train_effects")) {
        d.train_effects.clear();
        for (const auto& e : j.at("train_effects")) {
            d.train_effects.push_back(effect_kind_from_string(e.get<std::string>()));
        }
    }
    if (j.contains("holdout_effect")) {
        d.holdout_effect = effect_kind_from_string(j.at("holdout_effect").get<std::string>());
    }
    get_if(j, "translation_jitter", d.translation_jitter, "data");
    get_if(j, "brightness_jitter", d.brightness_jitter, "data");
    get_if(j, "mask_dilation", d.mask_dilation, "data");
}

inline void parse_model(const nlohmann::json& j, ModelConfig& m) {
    reject_unknown_keys(j,
                        {"frames", "height", "width", "video_channels", "cond_channels", "patch_h", "patch_w",
                         "d_model", "n_heads", "n_blocks", "d_txt", "l_max", "mlp_ratio", "d_time"},
                        "model");
    get_if(j, "frames", m.frames, "model");
    get_if(j, "height", m.height, "model");
    get_if(j, "width", m.width, "model");
    get_if(j, "video_channels", m.video_channels, "model");
    get_if(j, "cond_channels", m.cond_channels, "model");
    get_if(j, "patch_h", m.patch_h, "model");
    get_if(j, "patch_w", m.patch_w, "model");
    get_if(j, "d_model", m.d_model, "model");
    get_if(j, "n_heads", m.n_heads, "model");
    get_if(j, "n_blocks", m.n_blocks, "model");
    get_if(j, "d_txt", m.d_txt, "model");
    get_if(j, "l_max", m.l_max, "model");
    get_if(j, "mlp_ratio", m.mlp_ratio, "model");
    get_if(j, "d_time", m.d_time, "model");
}

inline void parse_train(const nlohmann::json& j, TrainConfig& t) {
    reject_unknown_keys(j,
                        {"p_text_drop", "p_mask_zero", "locator_steps", "preserver_steps", "stage2_steps",
                         "batch_size", "lr", "boundary", "unfreeze_base", "snapshot_fraction"},
                        "train");
    get_if(j, "p_text_drop", t.p_text_drop, "train");
    get_if(j, "p_mask_zero", t.p_mask_zero, "train");
    get_if(j, "locator_steps", t.locator_steps, "train");
    get_if(j, "preserver_steps", t.preserver_steps, "train");
    get_if(j, "stage2_steps", t.stage2_steps, "train");
    get_if(j, "batch_size", t.batch_size, "train");
    get_if(j, "lr", t.lr, "train");
    get_if(j, "boundary", t.boundary, "train");
    get_if(j, "unfreeze_base", t.unfreeze_base, "train");
    get_if(j, "snapshot_fraction", t.snapshot_fraction, "train");
}

inline void parse_sample(const nlohmann::json& j, SampleConfig& s) {
    reject_unknown_keys(j, {"sampler", "steps", "w_txt", "w_m", "norm_scope"}, "sample");
    if (j.contains("sampler")) s.sampler = sampler_mode_from_string(j.at("sampler").get<std::string>());
    get_if(j, "steps", s.steps, "sample");
    get_if(j, "w_txt", s.w_txt, "sample");
    get_if(j, "w_m", s.w_m, "sample");
    if (j.contains("norm_scope")) {
        const std::string v = j.at("norm_scope").get<std::string>();
        if (v == "per_sample") s.norm_scope = NormScope::kPerSample;
        else if (v == "per_frame") s.norm_scope = NormScope::kPerFrame;
        else throw ConfigError("bad value for config key sample.norm_scope: '" + v + "'");
    }
}

inline void parse_eval(const nlohmann::json& j, EvalConfig& e) {
    reject_unknown_keys(j, {"max_samples", "sweep_samples", "grid"}, "eval");
    get_if(j, "max_samples", e.max_samples, "eval");
    get_if(j, "sweep_samples", e.sweep_samples, "eval");
    get_if(j, "grid", e.grid, "eval");
}

}  // namespace config_detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    config_detail::reject_unknown_keys(j, {"seed", "out", "data", "model", "train", "sample", "eval"}, "");
    RunConfig c;
    config_detail::get_if(j, "seed", c.seed, "");
    config_detail::get_if(j, "out", c.out, "");
    if (j.contains("data")) config_detail::parse_data(j.at("data"), c.data);
    if (j.contains("model")) config_detail::parse_model(j.at("model"), c.model);
    if (j.contains("train")) config_detail::parse_train(j.at("train"), c.train);
    if (j.contains("sample")) config_detail::parse_sample(j.at("sample"), c.sample);
    if (j.contains("eval")) config_detail::parse_eval(j.at("eval"), c.eval);
    c.validate();
    return c;
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json effects = nlohmann::json::array();
    for (EffectKind k : c.data.train_effects) effects.push_back(to_string(k));
    return {
        {"seed", c.seed},
        {"out", c.out},
        {"data",
         {{"train_aligned", c.data.train_aligned},
          {"train_misaligned", c.data.train_misaligned},
          {"val", c.data.val},
          {"val_ood", c.data.val_ood},
          {"frames", c.data.frames},
          {"height", c.data.height},
          {"width", c.data.width},
          {"train_effects", effects},
          {"holdout_effect", to_string(c.data.holdout_effect)},
          {"translation_jitter", c.data.translation_jitter},
          {"brightness_jitter", c.data.brightness_jitter},
          {"mask_dilation", c.data.mask_dilation}}},
        {"model", model_config_to_json(c.model)},
        {"train",
         {{"p_text_drop", c.train.p_text_drop},
          {"p_mask_zero", c.train.p_mask_zero},
          {"locator_steps", c.train.locator_steps},
          {"preserver_steps", c.train.preserver_steps},
          {"stage2_steps", c.train.stage2_steps},
          {"batch_size", c.train.batch_size},
          {"lr", c.train.lr},
          {"boundary", c.train.boundary},
          {"unfreeze_base", c.train.unfreeze_base},
          {"snapshot_fraction", c.train.snapshot_fraction}}},
        {"sample",
         {{"sampler", to_string(c.sample.sampler)},
          {"steps", c.sample.steps},
          {"w_txt", c.sample.w_txt},
          {"w_m", c.sample.w_m},
          {"norm_scope", c.sample.norm_scope == NormScope::kPerSample ? "per_sample" : "per_frame"}}},
        {"eval",
         {{"max_samples", c.eval.max_samples},
          {"sweep_samples", c.eval.sweep_samples},
          {"grid", c.eval.grid}}},
    };
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    return run_config_from_json(io_detail::load_json(path));
}

// The resolved config is written next to every command's outputs so each
// artifact records exactly what produced it.
inline void write_config_provenance(const RunConfig& c, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    io_detail::save_json(out_dir / "config_used.json", run_config_to_json(c));
}

// ---------------------------------------------------------------------------
// Dataset generation driven by the config
// ---------------------------------------------------------------------------

namespace config_detail {
inline constexpr std::uint64_t kGenAligned = 0x47454e41u;
inline constexpr std::uint64_t kGenMisaligned = 0x47454e4du;
inline constexpr std::uint64_t kGenVal = 0x47454e56u;
inline constexpr std::uint64_t kGenOod = 0x47454e4fu;
}  // namespace config_detail

// Generates the four splits under dir: aligned/misaligned training data over
// the training effect pool, an aligned validation split from the same pool,
// and an out-of-distribution split using only the held-out effect kind.
inline void generate_splits(const RunConfig& cfg, const std::filesystem::path& data_dir) {
    const DataConfig& d = cfg.data;
    d.validate();
    auto gen = [&](std::uint64_t purpose, int count, const std::vector<EffectKind>& kinds,
                   bool misaligned, const std::string& name) {
        Rng rng = stream_rng(cfg.seed, purpose);
        std::vector<SampleRecord> records;
        records.reserve(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) {
            SceneSpec spec = random_scene_spec(rng, mix64(cfg.seed ^ purpose) + static_cast<std::uint64_t>(i),
                                               d.frames, d.height, d.width, kinds, d.mask_dilation);
            if (misaligned) {
                spec.misalignment = MisalignSpec{d.translation_jitter, d.brightness_jitter};
            }
            records.push_back(generate_scene(spec));
        }
        write_dataset(data_dir / name, records);
        log(LogLevel::kInfo, "wrote %d samples to %s", count, (data_dir / name).string().c_str());
    };
    gen(config_detail::kGenAligned, d.train_aligned, d.train_effects, false, "train_aligned");
    if (d.train_misaligned > 0) {
        gen(config_detail::kGenMisaligned, d.train_misaligned, d.train_effects, true, "train_misaligned");
    }
    gen(config_detail::kGenVal, d.val, d.train_effects, false, "val");
    if (d.val_ood > 0) {
        gen(config_detail::kGenOod, d.val_ood, {d.holdout_effect}, false, "val_ood");
    }
}

}  // namespace generaser
