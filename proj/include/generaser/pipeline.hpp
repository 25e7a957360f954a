#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "generaser/metrics.hpp"

namespace generaser {

enum class SamplerMode { kMcCfg, kLdCfg, kConditionalOnly, kMaskOnly };

inline const char* to_string(SamplerMode m) {
    switch (m) {
        case SamplerMode::kMcCfg: return "mccfg";
        case SamplerMode::kLdCfg: return "ldcfg";
        case SamplerMode::kConditionalOnly: return "conditional-only";
        case SamplerMode::kMaskOnly: return "mask-only";
    }
    return "?";
}

inline SamplerMode sampler_mode_from_string(const std::string& s) {
    if (s == "mccfg") return SamplerMode::kMcCfg;
    if (s == "ldcfg") return SamplerMode::kLdCfg;
    if (s == "conditional-only") return SamplerMode::kConditionalOnly;
    if (s == "mask-only") return SamplerMode::kMaskOnly;
    throw ConfigError("unknown sampler mode '" + s +
                      "' (expected mccfg, ldcfg, conditional-only or mask-only)");
}

struct InferOptions {
    SamplerMode mode = SamplerMode::kMcCfg;
    GuidanceScales scales;
    NormScope scope = NormScope::kPerSample;
    int steps = 40;
    std::uint64_t seed = 0;
};

namespace pipeline_detail {
inline constexpr std::uint64_t kInitNoiseStream = 0x494e4954u;
}

// Runs the chosen sampler on one record from pure noise and clamps to the
// pixel range. The initial noise depends only on (seed, sample_index), so
// different modes and scales are comparable on the same draw.
template <typename S>
VideoClip infer_sample(const ExpertPair<S>& pair, const SampleRecord& rec, const TextEmbedder<S>& emb,
                       const InferOptions& opts, Workspace<S>& ws, std::size_t sample_index = 0,
                       RouteRecord* route = nullptr) {
    const Schedule sched = Schedule::uniform(opts.steps);
    Rng rng = stream_rng(opts.seed, pipeline_detail::kInitNoiseStream, sample_index);
    ConditionBundle<S> full = make_full_bundle(rec, emb);
    full.x_t = gaussian_tensor<S>(rec.gt_video.shape(), rng);
    full.t = sched.t.front();
    Tensor<S> x;
    switch (opts.mode) {
        case SamplerMode::kMcCfg: {
            BundleTriple<S> tr = make_bundle_triple(full, emb);
            x = sample_mccfg(pair, tr, sched, opts.scales, ws, route, opts.scope);
            break;
        }
        case SamplerMode::kLdCfg: {
            BundleTriple<S> tr = make_bundle_triple(full, emb);
            x = sample_ldcfg(pair, tr, sched, ws, route);
            break;
        }
        case SamplerMode::kConditionalOnly:
            x = sample_conditional(pair, full, sched, ws, route);
            break;
        case SamplerMode::kMaskOnly:
            x = sample_conditional(pair, with_text_dropped(full, emb), sched, ws, route);
            break;
    }
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], S(0), S(1));
    return x.template cast<float>();
}

struct SampleEval {
    int index = 0;
    std::string effect;
    bool misaligned = false;
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<double> region_psnr;           // over mask-or-effect support
    std::optional<double> baseline_region_psnr;  // copy-reference over the same support
    CropMetrics crop16;
    CropMetrics crop32;
    std::optional<double> effect_mae;
    std::optional<double> baseline_effect_mae;  // copy-reference effect residue

    nlohmann::json to_json() const {
        auto opt = [](const std::optional<double>& v) {
            return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
        };
        return {{"index", index},
                {"effect", effect},
                {"misaligned", misaligned},
                {"psnr", psnr},
                {"ssim", ssim},
                {"region_psnr", opt(region_psnr)},
                {"baseline_region_psnr", opt(baseline_region_psnr)},
                {"crop16",
                 {{"mae_ref", crop16.mae_ref}, {"psnr_ref_bg", crop16.psnr_ref_bg}, {"psnr_gt_bg", crop16.psnr_gt_bg}}},
                {"crop32",
                 {{"mae_ref", crop32.mae_ref}, {"psnr_ref_bg", crop32.psnr_ref_bg}, {"psnr_gt_bg", crop32.psnr_gt_bg}}},
                {"effect_mae", opt(effect_mae)},
                {"baseline_effect_mae", opt(baseline_effect_mae)}};
    }
};

// Scores one model output against ground truth, alongside the
// copy-reference baseline (pretending the model returned `ref` unchanged).
inline SampleEval evaluate_sample(const SampleRecord& rec, const VideoClip& out, int index = 0) {
    SampleEval e;
    e.index = index;
    e.effect = to_string(rec.spec.effect_kind);
    e.misaligned = rec.spec.misalignment.has_value();
    e.psnr = psnr(out, rec.gt_video);
    e.ssim = ssim(out, rec.gt_video);
    const Tensor<float> region = removal_region(rec.mask, rec.effect_map);
    e.region_psnr = region_psnr(out, rec.gt_video, region);
    e.baseline_region_psnr = region_psnr(rec.ref_video, rec.gt_video, region);
    e.crop16 = crop_background_metrics(rec.ref_video, out, rec.gt_video, 16);
    e.crop32 = crop_background_metrics(rec.ref_video, out, rec.gt_video, 32);
    e.effect_mae = effect_region_error(out, rec.gt_video, rec.effect_map, rec.mask);
    e.baseline_effect_mae = effect_region_error(rec.ref_video, rec.gt_video, rec.effect_map, rec.mask);
    return e;
}

struct EvalReport {
    std::vector<SampleEval> samples;
    std::optional<SweepTable> sweep;

    // Arithmetic mean of f over samples where present.
    template <typename F>
    std::optional<double> mean_of(F f) const {
        double sum = 0.0;
        int n = 0;
        for (const SampleEval& s : samples) {
            const std::optional<double> v = f(s);
            if (v) {
                sum += *v;
                ++n;
            }
        }
        if (n == 0) return std::nullopt;
        return sum / n;
    }

    nlohmann::json to_json() const {
        auto opt = [](const std::optional<double>& v) {
            return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
        };
        nlohmann::json per_sample = nlohmann::json::array();
        for (const SampleEval& s : samples) per_sample.push_back(s.to_json());
        auto always = [](double SampleEval::*f) {
            return [f](const SampleEval& s) { return std::optional<double>(s.*f); };
        };
        nlohmann::json agg = {
            {"count", samples.size()},
            {"psnr", opt(mean_of(always(&SampleEval::psnr)))},
            {"ssim", opt(mean_of(always(&SampleEval::ssim)))},
            {"region_psnr", opt(mean_of([](const SampleEval& s) { return s.region_psnr; }))},
            {"baseline_region_psnr", opt(mean_of([](const SampleEval& s) { return s.baseline_region_psnr; }))},
            {"crop16_mae_ref", opt(mean_of([](const SampleEval& s) { return std::optional(s.crop16.mae_ref); }))},
            {"crop16_psnr_ref_bg",
             opt(mean_of([](const SampleEval& s) { return std::optional(s.crop16.psnr_ref_bg); }))},
            {"crop16_psnr_gt_bg",
             opt(mean_of([](const SampleEval& s) { return std::optional(s.crop16.psnr_gt_bg); }))},
            {"crop32_mae_ref", opt(mean_of([](const SampleEval& s) { return std::optional(s.crop32.mae_ref); }))},
            {"crop32_psnr_ref_bg",
             opt(mean_of([](const SampleEval& s) { return std::optional(s.crop32.psnr_ref_bg); }))},
            {"crop32_psnr_gt_bg",
             opt(mean_of([](const SampleEval& s) { return std::optional(s.crop32.psnr_gt_bg); }))},
            {"effect_mae", opt(mean_of([](const SampleEval& s) { return s.effect_mae; }))},
            {"baseline_effect_mae", opt(mean_of([](const SampleEval& s) { return s.baseline_effect_mae; }))},
        };
        nlohmann::json j = {{"aggregate", agg}, {"per_sample", per_sample}};
        if (sweep) j["sweep"] = sweep->to_json();
        return j;
    }
};

// Infers and scores every record (up to max_samples, 0 = all).
template <typename S>
EvalReport evaluate_dataset(const ExpertPair<S>& pair, const std::vector<SampleRecord>& records,
                            const TextEmbedder<S>& emb, const InferOptions& opts, Workspace<S>& ws,
                            std::size_t max_samples = 0) {
    EvalReport report;
    const std::size_t n = max_samples == 0 ? records.size() : std::min(max_samples, records.size());
    for (std::size_t i = 0; i < n; ++i) {
        const VideoClip out = infer_sample(pair, records[i], emb, opts, ws, i);
        report.samples.push_back(evaluate_sample(records[i], out, static_cast<int>(i)));
        log(LogLevel::kDebug, "eval sample %zu/%zu psnr %.2f", i + 1, n, report.samples.back().psnr);
    }
    return report;
}

}  // namespace generaser
