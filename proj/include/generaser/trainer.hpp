#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "generaser/dataset.hpp"
#include "generaser/denoiser.hpp"
#include "generaser/optimizer.hpp"
#include "generaser/sampler.hpp"

namespace generaser {

// Toy defaults; a production-scale run would budget on the order of
// 12,500 (locator), 20,000 (preserver) and 1,800 (stage 2) steps.
struct TrainConfig {
    double p_text_drop = 0.1;
    double p_mask_zero = 0.2;
    int locator_steps = 500;
    int preserver_steps = 800;
    int stage2_steps = 200;
    int batch_size = 2;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    double boundary = 0.875;  // expert noise ranges partition [0,1] here
    bool unfreeze_base = false;
    double snapshot_fraction = 0.25;

    void validate() const {
        if (p_text_drop < 0.0 || p_text_drop > 1.0 || p_mask_zero < 0.0 || p_mask_zero > 1.0) {
            throw ConfigError("train: dropout probabilities must lie in [0,1]");
        }
        if (locator_steps < 1 || preserver_steps < 1 || stage2_steps < 0) {
            throw ConfigError("train: step budgets must be positive");
        }
        if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
        if (!(lr > 0.0)) throw ConfigError("train: learning rate must be positive");
        if (!(boundary > 0.0 && boundary < 1.0)) throw ConfigError("train: boundary must lie in (0,1)");
        if (snapshot_fraction <= 0.0 || snapshot_fraction >= 1.0) {
            throw ConfigError("train: snapshot fraction must lie in (0,1)");
        }
    }
};

enum class BranchLabel { kFull, kTextOnly, kMaskOnly };

inline const char* to_string(BranchLabel l) {
    switch (l) {
        case BranchLabel::kFull: return "full";
        case BranchLabel::kTextOnly: return "text_only";
        case BranchLabel::kMaskOnly: return "mask_only";
    }
    return "?";
}

// Conditional dropout over the full bundle. Text and mask drops are
// independent Bernoulli draws; the joint (unconditional) outcome is excluded
// by redrawing, which renormalizes the remaining three branches.
template <typename S>
std::pair<BranchLabel, ConditionBundle<S>> branch_dropout(const ConditionBundle<S>& full, Rng& rng, double p_text,
                                                          double p_mask, const TextEmbedder<S>& emb) {
    if (p_text < 0.0 || p_text > 1.0 || p_mask < 0.0 || p_mask > 1.0) {
        throw ConfigError("branch_dropout: probabilities must lie in [0,1]");
    }
    if (p_text >= 1.0 && p_mask >= 1.0) {
        throw ConfigError("branch_dropout: every draw would be the excluded unconditional case");
    }
    bool drop_text = false, drop_mask = false;
    do {
        drop_text = rng.uniform() < p_text;
        drop_mask = rng.uniform() < p_mask;
    } while (drop_text && drop_mask);
    if (drop_text) return {BranchLabel::kMaskOnly, with_text_dropped(full, emb)};
    if (drop_mask) return {BranchLabel::kTextOnly, with_mask_dropped(full)};
    return {BranchLabel::kFull, full};
}

// Uniform mixture over sources, then uniform over records within a source.
struct DataMix {
    std::vector<const std::vector<SampleRecord>*> sources;

    void validate() const {
        if (sources.empty()) throw Error("training data mix has no sources");
        for (const auto* s : sources) {
            if (s == nullptr || s->empty()) throw Error("training data source is missing or empty");
        }
    }

    const SampleRecord& draw(Rng& rng) const {
        const auto* src = sources[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(sources.size()) - 1))];
        return (*src)[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(src->size()) - 1))];
    }
};

using BranchHistogram = std::map<std::string, int>;

namespace trainer_detail {

// Per-sample MSE against the velocity target; fills the loss gradient
// scaled for a mean over batch and elements.
template <typename S>
double mse_and_grad(const Tensor<S>& v, const Tensor<S>& target, int batch_size, Tensor<S>& dvel) {
    require_same_shape(v, target, "velocity loss");
    dvel = Tensor<S>(v.shape());
    const double inv_n = 1.0 / static_cast<double>(v.size());
    double loss = 0.0;
    const S gscale = static_cast<S>(2.0 * inv_n / batch_size);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = static_cast<double>(v[i]) - static_cast<double>(target[i]);
        loss += d * d;
        dvel[i] = gscale * static_cast<S>(d);
    }
    return loss * inv_n;
}

template <typename S>
Tensor<S> velocity_target(const Tensor<S>& noise, const Tensor<S>& x0) {
    Tensor<S> t(noise.shape());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = noise[i] - x0[i];
    return t;
}

inline void require_finite_loss(double loss, const char* where, int step) {
    if (!std::isfinite(loss)) {
        throw Error(std::string(where) + ": non-finite loss at step " + std::to_string(step) +
                    " (diverged or bad input)");
    }
}

}  // namespace trainer_detail

// One Stage-I update: per sample draw t from the expert's noise range, noise
// the ground-truth latent, pick a branch via conditional dropout, and take
// an MSE step on the predicted velocity.
template <typename S>
double stage1_step(DenoiserParams<S>& params, Adam<S>& opt, const std::vector<const SampleRecord*>& batch,
                   const TrainConfig& cfg, ExpertRole role, const TextEmbedder<S>& emb, Rng& rng, Workspace<S>& ws,
                   std::vector<S>& grads, BranchHistogram* hist = nullptr) {
    cfg.validate();
    if (batch.empty()) throw Error("stage1_step: empty batch");
    std::fill(grads.begin(), grads.end(), S(0));
    double loss_sum = 0.0;
    Tensor<S> dvel;
    for (const SampleRecord* rec : batch) {
        const double t = role == ExpertRole::kLocator ? rng.uniform(cfg.boundary, 1.0)
                                                      : rng.uniform(0.0, cfg.boundary);
        const Tensor<S> x0 = rec->gt_video.template cast<S>();
        const Tensor<S> noise = gaussian_tensor<S>(x0.shape(), rng);
        ConditionBundle<S> full = make_full_bundle(*rec, emb);
        full.x_t = add_noise(x0, t, noise);
        full.t = t;
        auto [label, bundle] = branch_dropout(full, rng, cfg.p_text_drop, cfg.p_mask_zero, emb);
        if (hist != nullptr) ++(*hist)[to_string(label)];
        const Tensor<S> v = forward_single(params, bundle, ws);
        loss_sum += trainer_detail::mse_and_grad(v, trainer_detail::velocity_target(noise, x0),
                                                 static_cast<int>(batch.size()), dvel);
        backward_single(params, dvel, ws, grads);
    }
    const double loss = loss_sum / static_cast<double>(batch.size());
    opt.step(params.values(), grads);
    return loss;
}

// One Stage-II update: deterministic three-branch inputs, loss on the full
// branch only, gradients restricted to the fusion layers unless the config
// unfreezes the base. Each sample is routed to the expert owning its drawn
// noise level.
template <typename S>
double stage2_step(ExpertPair<S>& pair, Adam<S>& opt_locator, Adam<S>& opt_preserver,
                   const std::vector<const SampleRecord*>& batch, const TrainConfig& cfg,
                   const TextEmbedder<S>& emb, Rng& rng, Workspace<S>& ws, std::vector<S>& grads_locator,
                   std::vector<S>& grads_preserver) {
    cfg.validate();
    if (batch.empty()) throw Error("stage2_step: empty batch");
    std::fill(grads_locator.begin(), grads_locator.end(), S(0));
    std::fill(grads_preserver.begin(), grads_preserver.end(), S(0));
    int locator_samples = 0, preserver_samples = 0;
    double loss_sum = 0.0;
    Tensor<S> dvel;
    for (const SampleRecord* rec : batch) {
        const double t = rng.uniform(0.0, 1.0);
        const Tensor<S> x0 = rec->gt_video.template cast<S>();
        const Tensor<S> noise = gaussian_tensor<S>(x0.shape(), rng);
        ConditionBundle<S> full = make_full_bundle(*rec, emb);
        full.x_t = add_noise(x0, t, noise);
        full.t = t;
        BundleTriple<S> triple = make_bundle_triple(full, emb);
        const bool to_locator = t >= pair.boundary;
        DenoiserParams<S>& expert = to_locator ? pair.locator : pair.preserver;
        (to_locator ? locator_samples : preserver_samples) += 1;
        const VelocityTriple<S> out = forward_three_branch(expert, triple.txt, triple.mask, triple.full, ws);
        loss_sum += trainer_detail::mse_and_grad(out.v_f, trainer_detail::velocity_target(noise, x0),
                                                 static_cast<int>(batch.size()), dvel);
        backward_three(expert, dvel, ws, to_locator ? grads_locator : grads_preserver, cfg.unfreeze_base);
    }
    if (locator_samples > 0) opt_locator.step(pair.locator.values(), grads_locator);
    if (preserver_samples > 0) opt_preserver.step(pair.preserver.values(), grads_preserver);
    return loss_sum / static_cast<double>(batch.size());
}

namespace trainer_detail {

inline nlohmann::json histogram_json(const BranchHistogram& h) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : h) j[k] = v;
    return j;
}

template <typename S>
DenoiserParams<S> train_stage1_expert(const ModelConfig& mcfg, const TrainConfig& cfg, const DataMix& data,
                                      const TextEmbedder<S>& emb, ExpertRole role,
                                      const std::filesystem::path& out_dir) {
    cfg.validate();
    data.validate();
    const char* role_name = to_string(role);
    const int steps = role == ExpertRole::kLocator ? cfg.locator_steps : cfg.preserver_steps;
    const std::uint64_t role_tag = role == ExpertRole::kLocator ? 0x4c4f43u : 0x505245u;

    DenoiserParams<S> params(mcfg);
    params.init(mix64(cfg.seed ^ role_tag));
    Adam<S> opt(params.size(), cfg.lr);
    Workspace<S> ws(mcfg);
    std::vector<S> grads(params.size(), S(0));
    Rng rng = stream_rng(cfg.seed, role_tag);

    std::filesystem::create_directories(out_dir);
    std::ofstream log_file(out_dir / (std::string(role_name) + "_train_log.jsonl"), std::ios::trunc);
    if (!log_file) throw IoError("cannot open training log in " + out_dir.string());

    const int snapshot_step =
        role == ExpertRole::kLocator ? std::max(1, static_cast<int>(steps * cfg.snapshot_fraction)) : 0;

    std::vector<const SampleRecord*> batch(static_cast<std::size_t>(cfg.batch_size));
    for (int step = 1; step <= steps; ++step) {
        for (auto& slot : batch) slot = &data.draw(rng);
        BranchHistogram hist;
        const double loss = stage1_step(params, opt, batch, cfg, role, emb, rng, ws, grads, &hist);
        require_finite_loss(loss, role_name, step);
        log_file << nlohmann::json{{"step", step},
                                   {"stage", 1},
                                   {"expert", role_name},
                                   {"branch_histogram", histogram_json(hist)},
                                   {"loss", loss}}
                        .dump()
                 << "\n";
        if (step == snapshot_step) {
            const int percent = static_cast<int>(std::lround(cfg.snapshot_fraction * 100.0));
            save_checkpoint(out_dir / (std::string(role_name) + "_snapshot" + std::to_string(percent)),
                            params,
                            {{"stage", 1}, {"expert", role_name}, {"steps", step}, {"snapshot", true}});
        }
        if (step % 100 == 0 || step == steps) {
            log(LogLevel::kInfo, "%s stage1 step %d/%d loss %.4f", role_name, step, steps, loss);
        }
    }
    save_checkpoint(out_dir / role_name, params, {{"stage", 1}, {"expert", role_name}, {"steps", steps}});
    return params;
}

}  // namespace trainer_detail

// Stage-I experts: the Locator sees the multi-source mix over its high-noise
// range on a short budget; the Preserver sees aligned-only data on a longer
// one.
template <typename S>
DenoiserParams<S> train_locator(const ModelConfig& mcfg, const TrainConfig& cfg, const DataMix& data,
                                const TextEmbedder<S>& emb, const std::filesystem::path& out_dir) {
    return trainer_detail::train_stage1_expert(mcfg, cfg, data, emb, ExpertRole::kLocator, out_dir);
}

template <typename S>
DenoiserParams<S> train_preserver(const ModelConfig& mcfg, const TrainConfig& cfg, const DataMix& data,
                                  const TextEmbedder<S>& emb, const std::filesystem::path& out_dir) {
    return trainer_detail::train_stage1_expert(mcfg, cfg, data, emb, ExpertRole::kPreserver, out_dir);
}

// Stage II: three-branch fusion training of both experts in place, then
// fused checkpoints.
template <typename S>
void train_stage2(ExpertPair<S>& pair, const TrainConfig& cfg, const DataMix& data, const TextEmbedder<S>& emb,
                  const std::filesystem::path& out_dir) {
    cfg.validate();
    data.validate();
    Adam<S> opt_loc(pair.locator.size(), cfg.lr);
    Adam<S> opt_pre(pair.preserver.size(), cfg.lr);
    if (!cfg.unfreeze_base) {
        opt_loc.set_freeze_mask(pair.locator.fusion_mask());
        opt_pre.set_freeze_mask(pair.preserver.fusion_mask());
    }
    Workspace<S> ws(pair.locator.config());
    std::vector<S> grads_loc(pair.locator.size(), S(0));
    std::vector<S> grads_pre(pair.preserver.size(), S(0));
    Rng rng = stream_rng(cfg.seed, 0x535447u);

    std::filesystem::create_directories(out_dir);
    std::ofstream log_file(out_dir / "stage2_train_log.jsonl", std::ios::trunc);
    if (!log_file) throw IoError("cannot open training log in " + out_dir.string());

    std::vector<const SampleRecord*> batch(static_cast<std::size_t>(cfg.batch_size));
    for (int step = 1; step <= cfg.stage2_steps; ++step) {
        for (auto& slot : batch) slot = &data.draw(rng);
        const double loss =
            stage2_step(pair, opt_loc, opt_pre, batch, cfg, emb, rng, ws, grads_loc, grads_pre);
        trainer_detail::require_finite_loss(loss, "stage2", step);
        // all three branches run every step; the histogram reflects that
        log_file << nlohmann::json{{"step", step},
                                   {"stage", 2},
                                   {"expert", "pair"},
                                   {"branch_histogram",
                                    {{"full", static_cast<int>(batch.size())},
                                     {"text_only", static_cast<int>(batch.size())},
                                     {"mask_only", static_cast<int>(batch.size())}}},
                                   {"loss", loss}}
                        .dump()
                 << "\n";
        if (step % 50 == 0 || step == cfg.stage2_steps) {
            log(LogLevel::kInfo, "stage2 step %d/%d loss %.4f", step, cfg.stage2_steps, loss);
        }
    }
    save_checkpoint(out_dir / "locator", pair.locator,
                    {{"stage", 2}, {"expert", "locator"}, {"steps", cfg.stage2_steps}});
    save_checkpoint(out_dir / "preserver", pair.preserver,
                    {{"stage", 2}, {"expert", "preserver"}, {"steps", cfg.stage2_steps}});
}

}  // namespace generaser
