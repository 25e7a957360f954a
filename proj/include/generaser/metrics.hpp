#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "generaser/sampler.hpp"

namespace generaser {

// Identical inputs report this cap instead of +inf (MSE floored at 1e-10).
inline constexpr double kPsnrCap = 100.0;

inline double psnr(const VideoClip& a, const VideoClip& b) {
    require_same_shape(a, b, "psnr");
    const double mse = mean_squared_diff(a, b);
    return 10.0 * std::log10(1.0 / std::max(mse, 1e-10));
}

// PSNR restricted to pixels where region > 0 (all channels of those pixels).
// `region` is [T,H,W] against videos [T,H,W,C]. Empty region -> nullopt.
inline std::optional<double> region_psnr(const VideoClip& a, const VideoClip& b, const Tensor<float>& region) {
    require_same_shape(a, b, "region_psnr");
    if (region.rank() != 3 || region.shape()[0] != a.shape()[0] || region.shape()[1] != a.shape()[1] ||
        region.shape()[2] != a.shape()[2]) {
        throw ShapeError("region_psnr: region " + region.shape_str() + " does not match video " + a.shape_str());
    }
    const int c_dim = a.shape()[3];
    double se = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < region.size(); ++p) {
        if (region[p] <= 0.0f) continue;
        for (int c = 0; c < c_dim; ++c) {
            const double d = static_cast<double>(a[p * c_dim + c]) - static_cast<double>(b[p * c_dim + c]);
            se += d * d;
        }
        n += static_cast<std::size_t>(c_dim);
    }
    if (n == 0) return std::nullopt;
    return 10.0 * std::log10(1.0 / std::max(se / static_cast<double>(n), 1e-10));
}

// Windowed SSIM with a 7x7 uniform window on unit dynamic range, computed
// per frame and channel over fully-valid window positions, then averaged.
inline double ssim(const VideoClip& a, const VideoClip& b) {
    require_same_shape(a, b, "ssim");
    constexpr int kWin = 7;
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    const int t_dim = a.shape()[0], h_dim = a.shape()[1], w_dim = a.shape()[2], c_dim = a.shape()[3];
    if (h_dim < kWin || w_dim < kWin) {
        throw ShapeError("ssim: frame " + std::to_string(h_dim) + "x" + std::to_string(w_dim) +
                         " smaller than the 7x7 window");
    }
    const double inv_n = 1.0 / (kWin * kWin);
    double total = 0.0;
    std::size_t windows = 0;
    for (int t = 0; t < t_dim; ++t) {
        for (int c = 0; c < c_dim; ++c) {
            for (int h0 = 0; h0 + kWin <= h_dim; ++h0) {
                for (int w0 = 0; w0 + kWin <= w_dim; ++w0) {
                    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                    for (int dh = 0; dh < kWin; ++dh) {
                        for (int dw = 0; dw < kWin; ++dw) {
                            const double va = a.at(t, h0 + dh, w0 + dw, c);
                            const double vb = b.at(t, h0 + dh, w0 + dw, c);
                            sa += va;
                            sb += vb;
                            saa += va * va;
                            sbb += vb * vb;
                            sab += va * vb;
                        }
                    }
                    const double mu_a = sa * inv_n, mu_b = sb * inv_n;
                    const double var_a = saa * inv_n - mu_a * mu_a;
                    const double var_b = sbb * inv_n - mu_b * mu_b;
                    const double cov = sab * inv_n - mu_a * mu_b;
                    total += ((2 * mu_a * mu_b + kC1) * (2 * cov + kC2)) /
                             ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
                    ++windows;
                }
            }
        }
    }
    return total / static_cast<double>(windows);
}

struct CropMetrics {
    double mae_ref = 0.0;      // MAE(out, ref) on the crop
    double psnr_ref_bg = 0.0;  // PSNR(out, ref) on the crop
    double psnr_gt_bg = 0.0;   // PSNR(out, gt) on the crop
};

namespace metrics_detail {

// Top-left crop covering 1/denom of the frame area with the frame's aspect.
inline std::pair<int, int> crop_dims(int h, int w, int denom) {
    if (denom < 1) throw ConfigError("crop ratio denominator must be positive");
    const double s = std::sqrt(static_cast<double>(denom));
    const int ch = static_cast<int>(std::lround(h / s));
    const int cw = static_cast<int>(std::lround(w / s));
    if (ch < 1 || cw < 1) {
        throw ConfigError("crop ratio 1/" + std::to_string(denom) + " is smaller than one pixel for " +
                          std::to_string(h) + "x" + std::to_string(w) + " frames");
    }
    return {std::min(ch, h), std::min(cw, w)};
}

inline std::pair<double, double> crop_mae_mse(const VideoClip& a, const VideoClip& b, int ch, int cw) {
    const int t_dim = a.shape()[0], c_dim = a.shape()[3];
    double ae = 0.0, se = 0.0;
    for (int t = 0; t < t_dim; ++t) {
        for (int h = 0; h < ch; ++h) {
            for (int w = 0; w < cw; ++w) {
                for (int c = 0; c < c_dim; ++c) {
                    const double d = static_cast<double>(a.at(t, h, w, c)) - static_cast<double>(b.at(t, h, w, c));
                    ae += std::fabs(d);
                    se += d * d;
                }
            }
        }
    }
    const double n = static_cast<double>(t_dim) * ch * cw * c_dim;
    return {ae / n, se / n};
}

}  // namespace metrics_detail

// Background-preservation diagnostics on the top-left 1/denom-area crop
// (denom 16 -> H/4 x W/4). MAE is in [0,1] pixel units; multiply by 255 to
// compare against byte-range conventions.
inline CropMetrics crop_background_metrics(const VideoClip& ref, const VideoClip& out, const VideoClip& gt,
                                           int denom) {
    require_same_shape(ref, out, "crop_background_metrics");
    require_same_shape(ref, gt, "crop_background_metrics");
    const auto [ch, cw] = metrics_detail::crop_dims(ref.shape()[1], ref.shape()[2], denom);
    CropMetrics m;
    const auto [mae_r, mse_r] = metrics_detail::crop_mae_mse(out, ref, ch, cw);
    const auto [mae_g, mse_g] = metrics_detail::crop_mae_mse(out, gt, ch, cw);
    (void)mae_g;
    m.mae_ref = mae_r;
    m.psnr_ref_bg = 10.0 * std::log10(1.0 / std::max(mse_r, 1e-10));
    m.psnr_gt_bg = 10.0 * std::log10(1.0 / std::max(mse_g, 1e-10));
    return m;
}

// MAE over the effect support outside the object mask, supp(effect)\supp(mask)
// — how much of the physical effect survives in `out`. Empty region (e.g. an
// effect-free sample) -> nullopt.
inline std::optional<double> effect_region_error(const VideoClip& out, const VideoClip& gt,
                                                 const Tensor<float>& effect_map, const MaskClip& mask) {
    require_same_shape(out, gt, "effect_region_error");
    require_same_shape(effect_map, mask, "effect_region_error");
    if (effect_map.rank() != 3 || effect_map.shape()[0] != out.shape()[0] ||
        effect_map.shape()[1] != out.shape()[1] || effect_map.shape()[2] != out.shape()[2]) {
        throw ShapeError("effect_region_error: map " + effect_map.shape_str() + " does not match video " +
                         out.shape_str());
    }
    const int c_dim = out.shape()[3];
    double ae = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < effect_map.size(); ++p) {
        if (effect_map[p] <= 0.0f || mask[p] > 0.5f) continue;
        for (int c = 0; c < c_dim; ++c) {
            ae += std::fabs(static_cast<double>(out[p * c_dim + c]) - static_cast<double>(gt[p * c_dim + c]));
        }
        n += static_cast<std::size_t>(c_dim);
    }
    if (n == 0) return std::nullopt;
    return ae / static_cast<double>(n);
}

// Mask-or-effect support as a [T,H,W] indicator, the removal-region weight
// used for region-restricted PSNR.
inline Tensor<float> removal_region(const MaskClip& mask, const Tensor<float>& effect_map) {
    require_same_shape(mask, effect_map, "removal_region");
    Tensor<float> r(mask.shape());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = (mask[i] > 0.5f || effect_map[i] > 0.0f) ? 1.0f : 0.0f;
    return r;
}

// ---------------------------------------------------------------------------
// Guidance-scale sweep
// ---------------------------------------------------------------------------

inline const std::vector<double>& default_sweep_grid() {
    static const std::vector<double> g = {1.0, 1.5, 2.0, 3.0};
    return g;
}

struct SweepCell {
    double w_txt = 0.0;
    double w_m = 0.0;
    double psnr = 0.0;
};

struct SweepTable {
    std::vector<SweepCell> cells;
    double grid_mean = 0.0;
    double grid_max = 0.0;
    SweepCell best;

    std::string to_csv() const {
        std::ostringstream os;
        os << "w_txt,w_m,psnr\n";
        char buf[64];
        for (const SweepCell& c : cells) {
            std::snprintf(buf, sizeof(buf), "%g,%g,%.6f\n", c.w_txt, c.w_m, c.psnr);
            os << buf;
        }
        return os.str();
    }

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (const SweepCell& c : cells) rows.push_back({{"w_txt", c.w_txt}, {"w_m", c.w_m}, {"psnr", c.psnr}});
        return {{"cells", rows},
                {"grid_mean", grid_mean},
                {"grid_max", grid_max},
                {"best", {{"w_txt", best.w_txt}, {"w_m", best.w_m}, {"psnr", best.psnr}}}};
    }
};

// Runs the guided sampler over the (w_txt, w_m) grid and reports mean test
// PSNR per cell plus the grid mean ("average" guidance) and the best cell.
// Every cell reuses the same per-sample initial noise so cells differ only
// in the scales.
template <typename S>
SweepTable sweep_guidance(const ExpertPair<S>& pair, const std::vector<const SampleRecord*>& eval_set,
                          const TextEmbedder<S>& emb, const Schedule& sched, Workspace<S>& ws,
                          std::uint64_t seed, const std::vector<double>& grid_txt = default_sweep_grid(),
                          const std::vector<double>& grid_m = default_sweep_grid(),
                          NormScope scope = NormScope::kPerSample) {
    if (eval_set.empty()) throw Error("sweep_guidance: empty eval set");
    std::vector<Tensor<S>> inits;
    inits.reserve(eval_set.size());
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
        Rng r = stream_rng(seed, 0x535750u, i);
        inits.push_back(gaussian_tensor<S>(eval_set[i]->gt_video.shape(), r));
    }
    SweepTable table;
    for (double wt : grid_txt) {
        for (double wm : grid_m) {
            GuidanceScales gs;
            gs.w_txt = wt;
            gs.w_m = wm;
            double psnr_sum = 0.0;
            for (std::size_t i = 0; i < eval_set.size(); ++i) {
                const SampleRecord& rec = *eval_set[i];
                ConditionBundle<S> full = make_full_bundle(rec, emb);
                full.x_t = inits[i];
                full.t = sched.t.front();
                BundleTriple<S> tr = make_bundle_triple(full, emb);
                Tensor<S> x = sample_mccfg(pair, tr, sched, gs, ws, nullptr, scope);
                for (std::size_t k = 0; k < x.size(); ++k) x[k] = std::clamp(x[k], S(0), S(1));
                psnr_sum += psnr(x.template cast<float>(), rec.gt_video);
            }
            table.cells.push_back({wt, wm, psnr_sum / static_cast<double>(eval_set.size())});
        }
    }
    double sum = 0.0;
    table.best = table.cells.front();
    for (const SweepCell& c : table.cells) {
        sum += c.psnr;
        if (c.psnr > table.best.psnr) table.best = c;
    }
    table.grid_mean = sum / static_cast<double>(table.cells.size());
    table.grid_max = table.best.psnr;
    return table;
}

}  // namespace generaser
