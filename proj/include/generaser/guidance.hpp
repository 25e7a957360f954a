#pragma once

#include <algorithm>
#include <cmath>

#include "generaser/denoiser.hpp"
#include "generaser/tensor.hpp"

namespace generaser {

struct GuidanceScales {
    double w_m = 1.0;    // mask guidance scale
    double w_txt = 1.0;  // text guidance scale
    double delta = 1e-8;
};

// Norm-rescale reduction axes: over the whole grid, or per frame slice.
enum class NormScope { kPerSample, kPerFrame };

namespace guidance_detail {

template <typename S>
void combine_span(S* out, const S* e_txt, const S* e_m, const S* e_f, std::size_t n,
                  const GuidanceScales& sc) {
    // ε̃ = ε_m + w_m (ε_f − ε_m), then rescale by α = clip(‖ε_f‖/(‖ε̃‖+δ), 0, 1)
    const S wm = static_cast<S>(sc.w_m);
    double norm_f = 0.0, norm_e = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const S e = e_m[i] + wm * (e_f[i] - e_m[i]);
        out[i] = e;
        norm_f += static_cast<double>(e_f[i]) * static_cast<double>(e_f[i]);
        norm_e += static_cast<double>(e) * static_cast<double>(e);
    }
    norm_f = std::sqrt(norm_f);
    norm_e = std::sqrt(norm_e);
    const double alpha = std::min(std::max(norm_f / (norm_e + sc.delta), 0.0), 1.0);
    const S a = static_cast<S>(alpha);
    const S wt = static_cast<S>(sc.w_txt);
    for (std::size_t i = 0; i < n; ++i) out[i] = e_txt[i] + wt * (a * out[i] - e_txt[i]);
}

}  // namespace guidance_detail

// Multi-conditional CFG: extrapolate mask→full, rescale to the full
// prediction's norm (clipped at 1), then apply text guidance from the
// text-only prediction.
template <typename S>
Tensor<S> mc_cfg_combine(const Tensor<S>& eps_txt, const Tensor<S>& eps_m, const Tensor<S>& eps_f,
                         const GuidanceScales& scales, NormScope scope = NormScope::kPerSample) {
    require_same_shape(eps_txt, eps_m, "mc_cfg_combine");
    require_same_shape(eps_txt, eps_f, "mc_cfg_combine");
    if (scales.delta <= 0.0) throw ConfigError("mc_cfg_combine: delta must be positive");
    if (!all_finite(eps_txt) || !all_finite(eps_m) || !all_finite(eps_f)) {
        throw Error("mc_cfg_combine: non-finite prediction");
    }
    Tensor<S> out(eps_txt.shape());
    if (scope == NormScope::kPerSample || eps_txt.rank() < 2) {
        guidance_detail::combine_span(out.data(), eps_txt.data(), eps_m.data(), eps_f.data(), out.size(), scales);
        return out;
    }
    const int frames = eps_txt.dim(0);
    const std::size_t stride = out.size() / static_cast<std::size_t>(frames);
    for (int f = 0; f < frames; ++f) {
        const std::size_t off = static_cast<std::size_t>(f) * stride;
        guidance_detail::combine_span(out.data() + off, eps_txt.data() + off, eps_m.data() + off,
                                      eps_f.data() + off, stride, scales);
    }
    return out;
}

// LD-CFG inference keeps only the joint-conditioning field.
template <typename S>
Tensor<S> extract_full_branch(const VelocityTriple<S>& triple) {
    return triple.v_f;
}

}  // namespace generaser
