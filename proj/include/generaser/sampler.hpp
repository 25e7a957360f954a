#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "generaser/denoiser.hpp"
#include "generaser/guidance.hpp"
#include "generaser/rng.hpp"
#include "generaser/tensor.hpp"

namespace generaser {

// Denoising time grid t_0 = 1 > t_1 > … > t_N = 0.
struct Schedule {
    std::vector<double> t;

    static Schedule uniform(int steps) {
        if (steps < 1) throw ConfigError("schedule: need at least one step");
        Schedule s;
        s.t.resize(static_cast<std::size_t>(steps) + 1);
        for (int k = 0; k <= steps; ++k) s.t[static_cast<std::size_t>(k)] = 1.0 - static_cast<double>(k) / steps;
        s.t.front() = 1.0;
        s.t.back() = 0.0;
        s.validate();
        return s;
    }

    int steps() const { return static_cast<int>(t.size()) - 1; }

    void validate() const {
        if (t.size() < 2 || t.front() != 1.0 || t.back() != 0.0) {
            throw ConfigError("schedule: grid must run from 1 to 0");
        }
        for (std::size_t i = 1; i < t.size(); ++i) {
            if (!(t[i] < t[i - 1])) throw ConfigError("schedule: grid must be strictly decreasing");
        }
    }
};

// Rectified-flow interpolation; the matching training target is noise − x0.
template <typename S>
Tensor<S> add_noise(const Tensor<S>& x0, double t, const Tensor<S>& noise) {
    if (t < 0.0 || t > 1.0) throw Error("add_noise: t must lie in [0,1]");
    require_same_shape(x0, noise, "add_noise");
    Tensor<S> out(x0.shape());
    const S a = static_cast<S>(1.0 - t);
    const S b = static_cast<S>(t);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * noise[i];
    return out;
}

template <typename S>
Tensor<S> gaussian_tensor(const std::vector<int>& shape, Rng& rng) {
    Tensor<S> out(shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<S>(rng.normal());
    return out;
}

enum class ExpertRole { kLocator, kPreserver };

inline const char* to_string(ExpertRole r) { return r == ExpertRole::kLocator ? "locator" : "preserver"; }

// Noise-level experts sharing one architecture, split at the boundary.
template <typename S>
struct ExpertPair {
    DenoiserParams<S> locator;
    DenoiserParams<S> preserver;
    double boundary = 0.875;

    ExpertPair(DenoiserParams<S> loc, DenoiserParams<S> pre, double t_b = 0.875)
        : locator(std::move(loc)), preserver(std::move(pre)), boundary(t_b) {
        if (!(boundary > 0.0 && boundary < 1.0)) throw ConfigError("expert boundary must lie in (0,1)");
        if (locator.config() != preserver.config()) {
            throw ConfigError("locator and preserver must share architecture hyperparameters");
        }
    }
};

// High-noise steps (t at or above the boundary) go to the Locator.
template <typename S>
const DenoiserParams<S>& route_expert(const ExpertPair<S>& pair, double t) {
    return t >= pair.boundary ? pair.locator : pair.preserver;
}

// Which expert served each step, for routing assertions and reports.
struct RouteRecord {
    std::vector<double> t;
    std::vector<ExpertRole> expert;

    int locator_calls() const {
        int n = 0;
        for (ExpertRole r : expert) n += (r == ExpertRole::kLocator) ? 1 : 0;
        return n;
    }
};

// Explicit Euler integration of dx/dt = v(x,t) down the schedule.
// velocity_fn(x, t, step_index) -> velocity tensor.
template <typename S, typename VelocityFn>
Tensor<S> euler_integrate(Tensor<S> x, const Schedule& sched, VelocityFn&& velocity_fn) {
    sched.validate();
    for (int k = 0; k < sched.steps(); ++k) {
        const double tk = sched.t[static_cast<std::size_t>(k)];
        const Tensor<S> v = velocity_fn(x, tk, k);
        require_same_shape(x, v, "euler_integrate");
        const S dt = static_cast<S>(sched.t[static_cast<std::size_t>(k) + 1] - tk);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += dt * v[i];
    }
    return x;
}

template <typename S>
struct BundleTriple {
    ConditionBundle<S> txt;
    ConditionBundle<S> mask;
    ConditionBundle<S> full;
};

// Builds the three branch variants around one full bundle; x_t/t stay as in
// the input bundle (the sampler overwrites them each step).
template <typename S>
BundleTriple<S> make_bundle_triple(const ConditionBundle<S>& full, const TextEmbedder<S>& emb) {
    BundleTriple<S> tr;
    tr.txt = with_mask_dropped(full);
    tr.mask = with_text_dropped(full, emb);
    tr.full = full;
    return tr;
}

namespace sampler_detail {

template <typename S>
void set_state(ConditionBundle<S>& b, const Tensor<S>& x, double t) {
    b.x_t = x;
    b.t = t;
}

template <typename S>
void record_route(RouteRecord* rec, const ExpertPair<S>& pair, double t) {
    if (rec == nullptr) return;
    rec->t.push_back(t);
    rec->expert.push_back(t >= pair.boundary ? ExpertRole::kLocator : ExpertRole::kPreserver);
}

}  // namespace sampler_detail

// Plain conditional sampling on a single bundle (no guidance); also the
// oracle that identity-scale MC-CFG must match.
template <typename S>
Tensor<S> sample_conditional(const ExpertPair<S>& pair, ConditionBundle<S> bundle, const Schedule& sched,
                             Workspace<S>& ws, RouteRecord* route = nullptr) {
    return euler_integrate(std::move(bundle.x_t), sched, [&](const Tensor<S>& x, double t, int) {
        sampler_detail::record_route(route, pair, t);
        sampler_detail::set_state(bundle, x, t);
        return forward_single(route_expert(pair, t), bundle, ws);
    });
}

// Stage-I inference: route the expert, run the three conditional branches
// separately, and combine them with MC-CFG before each Euler step.
template <typename S>
Tensor<S> sample_mccfg(const ExpertPair<S>& pair, BundleTriple<S> bundles, const Schedule& sched,
                       const GuidanceScales& scales, Workspace<S>& ws, RouteRecord* route = nullptr,
                       NormScope scope = NormScope::kPerSample) {
    Tensor<S> x0 = std::move(bundles.full.x_t);
    return euler_integrate(std::move(x0), sched, [&](const Tensor<S>& x, double t, int) {
        sampler_detail::record_route(route, pair, t);
        const DenoiserParams<S>& expert = route_expert(pair, t);
        sampler_detail::set_state(bundles.txt, x, t);
        sampler_detail::set_state(bundles.mask, x, t);
        sampler_detail::set_state(bundles.full, x, t);
        const Tensor<S> v_txt = forward_single(expert, bundles.txt, ws, BranchKind::kTextOnly);
        const Tensor<S> v_m = forward_single(expert, bundles.mask, ws, BranchKind::kMaskOnly);
        const Tensor<S> v_f = forward_single(expert, bundles.full, ws, BranchKind::kFull);
        return mc_cfg_combine(v_txt, v_m, v_f, scales, scope);
    });
}

// Stage-II inference: fused three-branch forward, keep the full branch, no
// guidance scales anywhere.
template <typename S>
Tensor<S> sample_ldcfg(const ExpertPair<S>& pair, BundleTriple<S> bundles, const Schedule& sched, Workspace<S>& ws,
                       RouteRecord* route = nullptr) {
    Tensor<S> x0 = std::move(bundles.full.x_t);
    return euler_integrate(std::move(x0), sched, [&](const Tensor<S>& x, double t, int) {
        sampler_detail::record_route(route, pair, t);
        const DenoiserParams<S>& expert = route_expert(pair, t);
        sampler_detail::set_state(bundles.txt, x, t);
        sampler_detail::set_state(bundles.mask, x, t);
        sampler_detail::set_state(bundles.full, x, t);
        return extract_full_branch(forward_three_branch(expert, bundles.txt, bundles.mask, bundles.full, ws));
    });
}

}  // namespace generaser
