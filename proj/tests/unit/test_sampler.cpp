#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "generaser/sampler.hpp"

using namespace generaser;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.frames = 2;
    c.height = 4;
    c.width = 4;
    c.patch_h = 2;
    c.patch_w = 2;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_blocks = 1;
    c.d_txt = 4;
    c.l_max = 4;
    c.mlp_ratio = 2;
    c.d_time = 4;
    return c;
}

template <typename S>
ConditionBundle<S> random_bundle(Rng& rng, const ModelConfig& c) {
    ConditionBundle<S> b;
    b.x_t = gaussian_tensor<S>({c.frames, c.height, c.width, c.video_channels}, rng);
    b.t = 1.0;
    b.x_ref = gaussian_tensor<S>({c.frames, c.height, c.width, c.video_channels}, rng);
    b.m = gaussian_tensor<S>({c.frames, c.height, c.width}, rng);
    b.x_m = gaussian_tensor<S>({c.frames, c.height, c.width, c.video_channels}, rng);
    b.c_txt = gaussian_tensor<S>({c.l_max, c.d_txt}, rng);
    return b;
}

}  // namespace

TEST_CASE("uniform schedule hits exact endpoints and is strictly decreasing", "[sampler]") {
    const Schedule s = Schedule::uniform(40);
    REQUIRE(s.steps() == 40);
    REQUIRE(s.t.front() == 1.0);
    REQUIRE(s.t.back() == 0.0);
    for (std::size_t i = 1; i < s.t.size(); ++i) REQUIRE(s.t[i] < s.t[i - 1]);
    // 1 - 5/40 = 0.875 is binary-exact, which the expert boundary relies on
    REQUIRE(s.t[5] == 0.875);
    REQUIRE(s.t[20] == 0.5);

    REQUIRE_THROWS_AS(Schedule::uniform(0), ConfigError);
    Schedule bad;
    bad.t = {1.0, 0.5, 0.5, 0.0};
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad.t = {0.9, 0.0};
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("add_noise interpolates linearly between data and noise", "[sampler]") {
    Rng rng(7);
    const Tensor<double> x0 = gaussian_tensor<double>({2, 3}, rng);
    const Tensor<double> n = gaussian_tensor<double>({2, 3}, rng);
    const Tensor<double> at0 = add_noise(x0, 0.0, n);
    const Tensor<double> at1 = add_noise(x0, 1.0, n);
    REQUIRE(bit_identical(at0, x0));
    REQUIRE(bit_identical(at1, n));
    const Tensor<double> mid = add_noise(x0, 0.25, n);
    for (std::size_t i = 0; i < mid.size(); ++i) {
        REQUIRE(mid[i] == Catch::Approx(0.75 * x0[i] + 0.25 * n[i]).margin(1e-15));
    }
    REQUIRE_THROWS_AS(add_noise(x0, -0.1, n), Error);
    REQUIRE_THROWS_AS(add_noise(x0, 1.1, n), Error);
    Tensor<double> wrong({5});
    REQUIRE_THROWS_AS(add_noise(x0, 0.5, wrong), ShapeError);
}

TEST_CASE("euler integration converges at first order", "[sampler]") {
    // dx/dt = λx integrated from t=1 to 0 has exact solution x(0) = x(1)·e^{-λ}
    const double lam = 0.8, x1 = 2.0;
    auto run = [&](int steps) {
        Tensor<double> x({1});
        x[0] = x1;
        const Tensor<double> out = euler_integrate(
            x, Schedule::uniform(steps), [&](const Tensor<double>& xc, double, int) {
                Tensor<double> v({1});
                v[0] = lam * xc[0];
                return v;
            });
        return out[0];
    };
    const double exact = x1 * std::exp(-lam);
    const double e40 = std::abs(run(40) - exact);
    const double e80 = std::abs(run(80) - exact);
    const double e160 = std::abs(run(160) - exact);
    REQUIRE(e40 > e80);
    REQUIRE(e80 > e160);
    // halving the step roughly halves the error for a first-order method
    REQUIRE(e40 / e80 == Catch::Approx(2.0).margin(0.25));
    REQUIRE(e80 / e160 == Catch::Approx(2.0).margin(0.25));
}

TEST_CASE("expert routing splits the schedule at the boundary inclusively", "[sampler]") {
    const ModelConfig cfg = tiny_config();
    DenoiserParams<float> loc(cfg), pre(cfg);
    loc.init(1);
    pre.init(2);
    const ExpertPair<float> pair(loc, pre, 0.875);

    REQUIRE(&route_expert(pair, 1.0) == &pair.locator);
    REQUIRE(&route_expert(pair, 0.875) == &pair.locator);  // boundary goes to the locator
    REQUIRE(&route_expert(pair, 0.874999) == &pair.preserver);
    REQUIRE(&route_expert(pair, 0.0) == &pair.preserver);

    // on the 40-step grid exactly steps 0..5 satisfy t >= 0.875
    const Schedule sched = Schedule::uniform(40);
    Workspace<float> ws(cfg);
    TextEmbedder<float> emb(cfg.l_max, cfg.d_txt);
    Rng rng(3);
    RouteRecord route;
    sample_mccfg(pair, make_bundle_triple(random_bundle<float>(rng, cfg), emb), sched, GuidanceScales{}, ws,
                 &route);
    REQUIRE(route.t.size() == 40);
    REQUIRE(route.locator_calls() == 6);
    for (int k = 0; k < 40; ++k) {
        const ExpertRole want = sched.t[static_cast<std::size_t>(k)] >= 0.875 ? ExpertRole::kLocator
                                                                              : ExpertRole::kPreserver;
        REQUIRE(route.expert[static_cast<std::size_t>(k)] == want);
    }
    // the locator prefix is contiguous: once the preserver takes over it keeps the tail
    bool seen_preserver = false;
    for (ExpertRole r : route.expert) {
        if (r == ExpertRole::kPreserver) seen_preserver = true;
        if (seen_preserver) REQUIRE(r == ExpertRole::kPreserver);
    }
}

TEST_CASE("expert pair construction validates boundary and architecture", "[sampler]") {
    const ModelConfig cfg = tiny_config();
    DenoiserParams<float> a(cfg), b(cfg);
    REQUIRE_THROWS_AS(ExpertPair<float>(a, b, 0.0), ConfigError);
    REQUIRE_THROWS_AS(ExpertPair<float>(a, b, 1.0), ConfigError);
    ModelConfig other = cfg;
    other.d_model = 16;
    other.n_heads = 2;
    DenoiserParams<float> c(other);
    REQUIRE_THROWS_AS(ExpertPair<float>(a, c, 0.5), ConfigError);
}

TEST_CASE("samplers are deterministic given the same start noise", "[sampler]") {
    const ModelConfig cfg = tiny_config();
    DenoiserParams<float> loc(cfg), pre(cfg);
    loc.init(10);
    pre.init(20);
    Rng hrng(5);
    // give heads and fusion life so the dynamics are nontrivial
    for (auto* p : {&loc, &pre}) {
        const ParamInfo& w = p->info("head.weight");
        for (std::size_t i = 0; i < w.size; ++i) p->values()[w.offset + i] = static_cast<float>(hrng.normal() * 0.05);
        const auto fmask = p->fusion_mask();
        for (std::size_t i = 0; i < p->size(); ++i) {
            if (fmask[i]) p->values()[i] = static_cast<float>(hrng.normal() * 0.02);
        }
    }
    const ExpertPair<float> pair(loc, pre, 0.875);
    const Schedule sched = Schedule::uniform(8);
    Workspace<float> ws(cfg);
    TextEmbedder<float> emb(cfg.l_max, cfg.d_txt);
    Rng rng(99);
    const auto full = random_bundle<float>(rng, cfg);

    const Tensor<float> a = sample_mccfg(pair, make_bundle_triple(full, emb), sched, GuidanceScales{2.0, 1.5}, ws);
    const Tensor<float> b2 = sample_mccfg(pair, make_bundle_triple(full, emb), sched, GuidanceScales{2.0, 1.5}, ws);
    REQUIRE(bit_identical(a, b2));
    REQUIRE(all_finite(a));

    const Tensor<float> l1 = sample_ldcfg(pair, make_bundle_triple(full, emb), sched, ws);
    const Tensor<float> l2 = sample_ldcfg(pair, make_bundle_triple(full, emb), sched, ws);
    REQUIRE(bit_identical(l1, l2));
    REQUIRE(all_finite(l1));

    const Tensor<float> c1 = sample_conditional(pair, full, sched, ws);
    const Tensor<float> c2 = sample_conditional(pair, full, sched, ws);
    REQUIRE(bit_identical(c1, c2));
}

TEST_CASE("identity-scale guidance reproduces plain conditional sampling", "[sampler]") {
    const ModelConfig cfg = tiny_config();
    DenoiserParams<float> loc(cfg), pre(cfg);
    loc.init(30);
    pre.init(40);
    Rng hrng(6);
    for (auto* p : {&loc, &pre}) {
        const ParamInfo& w = p->info("head.weight");
        for (std::size_t i = 0; i < w.size; ++i) p->values()[w.offset + i] = static_cast<float>(hrng.normal() * 0.05);
    }
    const ExpertPair<float> pair(loc, pre, 0.875);
    const Schedule sched = Schedule::uniform(10);
    Workspace<float> ws(cfg);
    TextEmbedder<float> emb(cfg.l_max, cfg.d_txt);
    Rng rng(7);
    const auto full = random_bundle<float>(rng, cfg);

    const Tensor<float> guided =
        sample_mccfg(pair, make_bundle_triple(full, emb), sched, GuidanceScales{1.0, 1.0}, ws);
    const Tensor<float> plain = sample_conditional(pair, full, sched, ws);
    REQUIRE(max_abs_diff(guided, plain) < 1e-5);
}

TEST_CASE("bundle triple keeps one live conditioning channel per branch", "[sampler]") {
    const ModelConfig cfg = tiny_config();
    TextEmbedder<float> emb(cfg.l_max, cfg.d_txt);
    Rng rng(8);
    const auto full = random_bundle<float>(rng, cfg);
    const BundleTriple<float> tr = make_bundle_triple(full, emb);

    // text branch: mask blanked, text kept
    for (std::size_t i = 0; i < tr.txt.m.size(); ++i) REQUIRE(tr.txt.m[i] == 0.0f);
    REQUIRE(bit_identical(tr.txt.c_txt, full.c_txt));
    // mask branch: text blanked, mask kept
    REQUIRE(bit_identical(tr.mask.c_txt, emb.embed_empty()));
    REQUIRE(bit_identical(tr.mask.m, full.m));
    // full branch untouched
    REQUIRE(bit_identical(tr.full.x_ref, full.x_ref));
    REQUIRE(bit_identical(tr.full.c_txt, full.c_txt));
    // the reference video stays live everywhere
    REQUIRE(bit_identical(tr.txt.x_ref, full.x_ref));
    REQUIRE(bit_identical(tr.mask.x_ref, full.x_ref));
}
