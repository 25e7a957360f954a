#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "generaser/rng.hpp"
#include "generaser/tensor.hpp"
#include "generaser/text.hpp"
#include "generaser/world_types.hpp"

namespace generaser {

// One paired training/eval record. The effect map is evaluation metadata
// only; it is never fed to the model.
struct SampleRecord {
    VideoClip ref_video;          // scene with object and effect composited
    VideoClip gt_video;           // scene with both removed
    MaskClip mask;                // object support only
    Tensor<float> effect_map;     // [T,H,W] per-pixel effect intensity in [0,1]
    BipartiteText text;
    SceneSpec spec;
};

namespace world_detail {

inline constexpr int kChannels = 3;
inline constexpr std::uint64_t kAppearanceStream = 101;
inline constexpr std::uint64_t kMisalignStream = 202;

// Stripe pattern index; the (1,2) row/col weighting makes every shift with
// |dr|,|dc| <= 1 change the pattern, which the misalignment tests rely on.
inline int stripe_phase(int h, int w, int period) {
    const int v = h + 2 * w;
    const int m = ((v % (2 * period)) + 2 * period) % (2 * period);
    return m < period ? 0 : 1;
}

struct Appearance {
    float bg_a[3];
    float bg_b[3];
    double gradient_mix = 0.5;  // row/col blend for gradient backgrounds
    int stripe_period = 5;
    float object_color[3];
    double shadow_strength = 0.4;
    double halo_amplitude = 0.18;
    double reflection_alpha = 0.45;
    double ripple_amplitude = 1.2;
    double ripple_wavelength = 4.0;
    double ripple_speed = 0.35;
};

// All appearance draws happen unconditionally and in a fixed order, so two
// specs sharing a seed share background and object looks across effect kinds.
inline Appearance draw_appearance(const SceneSpec& spec) {
    Rng rng = stream_rng(spec.seed, kAppearanceStream);
    Appearance ap;
    for (int c = 0; c < 3; ++c) ap.bg_a[c] = static_cast<float>(rng.uniform(0.20, 0.70));
    for (int c = 0; c < 3; ++c) ap.bg_b[c] = static_cast<float>(rng.uniform(0.20, 0.70));
    ap.gradient_mix = rng.uniform(0.0, 1.0);
    ap.stripe_period = static_cast<int>(rng.uniform_int(4, 6));
    // Keep the stripe contrast visible.
    for (int c = 0; c < 3; ++c) {
        if (std::abs(ap.bg_a[c] - ap.bg_b[c]) < 0.15f) {
            ap.bg_b[c] = ap.bg_a[c] >= 0.45f ? ap.bg_a[c] - 0.2f : ap.bg_a[c] + 0.2f;
        }
    }
    for (int c = 0; c < 3; ++c) ap.object_color[c] = static_cast<float>(rng.uniform(0.05, 0.95));
    ap.shadow_strength = rng.uniform(0.30, 0.60);
    ap.halo_amplitude = rng.uniform(0.12, 0.25);
    ap.reflection_alpha = rng.uniform(0.35, 0.60);
    ap.ripple_amplitude = rng.uniform(0.8, 1.6);
    ap.ripple_wavelength = rng.uniform(3.0, 6.0);
    ap.ripple_speed = rng.uniform(0.25, 0.50);
    return ap;
}

inline float background_value(const SceneSpec& spec, const Appearance& ap, int h, int w, int c) {
    switch (spec.background_kind) {
        case BackgroundKind::kFlat:
            return ap.bg_a[c];
        case BackgroundKind::kGradient: {
            const double u = spec.height > 1 ? static_cast<double>(h) / (spec.height - 1) : 0.0;
            const double v = spec.width > 1 ? static_cast<double>(w) / (spec.width - 1) : 0.0;
            const double x = ap.gradient_mix * u + (1.0 - ap.gradient_mix) * v;
            return static_cast<float>(ap.bg_a[c] + (ap.bg_b[c] - ap.bg_a[c]) * x);
        }
        case BackgroundKind::kStripes:
            return stripe_phase(h, w, ap.stripe_period) == 0 ? ap.bg_a[c] : ap.bg_b[c];
    }
    throw Error("unknown background kind");
}

inline double object_center_row(const SceneSpec& spec, int frame) {
    return spec.motion.start_row + spec.motion.vel_row * frame;
}

inline double object_center_col(const SceneSpec& spec, int frame) {
    return spec.motion.start_col + spec.motion.vel_col * frame;
}

inline bool object_covers(const SceneSpec& spec, int frame, int h, int w) {
    const double dr = h - object_center_row(spec, frame);
    const double dc = w - object_center_col(spec, frame);
    const double e = spec.object_extent;
    if (spec.object_kind == ObjectKind::kDisk) return dr * dr + dc * dc <= e * e;
    return std::abs(dr) <= e && std::abs(dc) <= e;
}

// Shadows are cast at a fixed displacement from the object.
inline void shadow_offset(const SceneSpec& spec, int* dr, int* dc) {
    *dr = std::max(2, spec.height / 8);
    *dc = std::max(2, spec.width / 8);
}

// The mirror line for reflection scenes; objects sit above it and their
// attenuated mirror image below it.
inline int waterline_row(const SceneSpec& spec) { return (3 * spec.height) / 5; }

inline double ripple_band(const SceneSpec& spec) { return 3.0 * spec.object_extent; }

// Largest per-row displacement the ripple may produce; normalizes effect_map.
inline constexpr double kRippleMaxAmplitude = 2.0;

}  // namespace world_detail

inline void validate_scene_spec(const SceneSpec& spec) {
    if (spec.frames < 2) throw Error("scene spec: frames must be >= 2");
    if (spec.height < 8 || spec.width < 8) throw Error("scene spec: frame too small");
    if (spec.object_extent <= 0.0) throw Error("scene spec: object extent must be positive");
    for (int t = 0; t < spec.frames; ++t) {
        const double cr = world_detail::object_center_row(spec, t);
        const double cc = world_detail::object_center_col(spec, t);
        const double e = spec.object_extent + spec.mask_dilation;
        if (cr - e < 0.0 || cr + e > spec.height - 1 || cc - e < 0.0 || cc + e > spec.width - 1) {
            throw Error("scene spec: object trajectory exits the frame at frame " + std::to_string(t));
        }
    }
}

inline SampleRecord make_misaligned(const SampleRecord& sample, const MisalignSpec& mis);

// Renders the paired (reference, removed ground truth, mask, effect map,
// text) record. Pure function of the spec: a fixed seed reproduces the
// record bit for bit.
inline SampleRecord generate_scene(const SceneSpec& spec) {
    using namespace world_detail;
    validate_scene_spec(spec);

    if (spec.misalignment.has_value()) {
        SceneSpec aligned = spec;
        aligned.misalignment.reset();
        return make_misaligned(generate_scene(aligned), *spec.misalignment);
    }

    const int T = spec.frames, H = spec.height, W = spec.width, C = kChannels;
    const Appearance ap = draw_appearance(spec);

    SampleRecord s;
    s.spec = spec;
    s.text = compose_text(spec);
    s.ref_video = VideoClip({T, H, W, C});
    s.gt_video = VideoClip({T, H, W, C});
    s.mask = MaskClip({T, H, W});
    s.effect_map = Tensor<float>({T, H, W});

    // Static background; gt is the background with nothing composited.
    Tensor<float> bg({H, W, C});
    for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
            for (int c = 0; c < C; ++c) bg.at(h, w, c) = background_value(spec, ap, h, w, c);
        }
    }
    auto bg_at = [&](int h, int w, int c) -> float { return bg.at(h, w, c); };

    for (int t = 0; t < T; ++t) {
        for (int h = 0; h < H; ++h) {
            for (int w = 0; w < W; ++w) {
                for (int c = 0; c < C; ++c) {
                    const float v = bg_at(h, w, c);
                    s.ref_video.at(t, h, w, c) = v;
                    s.gt_video.at(t, h, w, c) = v;
                }
            }
        }
    }

    for (int t = 0; t < T; ++t) {
        const double cr = object_center_row(spec, t);
        const double cc = object_center_col(spec, t);

        switch (spec.effect_kind) {
            case EffectKind::kNone:
                break;
            case EffectKind::kRipple: {
                // Horizontal displacement of background rows near the object,
                // amplitude decaying with vertical distance.
                const double band = ripple_band(spec);
                for (int h = 0; h < H; ++h) {
                    const double env = ap.ripple_amplitude * std::max(0.0, 1.0 - std::abs(h - cr) / band);
                    if (env <= 0.0) continue;
                    for (int w = 0; w < W; ++w) {
                        const double phase = 2.0 * 3.14159265358979323846 *
                                             (w / ap.ripple_wavelength + ap.ripple_speed * t);
                        const double disp = env * std::sin(phase);
                        s.effect_map.at(t, h, w) =
                            static_cast<float>(std::min(1.0, std::abs(disp) / kRippleMaxAmplitude));
                        if (disp == 0.0) continue;
                        const double src = std::clamp(w - disp, 0.0, static_cast<double>(W - 1));
                        const int w0 = static_cast<int>(std::floor(src));
                        const int w1 = std::min(w0 + 1, W - 1);
                        const float frac = static_cast<float>(src - w0);
                        for (int c = 0; c < C; ++c) {
                            const float v = (1.0f - frac) * bg_at(h, w0, c) + frac * bg_at(h, w1, c);
                            s.ref_video.at(t, h, w, c) = v;
                        }
                    }
                }
                break;
            }
            case EffectKind::kShadow: {
                int dr = 0, dc = 0;
                shadow_offset(spec, &dr, &dc);
                const float k = static_cast<float>(ap.shadow_strength);
                for (int h = 0; h < H; ++h) {
                    for (int w = 0; w < W; ++w) {
                        if (!object_covers(spec, t, h - dr, w - dc)) continue;
                        s.effect_map.at(t, h, w) = k;
                        for (int c = 0; c < C; ++c) s.ref_video.at(t, h, w, c) *= (1.0f - k);
                    }
                }
                break;
            }
            case EffectKind::kLightHalo: {
                // Additive truncated-Gaussian brightness, radius beyond the object.
                const double radius = 2.5 * spec.object_extent + 1.0;
                const double sigma = radius / 2.2;
                for (int h = 0; h < H; ++h) {
                    for (int w = 0; w < W; ++w) {
                        const double d2 = (h - cr) * (h - cr) + (w - cc) * (w - cc);
                        if (d2 > radius * radius) continue;
                        const float e = static_cast<float>(ap.halo_amplitude * std::exp(-d2 / (2.0 * sigma * sigma)));
                        s.effect_map.at(t, h, w) = e;
                        for (int c = 0; c < C; ++c) {
                            s.ref_video.at(t, h, w, c) = std::min(1.0f, s.ref_video.at(t, h, w, c) + e);
                        }
                    }
                }
                break;
            }
            case EffectKind::kReflection: {
                // Attenuated vertical mirror of the object below the waterline.
                const int line = waterline_row(spec);
                const float alpha = static_cast<float>(ap.reflection_alpha);
                for (int h = 0; h < H; ++h) {
                    const int hm = 2 * line - h;  // source row above the line
                    if (h <= line || hm < 0) continue;
                    for (int w = 0; w < W; ++w) {
                        if (!object_covers(spec, t, hm, w)) continue;
                        s.effect_map.at(t, h, w) = alpha;
                        for (int c = 0; c < C; ++c) {
                            const float v = s.ref_video.at(t, h, w, c);
                            s.ref_video.at(t, h, w, c) = (1.0f - alpha) * v + alpha * ap.object_color[c];
                        }
                    }
                }
                break;
            }
        }

        // Object on top of everything; the mask is its (optionally dilated) support.
        for (int h = 0; h < H; ++h) {
            for (int w = 0; w < W; ++w) {
                if (object_covers(spec, t, h, w)) {
                    for (int c = 0; c < C; ++c) s.ref_video.at(t, h, w, c) = ap.object_color[c];
                    s.mask.at(t, h, w) = 1.0f;
                }
            }
        }
        if (spec.mask_dilation > 0) {
            const int r = spec.mask_dilation;
            MaskClip dilated = s.mask;
            for (int h = 0; h < H; ++h) {
                for (int w = 0; w < W; ++w) {
                    if (s.mask.at(t, h, w) > 0.0f) continue;
                    bool near = false;
                    for (int dh = -r; dh <= r && !near; ++dh) {
                        for (int dw = -r; dw <= r && !near; ++dw) {
                            const int hh = h + dh, ww = w + dw;
                            if (hh >= 0 && hh < H && ww >= 0 && ww < W && s.mask.at(t, hh, ww) > 0.0f) near = true;
                        }
                    }
                    if (near) dilated.at(t, h, w) = 1.0f;
                }
            }
            s.mask = dilated;
        }
    }
    return s;
}

// V_m = V_ref * (1 - M), mask broadcast over channels.
inline VideoClip make_masked_video(const VideoClip& ref, const MaskClip& mask) {
    if (ref.rank() != 4 || mask.rank() != 3 || ref.dim(0) != mask.dim(0) || ref.dim(1) != mask.dim(1) ||
        ref.dim(2) != mask.dim(2)) {
        throw ShapeError("make_masked_video: ref " + ref.shape_str() + " vs mask " + mask.shape_str());
    }
    VideoClip out(ref.shape());
    const int C = ref.dim(3);
    for (int t = 0; t < ref.dim(0); ++t) {
        for (int h = 0; h < ref.dim(1); ++h) {
            for (int w = 0; w < ref.dim(2); ++w) {
                const float keep = 1.0f - mask.at(t, h, w);
                for (int c = 0; c < C; ++c) out.at(t, h, w, c) = ref.at(t, h, w, c) * keep;
            }
        }
    }
    return out;
}

// Degrades the ground-truth background the way imperfectly aligned capture
// does: per-frame integer translation (never the null shift) plus a constant
// brightness offset. Reference, mask, and effect map stay untouched.
inline SampleRecord make_misaligned(const SampleRecord& sample, const MisalignSpec& mis) {
    if (sample.spec.misalignment.has_value()) {
        throw Error("make_misaligned: sample is already misaligned");
    }
    SampleRecord out = sample;
    out.spec.misalignment = mis;
    const int T = sample.spec.frames, H = sample.spec.height, W = sample.spec.width, C = 3;
    Rng rng = stream_rng(sample.spec.seed, world_detail::kMisalignStream);
    const int k = mis.translation_jitter;
    const float b = static_cast<float>(mis.brightness_jitter);
    for (int t = 0; t < T; ++t) {
        int dr = 0, dc = 0;
        if (k > 0) {
            do {
                dr = static_cast<int>(rng.uniform_int(-k, k));
                dc = static_cast<int>(rng.uniform_int(-k, k));
            } while (dr == 0 && dc == 0);
        }
        for (int h = 0; h < H; ++h) {
            const int hs = std::clamp(h - dr, 0, H - 1);
            for (int w = 0; w < W; ++w) {
                const int ws = std::clamp(w - dc, 0, W - 1);
                for (int c = 0; c < C; ++c) {
                    out.gt_video.at(t, h, w, c) = std::clamp(sample.gt_video.at(t, hs, ws, c) + b, 0.0f, 1.0f);
                }
            }
        }
    }
    return out;
}

// Draws a valid random spec with the requested effect kind. Reflection
// scenes get a flat vertical trajectory so both object and mirror image fit.
inline SceneSpec random_scene_spec(Rng& rng, std::uint64_t seed, int frames, int height, int width,
                                   const std::vector<EffectKind>& effect_kinds, int mask_dilation = 0) {
    SceneSpec spec;
    spec.seed = seed;
    spec.frames = frames;
    spec.height = height;
    spec.width = width;
    spec.mask_dilation = mask_dilation;
    spec.object_kind = rng.uniform() < 0.5 ? ObjectKind::kDisk : ObjectKind::kSquare;
    spec.background_kind = [&] {
        const auto pick = rng.uniform_int(0, 2);
        return pick == 0 ? BackgroundKind::kFlat : pick == 1 ? BackgroundKind::kGradient : BackgroundKind::kStripes;
    }();
    spec.effect_kind = effect_kinds[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(effect_kinds.size()) - 1))];
    spec.object_extent = rng.uniform(1.6, 2.6);

    const double margin = spec.object_extent + mask_dilation + 0.5;
    double row_lo = margin, row_hi = height - 1 - margin;
    if (spec.effect_kind == EffectKind::kReflection) {
        // Support must stay above the waterline so the mirror is visible.
        const int line = world_detail::waterline_row(spec);
        row_hi = std::min(row_hi, line - spec.object_extent - 1.0);
        row_lo = std::max(row_lo, 2.0 * line - (height - 1) + spec.object_extent);
        if (row_hi < row_lo) row_hi = row_lo;
    }

    auto draw_track = [&](double lo, double hi, double* start, double* vel) {
        const double span = hi - lo;
        *vel = span > 0.5 ? rng.uniform(-1.0, 1.0) : 0.0;
        double travel = *vel * (frames - 1);
        if (std::abs(travel) > span) {
            *vel *= span / std::abs(travel);
            travel = *vel * (frames - 1);
        }
        const double s_lo = lo + std::max(0.0, -travel);
        const double s_hi = hi - std::max(0.0, travel);
        *start = rng.uniform(s_lo, s_hi);
    };
    double vr = 0.0, vc = 0.0, sr = 0.0, sc = 0.0;
    draw_track(row_lo, row_hi, &sr, &vr);
    if (spec.effect_kind == EffectKind::kReflection) vr = 0.0;
    draw_track(margin, width - 1 - margin, &sc, &vc);
    spec.motion = Motion{sr, sc, vr, vc};
    validate_scene_spec(spec);
    return spec;
}

}  // namespace generaser
