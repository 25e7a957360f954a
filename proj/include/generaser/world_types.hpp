#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "generaser/common.hpp"

namespace generaser {

enum class ObjectKind { kDisk, kSquare };
enum class EffectKind { kShadow, kLightHalo, kReflection, kRipple, kNone };
enum class BackgroundKind { kFlat, kGradient, kStripes };

inline const char* to_string(ObjectKind k) {
    switch (k) {
        case ObjectKind::kDisk: return "disk";
        case ObjectKind::kSquare: return "square";
    }
    throw Error("unknown object kind");
}

inline const char* to_string(EffectKind k) {
    switch (k) {
        case EffectKind::kShadow: return "shadow";
        case EffectKind::kLightHalo: return "light_halo";
        case EffectKind::kReflection: return "reflection";
        case EffectKind::kRipple: return "ripple";
        case EffectKind::kNone: return "none";
    }
    throw Error("unknown effect kind");
}

inline const char* to_string(BackgroundKind k) {
    switch (k) {
        case BackgroundKind::kFlat: return "flat";
        case BackgroundKind::kGradient: return "gradient";
        case BackgroundKind::kStripes: return "stripes";
    }
    throw Error("unknown background kind");
}

inline ObjectKind object_kind_from_string(const std::string& s) {
    if (s == "disk") return ObjectKind::kDisk;
    if (s == "square") return ObjectKind::kSquare;
    throw ConfigError("unknown object kind: " + s);
}

inline EffectKind effect_kind_from_string(const std::string& s) {
    if (s == "shadow") return EffectKind::kShadow;
    if (s == "light_halo") return EffectKind::kLightHalo;
    if (s == "reflection") return EffectKind::kReflection;
    if (s == "ripple") return EffectKind::kRipple;
    if (s == "none") return EffectKind::kNone;
    throw ConfigError("unknown effect kind: " + s);
}

inline BackgroundKind background_kind_from_string(const std::string& s) {
    if (s == "flat") return BackgroundKind::kFlat;
    if (s == "gradient") return BackgroundKind::kGradient;
    if (s == "stripes") return BackgroundKind::kStripes;
    throw ConfigError("unknown background kind: " + s);
}

// Applied to the ground-truth background only; the reference video and the
// mask stay untouched and remain the alignment anchor.
struct MisalignSpec {
    int translation_jitter = 0;      // per-frame integer shift, uniform in +-k
    double brightness_jitter = 0.0;  // constant offset added to gt background
};

// Linear per-frame trajectory of the object center, in cell units.
struct Motion {
    double start_row = 0.0;
    double start_col = 0.0;
    double vel_row = 0.0;  // cells per frame
    double vel_col = 0.0;
};

struct SceneSpec {
    std::uint64_t seed = 0;
    int frames = 8;
    int height = 16;
    int width = 16;
    ObjectKind object_kind = ObjectKind::kDisk;
    EffectKind effect_kind = EffectKind::kNone;
    BackgroundKind background_kind = BackgroundKind::kFlat;
    Motion motion;
    double object_extent = 2.0;  // disk radius or square half-size
    int mask_dilation = 0;       // Chebyshev dilation of the object mask
    std::optional<MisalignSpec> misalignment;
};

}  // namespace generaser
