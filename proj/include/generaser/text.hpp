#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "generaser/common.hpp"
#include "generaser/rng.hpp"
#include "generaser/tensor.hpp"
#include "generaser/world_types.hpp"

namespace generaser {

// Closed removal-prompt vocabulary. Token 0 is the pad id; its embedding is
// pinned to zero so the all-pad sequence is a true null condition.
namespace vocab {
inline constexpr int kPad = 0;
inline constexpr int kSegObject = 1;
inline constexpr int kSegEffect = 2;
inline constexpr int kSegScene = 3;
inline constexpr int kObjDisk = 4;
inline constexpr int kObjSquare = 5;
inline constexpr int kEffShadow = 6;
inline constexpr int kEffLightHalo = 7;
inline constexpr int kEffReflection = 8;
inline constexpr int kEffRipple = 9;
inline constexpr int kBgFlat = 10;
inline constexpr int kBgGradient = 11;
inline constexpr int kBgStripes = 12;
inline constexpr int kSize = 13;

inline const std::map<std::string, int>& names() {
    static const std::map<std::string, int> m = {
        {"PAD", kPad},           {"SEG_OBJECT", kSegObject}, {"SEG_EFFECT", kSegEffect},
        {"SEG_SCENE", kSegScene}, {"OBJ_DISK", kObjDisk},     {"OBJ_SQUARE", kObjSquare},
        {"EFF_SHADOW", kEffShadow}, {"EFF_LIGHT_HALO", kEffLightHalo},
        {"EFF_REFLECTION", kEffReflection}, {"EFF_RIPPLE", kEffRipple},
        {"BG_FLAT", kBgFlat},    {"BG_GRADIENT", kBgGradient}, {"BG_STRIPES", kBgStripes},
    };
    return m;
}
}  // namespace vocab

// Two-part removal prompt: what to erase (object + its physical effects)
// and what the scene should look like afterwards.
struct BipartiteText {
    std::vector<int> object_tokens;
    std::vector<int> effect_tokens;  // empty when the scene has no effect
    std::vector<int> scene_tokens;

    // [SEG_OBJECT obj... SEG_EFFECT eff... SEG_SCENE scene...] padded to l_max.
    std::vector<int> flatten(int l_max) const {
        std::vector<int> out;
        out.reserve(static_cast<std::size_t>(l_max));
        out.push_back(vocab::kSegObject);
        out.insert(out.end(), object_tokens.begin(), object_tokens.end());
        out.push_back(vocab::kSegEffect);
        out.insert(out.end(), effect_tokens.begin(), effect_tokens.end());
        out.push_back(vocab::kSegScene);
        out.insert(out.end(), scene_tokens.begin(), scene_tokens.end());
        if (static_cast<int>(out.size()) > l_max) throw Error("bipartite text exceeds l_max");
        out.resize(static_cast<std::size_t>(l_max), vocab::kPad);
        return out;
    }

    bool operator==(const BipartiteText& o) const {
        return object_tokens == o.object_tokens && effect_tokens == o.effect_tokens &&
               scene_tokens == o.scene_tokens;
    }
};

// The empty-text condition: the all-pad sequence.
inline std::vector<int> empty_text_ids(int l_max) { return std::vector<int>(static_cast<std::size_t>(l_max), vocab::kPad); }

inline BipartiteText compose_text(const SceneSpec& spec) {
    BipartiteText text;
    switch (spec.object_kind) {
        case ObjectKind::kDisk: text.object_tokens = {vocab::kObjDisk}; break;
        case ObjectKind::kSquare: text.object_tokens = {vocab::kObjSquare}; break;
    }
    switch (spec.effect_kind) {
        case EffectKind::kShadow: text.effect_tokens = {vocab::kEffShadow}; break;
        case EffectKind::kLightHalo: text.effect_tokens = {vocab::kEffLightHalo}; break;
        case EffectKind::kReflection: text.effect_tokens = {vocab::kEffReflection}; break;
        case EffectKind::kRipple: text.effect_tokens = {vocab::kEffRipple}; break;
        case EffectKind::kNone: break;
    }
    switch (spec.background_kind) {
        case BackgroundKind::kFlat: text.scene_tokens = {vocab::kBgFlat}; break;
        case BackgroundKind::kGradient: text.scene_tokens = {vocab::kBgGradient}; break;
        case BackgroundKind::kStripes: text.scene_tokens = {vocab::kBgStripes}; break;
    }
    return text;
}

// Fixed, seeded token-embedding table standing in for a frozen text encoder.
// The pad row is pinned to zero and never drawn.
template <typename S>
class TextEmbedder {
public:
    TextEmbedder(int l_max, int d_txt, std::uint64_t seed = 0x7e77u)
        : l_max_(l_max), d_txt_(d_txt), table_({vocab::kSize, d_txt}) {
        Rng rng = stream_rng(seed, /*purpose=*/0x7e77u);
        for (int id = 1; id < vocab::kSize; ++id) {
            for (int j = 0; j < d_txt; ++j) {
                table_.at(id, j) = static_cast<S>(rng.normal() * 0.5);
            }
        }
    }

    int l_max() const { return l_max_; }
    int d_txt() const { return d_txt_; }
    const Tensor<S>& table() const { return table_; }

    // Row i of the result is table[token_i]; pad rows are zero.
    Tensor<S> embed_ids(const std::vector<int>& ids) const {
        Tensor<S> out({l_max_, d_txt_});
        if (static_cast<int>(ids.size()) != l_max_) throw ShapeError("token sequence length != l_max");
        for (int i = 0; i < l_max_; ++i) {
            const int id = ids[static_cast<std::size_t>(i)];
            if (id < 0 || id >= vocab::kSize) throw Error("token id out of range: " + std::to_string(id));
            for (int j = 0; j < d_txt_; ++j) out.at(i, j) = table_.at(id, j);
        }
        return out;
    }

    Tensor<S> embed(const BipartiteText& text) const { return embed_ids(text.flatten(l_max_)); }

    Tensor<S> embed_empty() const { return embed_ids(empty_text_ids(l_max_)); }

private:
    int l_max_;
    int d_txt_;
    Tensor<S> table_;
};

}  // namespace generaser
