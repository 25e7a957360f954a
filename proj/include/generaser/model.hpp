#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "generaser/dataset.hpp"
#include "generaser/rng.hpp"
#include "generaser/tensor.hpp"

namespace generaser {

// Transformer denoiser geometry. The conditioning video channels are
// concatenated onto the noisy input before patchification:
// x_t(3) + reference(3) + mask(1) + masked reference(3).
struct ModelConfig {
    int frames = 8;
    int height = 16;
    int width = 16;
    int video_channels = 3;
    int cond_channels = 7;  // reference + mask + masked reference
    int patch_h = 2;
    int patch_w = 2;
    int d_model = 64;
    int n_heads = 4;
    int n_blocks = 4;
    int d_txt = 32;
    int l_max = 16;
    int mlp_ratio = 4;
    int d_time = 32;  // sinusoidal time feature width (even)

    int in_channels() const { return video_channels + cond_channels; }
    int tokens_h() const { return height / patch_h; }
    int tokens_w() const { return width / patch_w; }
    int tokens() const { return frames * tokens_h() * tokens_w(); }
    int patch_dim() const { return in_channels() * patch_h * patch_w; }
    int out_patch_dim() const { return video_channels * patch_h * patch_w; }
    int d_head() const { return d_model / n_heads; }
    int d_mlp() const { return d_model * mlp_ratio; }

    void validate() const {
        if (frames < 1 || height < 1 || width < 1) throw ConfigError("model: video dims must be positive");
        if (height % patch_h != 0 || width % patch_w != 0) {
            throw ConfigError("model: frame size must be divisible by the patch size");
        }
        if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
        if (d_time % 2 != 0) throw ConfigError("model: d_time must be even");
        if (n_blocks < 1 || d_model < 1 || d_txt < 1 || l_max < 1) throw ConfigError("model: bad transformer dims");
    }

    bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {
        {"frames", c.frames},       {"height", c.height},         {"width", c.width},
        {"video_channels", c.video_channels}, {"cond_channels", c.cond_channels},
        {"patch_h", c.patch_h},     {"patch_w", c.patch_w},       {"d_model", c.d_model},
        {"n_heads", c.n_heads},     {"n_blocks", c.n_blocks},     {"d_txt", c.d_txt},
        {"l_max", c.l_max},         {"mlp_ratio", c.mlp_ratio},   {"d_time", c.d_time},
    };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig c;
        c.frames = j.at("frames").get<int>();
        c.height = j.at("height").get<int>();
        c.width = j.at("width").get<int>();
        c.video_channels = j.at("video_channels").get<int>();
        c.cond_channels = j.at("cond_channels").get<int>();
        c.patch_h = j.at("patch_h").get<int>();
        c.patch_w = j.at("patch_w").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.n_blocks = j.at("n_blocks").get<int>();
        c.d_txt = j.at("d_txt").get<int>();
        c.l_max = j.at("l_max").get<int>();
        c.mlp_ratio = j.at("mlp_ratio").get<int>();
        c.d_time = j.at("d_time").get<int>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad model config: ") + e.what());
    }
}

struct ParamInfo {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
    std::vector<int> shape;
    bool fusion = false;  // guidance-fusion layer parameter (stage-2 trainable set)
};

// All learnable parameters in one flat vector, with a registry mapping names
// to slices. Gradients and optimizer state reuse the same layout.
template <typename S>
class DenoiserParams {
public:
    explicit DenoiserParams(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const int D = cfg_.d_model;
        add("patch_embed.weight", {cfg_.patch_dim(), D});
        add("patch_embed.bias", {D});
        add("time_mlp.w1", {cfg_.d_time, D});
        add("time_mlp.b1", {D});
        add("time_mlp.w2", {D, D});
        add("time_mlp.b2", {D});
        for (int b = 0; b < cfg_.n_blocks; ++b) {
            const std::string p = "blocks." + std::to_string(b) + ".";
            add(p + "ln1.gamma", {D});
            add(p + "ln1.beta", {D});
            add(p + "attn.wq", {D, D});
            add(p + "attn.bq", {D});
            add(p + "attn.wk", {D, D});
            add(p + "attn.bk", {D});
            add(p + "attn.wv", {D, D});
            add(p + "attn.bv", {D});
            add(p + "attn.wo", {D, D});
            add(p + "attn.bo", {D});
            add(p + "ln2.gamma", {D});
            add(p + "ln2.beta", {D});
            add(p + "cross.wq", {D, D});
            add(p + "cross.bq", {D});
            add(p + "cross.wk", {cfg_.d_txt, D});
            add(p + "cross.bk", {D});
            add(p + "cross.wv", {cfg_.d_txt, D});
            add(p + "cross.bv", {D});
            add(p + "cross.wo", {D, D});
            add(p + "cross.bo", {D});
            add(p + "ln3.gamma", {D});
            add(p + "ln3.beta", {D});
            add(p + "mlp.w1", {D, cfg_.d_mlp()});
            add(p + "mlp.b1", {cfg_.d_mlp()});
            add(p + "mlp.w2", {cfg_.d_mlp(), D});
            add(p + "mlp.b2", {D});
            add(p + "fuse_mask.weight", {D, D}, true);
            add(p + "fuse_mask.bias", {D}, true);
            add(p + "fuse_text.weight", {D, D}, true);
            add(p + "fuse_text.bias", {D}, true);
        }
        add("final_ln.gamma", {D});
        add("final_ln.beta", {D});
        add("head.weight", {D, cfg_.out_patch_dim()});
        add("head.bias", {cfg_.out_patch_dim()});
        values_.assign(total_, S(0));
    }

    const ModelConfig& config() const { return cfg_; }
    std::size_t size() const { return total_; }
    const std::vector<ParamInfo>& entries() const { return infos_; }

    std::vector<S>& values() { return values_; }
    const std::vector<S>& values() const { return values_; }

    const ParamInfo& info(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
        return infos_[it->second];
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    S* param(const std::string& name) { return values_.data() + info(name).offset; }
    const S* param(const std::string& name) const { return values_.data() + info(name).offset; }

    // Marks the stage-2 trainable subset: 1 where the slot belongs to a
    // fusion layer, 0 elsewhere.
    std::vector<std::uint8_t> fusion_mask() const {
        std::vector<std::uint8_t> m(total_, 0);
        for (const auto& pi : infos_) {
            if (!pi.fusion) continue;
            std::fill(m.begin() + static_cast<std::ptrdiff_t>(pi.offset),
                      m.begin() + static_cast<std::ptrdiff_t>(pi.offset + pi.size), std::uint8_t(1));
        }
        return m;
    }

    std::size_t fusion_param_count() const {
        std::size_t n = 0;
        for (const auto& pi : infos_) {
            if (pi.fusion) n += pi.size;
        }
        return n;
    }

    // Deterministic initialization. Matrix weights draw from a normal with
    // Xavier scale; norms start at identity; fusion layers and the output
    // head start at exactly zero so a fresh model's fused pass matches the
    // plain one and its initial velocity is zero.
    void init(std::uint64_t seed) {
        std::fill(values_.begin(), values_.end(), S(0));
        for (const auto& pi : infos_) {
            S* v = values_.data() + pi.offset;
            if (pi.fusion || pi.name == "head.weight" || pi.name == "head.bias") continue;
            if (pi.shape.size() == 2) {
                Rng rng = stream_rng(seed, name_hash(pi.name));
                const double std_dev = std::sqrt(2.0 / (pi.shape[0] + pi.shape[1]));
                for (std::size_t i = 0; i < pi.size; ++i) v[i] = static_cast<S>(rng.normal() * std_dev);
            } else if (pi.name.size() >= 5 && pi.name.compare(pi.name.size() - 5, 5, "gamma") == 0) {
                for (std::size_t i = 0; i < pi.size; ++i) v[i] = S(1);
            }
            // biases and betas stay zero
        }
    }

    static std::uint64_t name_hash(const std::string& name) {
        std::uint64_t h = 1469598103934665603ull;  // FNV-1a
        for (unsigned char ch : name) {
            h ^= ch;
            h *= 1099511628211ull;
        }
        return h;
    }

    template <typename S2>
    DenoiserParams<S2> cast() const {
        DenoiserParams<S2> out(cfg_);
        for (std::size_t i = 0; i < total_; ++i) out.values()[i] = static_cast<S2>(values_[i]);
        return out;
    }

private:
    void add(const std::string& name, std::vector<int> shape, bool fusion = false) {
        ParamInfo pi;
        pi.name = name;
        pi.offset = total_;
        pi.size = Tensor<S>::num_elements(shape);
        pi.shape = std::move(shape);
        pi.fusion = fusion;
        total_ += pi.size;
        index_[name] = infos_.size();
        infos_.push_back(std::move(pi));
    }

    ModelConfig cfg_;
    std::vector<ParamInfo> infos_;
    std::unordered_map<std::string, std::size_t> index_;
    std::size_t total_ = 0;
    std::vector<S> values_;
};

// Checkpoints are a manifest plus one raw little-endian float32 file per
// named parameter.
template <typename S>
void save_checkpoint(const std::filesystem::path& dir, const DenoiserParams<S>& params,
                     const nlohmann::json& extra = nlohmann::json::object()) {
    std::filesystem::create_directories(dir);
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& pi : params.entries()) {
        entries.push_back({{"name", pi.name}, {"shape", pi.shape}, {"file", pi.name + ".bin"}});
        if constexpr (std::is_same_v<S, float>) {
            io_detail::write_f32le(dir / (pi.name + ".bin"), params.values().data() + pi.offset, pi.size);
        } else {
            std::vector<float> tmp(pi.size);
            for (std::size_t i = 0; i < pi.size; ++i) {
                tmp[i] = static_cast<float>(params.values()[pi.offset + i]);
            }
            io_detail::write_f32le(dir / (pi.name + ".bin"), tmp.data(), tmp.size());
        }
    }
    nlohmann::json manifest{{"format_version", kDatasetFormatVersion},
                            {"dtype", "f32le"},
                            {"model", model_config_to_json(params.config())},
                            {"params", entries},
                            {"extra", extra}};
    io_detail::save_json(dir / kManifestFileName, manifest);
}

template <typename S = float>
DenoiserParams<S> load_checkpoint(const std::filesystem::path& dir, nlohmann::json* extra_out = nullptr) {
    const nlohmann::json manifest = io_detail::load_json(dir / kManifestFileName);
    try {
        if (manifest.at("dtype").get<std::string>() != "f32le") {
            throw ConfigError("unsupported checkpoint dtype in " + dir.string());
        }
        DenoiserParams<S> params(model_config_from_json(manifest.at("model")));
        std::size_t seen = 0;
        for (const auto& entry : manifest.at("params")) {
            const std::string name = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<std::vector<int>>();
            const ParamInfo& pi = params.info(name);
            if (shape != pi.shape) {
                throw ShapeError("checkpoint parameter '" + name + "' has shape mismatch");
            }
            std::vector<float> tmp(pi.size);
            io_detail::read_f32le(dir / entry.at("file").get<std::string>(), tmp.data(), tmp.size());
            for (std::size_t i = 0; i < pi.size; ++i) {
                params.values()[pi.offset + i] = static_cast<S>(tmp[i]);
            }
            ++seen;
        }
        if (seen != params.entries().size()) {
            throw ConfigError("checkpoint " + dir.string() + " is missing parameters (" + std::to_string(seen) +
                              " of " + std::to_string(params.entries().size()) + ")");
        }
        if (extra_out != nullptr) {
            *extra_out = manifest.contains("extra") ? manifest.at("extra") : nlohmann::json::object();
        }
        return params;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
    }
}

}  // namespace generaser
