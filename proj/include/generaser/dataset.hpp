#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "generaser/effect_world.hpp"
#include "generaser/tensor.hpp"

namespace generaser {

inline constexpr const char* kIndexFileName = "index.json";
inline constexpr const char* kManifestFileName = "manifest.json";

namespace io_detail {

inline void write_f32le(const std::filesystem::path& path, const float* data, std::size_t n) {
    static_assert(sizeof(float) == 4, "float must be 32-bit");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    if constexpr (std::endian::native == std::endian::little) {
        f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t u;
            std::memcpy(&u, &data[i], 4);
            const char b[4] = {static_cast<char>(u), static_cast<char>(u >> 8), static_cast<char>(u >> 16),
                               static_cast<char>(u >> 24)};
            f.write(b, 4);
        }
    }
    if (!f) throw IoError("short write: " + path.string());
}

inline void read_f32le(const std::filesystem::path& path, float* out, std::size_t n) {
    std::error_code ec;
    const auto bytes = std::filesystem::file_size(path, ec);
    if (ec) throw IoError("missing tensor file: " + path.string());
    if (bytes != n * 4) {
        throw IoError("tensor file " + path.string() + " holds " + std::to_string(bytes) + " bytes, expected " +
                      std::to_string(n * 4));
    }
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path.string());
    if constexpr (std::endian::native == std::endian::little) {
        f.read(reinterpret_cast<char*>(out), static_cast<std::streamsize>(n * 4));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            unsigned char b[4];
            f.read(reinterpret_cast<char*>(b), 4);
            const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                    (static_cast<std::uint32_t>(b[2]) << 16) |
                                    (static_cast<std::uint32_t>(b[3]) << 24);
            std::memcpy(&out[i], &u, 4);
        }
    }
    if (!f) throw IoError("short read: " + path.string());
}

inline nlohmann::json load_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

inline void save_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << j.dump(2) << "\n";
    if (!f) throw IoError("short write: " + path.string());
}

inline std::vector<int> require_ids(const nlohmann::json& j, const char* key) {
    std::vector<int> ids = j.at(key).get<std::vector<int>>();
    for (int id : ids) {
        if (id < 0 || id >= vocab::kSize) {
            throw ConfigError(std::string("token id out of range in '") + key + "': " + std::to_string(id));
        }
    }
    return ids;
}

}  // namespace io_detail

inline nlohmann::json spec_to_json(const SceneSpec& spec) {
    nlohmann::json j{
        {"seed", spec.seed},
        {"frames", spec.frames},
        {"height", spec.height},
        {"width", spec.width},
        {"object", to_string(spec.object_kind)},
        {"effect", to_string(spec.effect_kind)},
        {"background", to_string(spec.background_kind)},
        {"object_extent", spec.object_extent},
        {"mask_dilation", spec.mask_dilation},
        {"motion",
         {{"start_row", spec.motion.start_row},
          {"start_col", spec.motion.start_col},
          {"vel_row", spec.motion.vel_row},
          {"vel_col", spec.motion.vel_col}}},
    };
    if (spec.misalignment.has_value()) {
        j["misalignment"] = {{"translation_jitter", spec.misalignment->translation_jitter},
                             {"brightness_jitter", spec.misalignment->brightness_jitter}};
    } else {
        j["misalignment"] = nullptr;
    }
    return j;
}

inline SceneSpec spec_from_json(const nlohmann::json& j) {
    try {
        SceneSpec spec;
        spec.seed = j.at("seed").get<std::uint64_t>();
        spec.frames = j.at("frames").get<int>();
        spec.height = j.at("height").get<int>();
        spec.width = j.at("width").get<int>();
        spec.object_kind = object_kind_from_string(j.at("object").get<std::string>());
        spec.effect_kind = effect_kind_from_string(j.at("effect").get<std::string>());
        spec.background_kind = background_kind_from_string(j.at("background").get<std::string>());
        spec.object_extent = j.at("object_extent").get<double>();
        spec.mask_dilation = j.at("mask_dilation").get<int>();
        const auto& m = j.at("motion");
        spec.motion = Motion{m.at("start_row").get<double>(), m.at("start_col").get<double>(),
                             m.at("vel_row").get<double>(), m.at("vel_col").get<double>()};
        if (j.contains("misalignment") && !j.at("misalignment").is_null()) {
            const auto& mis = j.at("misalignment");
            spec.misalignment = MisalignSpec{mis.at("translation_jitter").get<int>(),
                                             mis.at("brightness_jitter").get<double>()};
        }
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad scene spec: ") + e.what());
    }
}

// Writes one sample directory: manifest.json plus one raw little-endian
// float32 file per tensor, row-major.
inline void write_sample(const std::filesystem::path& dir, const SampleRecord& s) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest{
        {"format_version", kDatasetFormatVersion},
        {"dtype", "f32le"},
        {"spec", spec_to_json(s.spec)},
        {"text",
         {{"object", s.text.object_tokens}, {"effect", s.text.effect_tokens}, {"scene", s.text.scene_tokens}}},
        {"tensors",
         {{"ref", {{"file", "ref.bin"}, {"shape", s.ref_video.shape()}}},
          {"gt", {{"file", "gt.bin"}, {"shape", s.gt_video.shape()}}},
          {"mask", {{"file", "mask.bin"}, {"shape", s.mask.shape()}}},
          {"effect", {{"file", "effect.bin"}, {"shape", s.effect_map.shape()}}}}},
    };
    io_detail::save_json(dir / kManifestFileName, manifest);
    io_detail::write_f32le(dir / "ref.bin", s.ref_video.data(), s.ref_video.size());
    io_detail::write_f32le(dir / "gt.bin", s.gt_video.data(), s.gt_video.size());
    io_detail::write_f32le(dir / "mask.bin", s.mask.data(), s.mask.size());
    io_detail::write_f32le(dir / "effect.bin", s.effect_map.data(), s.effect_map.size());
}

inline SampleRecord read_sample(const std::filesystem::path& dir) {
    const nlohmann::json manifest = io_detail::load_json(dir / kManifestFileName);
    try {
        const int version = manifest.at("format_version").get<int>();
        if (version != kDatasetFormatVersion) {
            throw ConfigError("unsupported dataset format version " + std::to_string(version));
        }
        if (manifest.at("dtype").get<std::string>() != "f32le") {
            throw ConfigError("unsupported dtype '" + manifest.at("dtype").get<std::string>() + "'");
        }
        SampleRecord s;
        s.spec = spec_from_json(manifest.at("spec"));
        s.text.object_tokens = io_detail::require_ids(manifest.at("text"), "object");
        s.text.effect_tokens = io_detail::require_ids(manifest.at("text"), "effect");
        s.text.scene_tokens = io_detail::require_ids(manifest.at("text"), "scene");

        auto load = [&](const char* name, auto& tensor) {
            const auto& entry = manifest.at("tensors").at(name);
            const auto shape = entry.at("shape").get<std::vector<int>>();
            tensor = std::remove_reference_t<decltype(tensor)>(shape);
            io_detail::read_f32le(dir / entry.at("file").get<std::string>(), tensor.data(), tensor.size());
        };
        load("ref", s.ref_video);
        load("gt", s.gt_video);
        load("mask", s.mask);
        load("effect", s.effect_map);

        const int T = s.spec.frames, H = s.spec.height, W = s.spec.width;
        if (s.ref_video.shape() != std::vector<int>{T, H, W, 3} || !s.gt_video.same_shape(s.ref_video) ||
            s.mask.shape() != std::vector<int>{T, H, W} || !s.effect_map.same_shape(s.mask)) {
            throw ShapeError("sample " + dir.string() + ": tensor shapes disagree with spec dimensions");
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed manifest " + (dir / kManifestFileName).string() + ": " + e.what());
    }
}

inline std::string sample_dir_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%05d", index);
    return buf;
}

// Writes samples into per-sample subdirectories plus a top-level index.
inline void write_dataset(const std::filesystem::path& dir, const std::vector<SampleRecord>& samples) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> names;
    names.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::string name = sample_dir_name(static_cast<int>(i));
        write_sample(dir / name, samples[i]);
        names.push_back(name);
    }
    io_detail::save_json(dir / kIndexFileName, nlohmann::json{{"format_version", kDatasetFormatVersion},
                                                              {"generator_version", kVersion},
                                                              {"count", samples.size()},
                                                              {"samples", names}});
}

inline std::vector<std::string> read_dataset_index(const std::filesystem::path& dir) {
    const nlohmann::json index = io_detail::load_json(dir / kIndexFileName);
    try {
        const int version = index.at("format_version").get<int>();
        if (version != kDatasetFormatVersion) {
            throw ConfigError("unsupported dataset format version " + std::to_string(version));
        }
        auto names = index.at("samples").get<std::vector<std::string>>();
        if (index.at("count").get<std::size_t>() != names.size()) {
            throw ConfigError("dataset index count disagrees with sample list in " + dir.string());
        }
        return names;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed index " + (dir / kIndexFileName).string() + ": " + e.what());
    }
}

inline std::vector<SampleRecord> read_dataset(const std::filesystem::path& dir) {
    std::vector<SampleRecord> samples;
    for (const auto& name : read_dataset_index(dir)) {
        samples.push_back(read_sample(dir / name));
    }
    return samples;
}

}  // namespace generaser
