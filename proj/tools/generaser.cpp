// Command-line entry point: data generation, two-stage training, inference,
// evaluation and guidance sweeps, all driven by one JSON config plus
// override flags. Exit code 0 on success; failures print a machine-readable
// error JSON on stderr.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "generaser/config.hpp"

namespace fs = std::filesystem;
using namespace generaser;

namespace {

struct CliState {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    int stage = 2;
    std::optional<double> w_txt;
    std::optional<double> w_m;
    std::optional<int> steps;
    std::optional<double> boundary;
    std::string expert = "pair";
    std::optional<std::string> sampler;
};

// Flags override config-file values; the resolved config is written next to
// every command's outputs.
void add_common_flags(CLI::App* cmd, CliState& st) {
    cmd->add_option("--config", st.config_path, "JSON config file (defaults used when absent)");
    cmd->add_option("--seed", st.seed, "Global seed override");
    cmd->add_option("--out", st.out, "Output root directory override");
}

RunConfig resolve_config(const CliState& st, const std::string& command) {
    RunConfig cfg;
    if (!st.config_path.empty()) cfg = load_run_config(st.config_path);
    if (st.seed) cfg.seed = *st.seed;
    if (st.out) cfg.out = *st.out;
    if (st.w_txt) cfg.sample.w_txt = *st.w_txt;
    if (st.w_m) cfg.sample.w_m = *st.w_m;
    if (st.boundary) cfg.train.boundary = *st.boundary;
    if (st.sampler) cfg.sample.sampler = sampler_mode_from_string(*st.sampler);
    if (st.steps) {
        if (command == "train-stage1") {
            if (st.expert == "locator" || st.expert == "pair") cfg.train.locator_steps = *st.steps;
            if (st.expert == "preserver" || st.expert == "pair") cfg.train.preserver_steps = *st.steps;
        } else if (command == "train-stage2") {
            cfg.train.stage2_steps = *st.steps;
        } else {
            cfg.sample.steps = *st.steps;
        }
    }
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

std::vector<SampleRecord> load_split(const RunConfig& cfg, const std::string& name) {
    const fs::path dir = fs::path(cfg.out) / "data" / name;
    if (!fs::exists(dir / kIndexFileName)) {
        throw IoError("dataset split '" + name + "' not found at " + dir.string() + " (run gen-data first)");
    }
    return read_dataset(dir);
}

ExpertPair<float> load_pair(const RunConfig& cfg, int stage, const std::string& expert) {
    const fs::path base = fs::path(cfg.out) / (stage == 1 ? "stage1" : "stage2");
    auto load_one = [&](const char* role) {
        const fs::path dir = base / role;
        if (!fs::exists(dir / kManifestFileName)) {
            throw IoError("missing checkpoint " + dir.string() + " (run train-stage" +
                          std::to_string(stage) + " first)");
        }
        return load_checkpoint<float>(dir);
    };
    if (expert == "locator") {
        DenoiserParams<float> p = load_one("locator");
        return ExpertPair<float>(p, p, cfg.train.boundary);
    }
    if (expert == "preserver") {
        DenoiserParams<float> p = load_one("preserver");
        return ExpertPair<float>(p, p, cfg.train.boundary);
    }
    return ExpertPair<float>(load_one("locator"), load_one("preserver"), cfg.train.boundary);
}

std::vector<const SampleRecord*> take_pointers(const std::vector<SampleRecord>& v, std::size_t n) {
    std::vector<const SampleRecord*> out;
    for (std::size_t i = 0; i < v.size() && i < n; ++i) out.push_back(&v[i]);
    return out;
}

int cmd_gen_data(const CliState& st) {
    const RunConfig cfg = resolve_config(st, "gen-data");
    const fs::path data_dir = fs::path(cfg.out) / "data";
    generate_splits(cfg, data_dir);
    write_config_provenance(cfg, data_dir);
    return 0;
}

int cmd_train_stage1(const CliState& st) {
    const RunConfig cfg = resolve_config(st, "train-stage1");
    if (st.expert != "locator" && st.expert != "preserver" && st.expert != "pair") {
        throw ConfigError("--expert must be locator, preserver or pair");
    }
    const std::vector<SampleRecord> aligned = load_split(cfg, "train_aligned");
    std::vector<SampleRecord> misaligned;
    if (cfg.data.train_misaligned > 0) misaligned = load_split(cfg, "train_misaligned");
    const TextEmbedder<float> emb(cfg.model.l_max, cfg.model.d_txt);
    const fs::path out_dir = fs::path(cfg.out) / "stage1";

    if (st.expert == "locator" || st.expert == "pair") {
        DataMix mix;  // diverse mixture: aligned plus misaligned
        mix.sources = {&aligned};
        if (!misaligned.empty()) mix.sources.push_back(&misaligned);
        train_locator(cfg.model, cfg.train, mix, emb, out_dir);
    }
    if (st.expert == "preserver" || st.expert == "pair") {
        DataMix mix;  // pixel-aligned data only
        mix.sources = {&aligned};
        train_preserver(cfg.model, cfg.train, mix, emb, out_dir);
    }
    write_config_provenance(cfg, out_dir);
    return 0;
}

int cmd_train_stage2(const CliState& st) {
    const RunConfig cfg = resolve_config(st, "train-stage2");
    const std::vector<SampleRecord> aligned = load_split(cfg, "train_aligned");
    std::vector<SampleRecord> misaligned;
    if (cfg.data.train_misaligned > 0) misaligned = load_split(cfg, "train_misaligned");
    const TextEmbedder<float> emb(cfg.model.l_max, cfg.model.d_txt);
    ExpertPair<float> pair = load_pair(cfg, 1, "pair");
    DataMix mix;  // fusion is tuned on the mixed dataset
    mix.sources = {&aligned};
    if (!misaligned.empty()) mix.sources.push_back(&misaligned);
    const fs::path out_dir = fs::path(cfg.out) / "stage2";
    train_stage2(pair, cfg.train, mix, emb, out_dir);
    write_config_provenance(cfg, out_dir);
    return 0;
}

int cmd_infer(const CliState& st) {
    const RunConfig cfg = resolve_config(st, "infer");
    const ExpertPair<float> pair = load_pair(cfg, st.stage, st.expert);
    const std::vector<SampleRecord> val = load_split(cfg, "val");
    const TextEmbedder<float> emb(cfg.model.l_max, cfg.model.d_txt);
    Workspace<float> ws(cfg.model);
    const InferOptions opts = cfg.sample.to_infer_options(cfg.seed);
    const fs::path out_dir = fs::path(cfg.out) / "infer";
    fs::create_directories(out_dir);
    const std::size_t n =
        cfg.eval.max_samples == 0 ? val.size() : std::min<std::size_t>(val.size(), cfg.eval.max_samples);
    for (std::size_t i = 0; i < n; ++i) {
        const VideoClip out = infer_sample(pair, val[i], emb, opts, ws, i);
        const fs::path dir = out_dir / sample_dir_name(static_cast<int>(i));
        fs::create_directories(dir);
        io_detail::write_f32le(dir / "output.bin", out.data(), out.size());
        nlohmann::json meta = {{"tensor", {{"file", "output.bin"}, {"shape", out.shape()}}},
                               {"sampler", to_string(opts.mode)},
                               {"metrics", evaluate_sample(val[i], out, static_cast<int>(i)).to_json()}};
        io_detail::save_json(dir / "sample.json", meta);
        log(LogLevel::kInfo, "infer sample %zu/%zu done", i + 1, n);
    }
    write_config_provenance(cfg, out_dir);
    return 0;
}

int cmd_eval(const CliState& st) {
    const RunConfig cfg = resolve_config(st, "eval");
    const ExpertPair<float> pair = load_pair(cfg, st.stage, st.expert);
    const std::vector<SampleRecord> val = load_split(cfg, "val");
    const TextEmbedder<float> emb(cfg.model.l_max, cfg.model.d_txt);
    Workspace<float> ws(cfg.model);
    const InferOptions opts = cfg.sample.to_infer_options(cfg.seed);
    const EvalReport report =
        evaluate_dataset(pair, val, emb, opts, ws, static_cast<std::size_t>(cfg.eval.max_samples));
    const fs::path out_dir = fs::path(cfg.out) / "eval";
    fs::create_directories(out_dir);
    io_detail::save_json(out_dir / "report.json", report.to_json());
    write_config_provenance(cfg, out_dir);
    std::printf("%s\n", report.to_json()["aggregate"].dump(2).c_str());
    return 0;
}

int cmd_sweep(const CliState& st) {
    const RunConfig cfg = resolve_config(st, "sweep");
    const ExpertPair<float> pair = load_pair(cfg, st.stage, st.expert);
    const std::vector<SampleRecord> val = load_split(cfg, "val");
    const TextEmbedder<float> emb(cfg.model.l_max, cfg.model.d_txt);
    Workspace<float> ws(cfg.model);
    const auto eval_set = take_pointers(val, static_cast<std::size_t>(cfg.eval.sweep_samples));
    const Schedule sched = Schedule::uniform(cfg.sample.steps);
    const SweepTable table = sweep_guidance(pair, eval_set, emb, sched, ws, cfg.seed, cfg.eval.grid,
                                            cfg.eval.grid, cfg.sample.norm_scope);

    // learnable-fusion sampler on the same draws, for side-by-side reporting
    double ld_sum = 0.0;
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
        Rng rng = stream_rng(cfg.seed, 0x535750u, i);
        ConditionBundle<float> full = make_full_bundle(*eval_set[i], emb);
        full.x_t = gaussian_tensor<float>(eval_set[i]->gt_video.shape(), rng);
        full.t = sched.t.front();
        BundleTriple<float> tr = make_bundle_triple(full, emb);
        Tensor<float> x = sample_ldcfg(pair, tr, sched, ws);
        for (std::size_t k = 0; k < x.size(); ++k) x[k] = std::clamp(x[k], 0.0f, 1.0f);
        ld_sum += psnr(x, eval_set[i]->gt_video);
    }
    const double ldcfg_mean = ld_sum / static_cast<double>(eval_set.size());

    const fs::path out_dir = fs::path(cfg.out) / "sweep";
    fs::create_directories(out_dir);
    std::ofstream csv(out_dir / "sweep.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write " + (out_dir / "sweep.csv").string());
    csv << table.to_csv();
    csv.close();
    nlohmann::json j = table.to_json();
    j["ldcfg_mean_psnr"] = ldcfg_mean;
    io_detail::save_json(out_dir / "sweep.json", j);
    write_config_provenance(cfg, out_dir);
    std::printf("grid mean %.4f dB, grid max %.4f dB (w_txt=%g, w_m=%g), ldcfg mean %.4f dB\n",
                table.grid_mean, table.grid_max, table.best.w_txt, table.best.w_m, ldcfg_mean);
    return 0;
}

int error_json(const char* type, const std::string& message) {
    const nlohmann::json j = {{"error", {{"type", type}, {"message", message}}}};
    std::fprintf(stderr, "%s\n", j.dump().c_str());
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"generaser: video object-and-effect removal toy pipeline"};
    app.require_subcommand(1);
    CliState st;

    CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset splits");
    add_common_flags(gen, st);

    CLI::App* tr1 = app.add_subcommand("train-stage1", "Train the noise-level experts");
    add_common_flags(tr1, st);
    tr1->add_option("--expert", st.expert, "locator, preserver or pair (default pair)");
    tr1->add_option("--steps", st.steps, "Step budget override for the selected expert(s)");
    tr1->add_option("--boundary", st.boundary, "Expert noise-level boundary (default 0.875)");

    CLI::App* tr2 = app.add_subcommand("train-stage2", "Train the guidance-fusion layers");
    add_common_flags(tr2, st);
    tr2->add_option("--steps", st.steps, "Stage-2 step budget override");
    tr2->add_option("--boundary", st.boundary, "Expert noise-level boundary (default 0.875)");

    auto add_sample_flags = [&](CLI::App* cmd) {
        add_common_flags(cmd, st);
        cmd->add_option("--stage", st.stage, "Checkpoint stage to load: 1 or 2 (default 2)")
            ->check(CLI::IsMember({1, 2}));
        cmd->add_option("--w-txt", st.w_txt, "Text guidance scale");
        cmd->add_option("--w-m", st.w_m, "Mask guidance scale");
        cmd->add_option("--steps", st.steps, "Sampling steps (default 40)");
        cmd->add_option("--boundary", st.boundary, "Expert noise-level boundary (default 0.875)");
        cmd->add_option("--expert", st.expert, "locator, preserver or pair (default pair)");
    };
    CLI::App* inf = app.add_subcommand("infer", "Sample removals for validation records");
    add_sample_flags(inf);
    inf->add_option("--sampler", st.sampler, "mccfg, ldcfg, conditional-only or mask-only");
    CLI::App* ev = app.add_subcommand("eval", "Evaluate the pipeline and write a report");
    add_sample_flags(ev);
    ev->add_option("--sampler", st.sampler, "mccfg, ldcfg, conditional-only or mask-only");
    CLI::App* sw = app.add_subcommand("sweep", "Run the guidance-scale grid sweep");
    add_sample_flags(sw);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(st);
        if (tr1->parsed()) return cmd_train_stage1(st);
        if (tr2->parsed()) return cmd_train_stage2(st);
        if (inf->parsed()) return cmd_infer(st);
        if (ev->parsed()) return cmd_eval(st);
        if (sw->parsed()) return cmd_sweep(st);
    } catch (const ConfigError& e) {
        return error_json("config", e.what());
    } catch (const ShapeError& e) {
        return error_json("shape", e.what());
    } catch (const IoError& e) {
        return error_json("io", e.what());
    } catch (const Error& e) {
        return error_json("runtime", e.what());
    } catch (const std::exception& e) {
        return error_json("internal", e.what());
    }
    return 0;
}
