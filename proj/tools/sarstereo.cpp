// Command-line front end: one subcommand per pipeline stage.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sarstereo/errors.h"
#include "sarstereo/gtruth.h"
#include "sarstereo/pipeline.h"
#include "sarstereo/synth.h"

namespace fs = std::filesystem;
using namespace sarstereo;
using nlohmann::json;

namespace {

const auto kStart = std::chrono::steady_clock::now();

void emit(const std::string& level, const std::string& line)
{
    const double t =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - kStart).count();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", t);
    std::cerr << pipeline::format_log({{"t", buf}, {"level", level}}) << ' ' << line << '\n';
}

void info(const std::vector<std::pair<std::string, std::string>>& fields)
{
    emit("info", pipeline::format_log(fields));
}

// Flags shared by every pipeline stage; unset flags leave the config alone.
struct StageFlags {
    std::optional<std::string> config;
    std::optional<std::string> ref, src, dsm, out, matcher, aggregator;
    std::optional<long> patch_height, patch_width;
    std::optional<double> overlap, confidence_min, residual_max, cell_size, timeout,
            color_limit, peak_threshold, spectral_band;
    std::optional<int> sample_stride, jobs, block_size, pyramid_levels, grid_stride;
    std::optional<std::uint64_t> seed;
    std::optional<std::vector<double>> thresholds;
    std::optional<bool> calibrate, write_points;
};

void add_stage_flags(CLI::App* app, StageFlags& f)
{
    app->add_option("-c,--config", f.config, "JSON pipeline config; flags override it");
    app->add_option("--ref", f.ref, "reference image manifest");
    app->add_option("--src", f.src, "source image manifest");
    app->add_option("--dsm", f.dsm, "DSM manifest (ground truth)");
    app->add_option("-o,--out", f.out, "output directory");
    app->add_option("--patch-height", f.patch_height, "patch rows (560)");
    app->add_option("--patch-width", f.patch_width, "patch columns (560)");
    app->add_option("--overlap", f.overlap, "overlap fraction between patches (1/3)");
    app->add_option("--matcher", f.matcher, "poc | truth | external:<command>");
    app->add_option("--confidence-min", f.confidence_min, "minimum confidence (0.1)");
    app->add_option("--residual-max", f.residual_max, "maximum triangulation residual, m (5)");
    app->add_option("--cell-size", f.cell_size, "elevation map cell size, m (2)");
    app->add_option("--aggregator", f.aggregator, "median | mean");
    app->add_option("--sample-stride", f.sample_stride, "triangulate every n-th pixel (1)");
    app->add_option("--block-size", f.block_size, "POC block size (32)");
    app->add_option("--pyramid-levels", f.pyramid_levels, "POC pyramid levels (3)");
    app->add_option("--grid-stride", f.grid_stride, "POC grid stride, px (8)");
    app->add_option("--spectral-band", f.spectral_band, "POC band fraction (0.5)");
    app->add_option("--peak-threshold", f.peak_threshold, "POC peak threshold (0.1)");
    app->add_option("--thresholds", f.thresholds, "error thresholds, m (0.5,1,2,4,8)")
            ->delimiter(',');
    app->add_option("-j,--jobs", f.jobs, "parallel patches / outstanding requests (1)");
    app->add_option("--seed", f.seed, "seed recorded in the run report (1)");
    app->add_option("--timeout", f.timeout, "external matcher timeout per request, s (600)");
    app->add_option("--color-limit", f.color_limit, "error map color saturation, m (5)");
    app->add_flag("--calibrate,!--no-calibrate", f.calibrate, "align the map to the DSM");
    app->add_flag("--write-points,!--no-write-points", f.write_points,
                  "write per-patch point files in run-all");
}

pipeline::PipelineConfig resolve_config(const StageFlags& f)
{
    pipeline::PipelineConfig c;
    if (f.config)
        c = pipeline::load_config(*f.config, c);
    if (f.ref) c.ref_manifest = *f.ref;
    if (f.src) c.src_manifest = *f.src;
    if (f.dsm) c.dsm_manifest = *f.dsm;
    if (f.out) c.out_dir = *f.out;
    if (f.patch_height) c.patch_height = *f.patch_height;
    if (f.patch_width) c.patch_width = *f.patch_width;
    if (f.overlap) c.overlap = *f.overlap;
    if (f.matcher) c.matcher = pipeline::MatcherSpec::parse(*f.matcher);
    if (f.confidence_min) c.reconstruct.confidence_min = *f.confidence_min;
    if (f.residual_max) c.reconstruct.residual_max = *f.residual_max;
    if (f.cell_size) c.reconstruct.cell_size = *f.cell_size;
    if (f.aggregator)
        c = pipeline::config_from_json({{"reconstruct", {{"aggregator", *f.aggregator}}}}, c);
    if (f.sample_stride) c.reconstruct.sample_stride = *f.sample_stride;
    if (f.block_size) c.poc.block_size = *f.block_size;
    if (f.pyramid_levels) c.poc.pyramid_levels = *f.pyramid_levels;
    if (f.grid_stride) c.poc.grid_stride = *f.grid_stride;
    if (f.spectral_band) c.poc.spectral_band = *f.spectral_band;
    if (f.peak_threshold) c.poc.peak_accept_threshold = *f.peak_threshold;
    if (f.thresholds) c.thresholds = *f.thresholds;
    if (f.jobs) c.jobs = *f.jobs;
    if (f.seed) c.seed = *f.seed;
    if (f.timeout) c.timeout_s = *f.timeout;
    if (f.color_limit) c.color_limit = *f.color_limit;
    if (f.calibrate) c.calibrate = *f.calibrate;
    if (f.write_points) c.write_points = *f.write_points;
    c.validate();
    return c;
}

int run_stage(const std::string& stage, const StageFlags& flags)
{
    auto pipe = pipeline::Pipeline(resolve_config(flags),
                                   [](const std::string& line) { emit("info", line); });
    try {
        if (stage == "tile")
            pipe.tile();
        else if (stage == "match")
            pipe.match();
        else if (stage == "triangulate")
            pipe.triangulate();
        else if (stage == "fuse")
            pipe.fuse();
        else if (stage == "calibrate")
            pipe.calibrate();
        else if (stage == "eval")
            std::cout << evalm::format_table({{pipe.config().matcher.str(), pipe.eval()}});
        else if (stage == "render")
            pipe.render();
        else if (stage == "run-all")
            std::cout << evalm::format_table({{pipe.config().matcher.str(), pipe.run_all()}});
    } catch (const Error& e) {
        if (stage != "run-all")
            pipe.record_failure(stage, e);
        throw;
    }
    return 0;
}

struct SynthFlags {
    std::string scene;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<bool> speckle;
};

int run_synth(const SynthFlags& f)
{
    synth::SceneSpec spec = pipeline::load_scene_spec(f.scene);
    if (f.seed)
        spec.texture_seed = *f.seed;
    if (f.speckle)
        spec.speckle = *f.speckle;
    spec.validate();
    info({{"stage", "synth"}, {"event", "start"}, {"seed", std::to_string(spec.texture_seed)}});
    const auto scene = synth::render_pair(spec);
    const json j = pipeline::write_scene(scene, spec, f.out);
    // Ready-to-run pipeline config next to the scene.
    const json cfg = {{"ref", "ref/manifest.json"},
                      {"src", "src/manifest.json"},
                      {"dsm", "dsm/dsm.json"},
                      {"out", "run"},
                      {"seed", spec.texture_seed}};
    raster::write_text(fs::path(f.out) / "pipeline.json", cfg.dump(2) + "\n");
    const auto& g = j.at("geometry");
    info({{"stage", "synth"},
          {"event", "done"},
          {"intersection_angle_deg", g.at("intersection_angle_deg").dump()},
          {"ref_size", g.at("ref_size").dump()},
          {"src_size", g.at("src_size").dump()}});
    return 0;
}

struct DatasetFlags {
    std::string pairs;
    std::string dsm;
    std::string out;
    long patch_height = 560;
    long patch_width = 560;
    double overlap = 1.0 / 3.0;
};

// pairs file: {"pairs": {"<name>": {"ref": m, "src": m, "split": s, "area": a}}}
int run_dataset(const DatasetFlags& f)
{
    json j;
    try {
        j = json::parse(raster::read_text(f.pairs));
    } catch (const json::exception& e) {
        fail(ErrorCode::ConfigError, std::string("invalid pairs file: ") + e.what(), "pairs");
    }
    const fs::path base = fs::path(f.pairs).parent_path();
    const auto split = gtruth::split_from_json(j);
    std::vector<gtruth::PairInput> inputs;
    try {
        for (const auto& [name, e] : j.at("pairs").items()) {
            const auto resolve = [&](const std::string& key) {
                fs::path p = e.at(key).get<std::string>();
                return p.is_relative() ? base / p : p;
            };
            inputs.push_back({name, raster::load_sar_image(resolve("ref")),
                              raster::load_sar_image(resolve("src"))});
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::ConfigError, std::string("pairs file: ") + e.what(), "pairs");
    }
    gtruth::validate_split([&] {
        std::vector<std::string> names;
        for (const auto& p : inputs)
            names.push_back(p.name);
        return names;
    }(), split);
    const auto dsm = raster::read_georaster(f.dsm);
    const auto rep = gtruth::build_dataset(inputs, dsm, {f.patch_height, f.patch_width, f.overlap},
                                           split, f.out);
    std::vector<std::pair<std::string, std::string>> fields{{"stage", "dataset"},
                                                            {"event", "done"}};
    for (const auto& [s, n] : rep.patches_per_split)
        fields.emplace_back(s, std::to_string(n));
    fields.emplace_back("unmatchable", std::to_string(rep.unmatchable));
    fields.emplace_back("elevation_converged", std::to_string(rep.elevation.converged));
    fields.emplace_back("elevation_pixels", std::to_string(rep.elevation.pixels));
    info(fields);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Stereo radargrammetry: slant-range SAR pairs to elevation maps"};
    app.require_subcommand(1);

    SynthFlags synth_flags;
    auto* synth_cmd = app.add_subcommand("synth", "render a synthetic scene and its DSM");
    synth_cmd->add_option("--scene", synth_flags.scene, "scene spec JSON (default scene if absent)")
            ->check(CLI::ExistingFile);
    synth_cmd->add_option("-o,--out", synth_flags.out, "output directory")->required();
    synth_cmd->add_option("--seed", synth_flags.seed, "texture seed");
    synth_cmd->add_flag("--speckle,!--no-speckle", synth_flags.speckle, "multiplicative speckle");

    DatasetFlags ds_flags;
    auto* ds_cmd = app.add_subcommand("dataset", "build a training dataset with ground truth");
    ds_cmd->add_option("--pairs", ds_flags.pairs, "pairs and split JSON")->required();
    ds_cmd->add_option("--dsm", ds_flags.dsm, "DSM manifest")->required();
    ds_cmd->add_option("-o,--out", ds_flags.out, "dataset directory")->required();
    ds_cmd->add_option("--patch-height", ds_flags.patch_height, "patch rows (560)");
    ds_cmd->add_option("--patch-width", ds_flags.patch_width, "patch columns (560)");
    ds_cmd->add_option("--overlap", ds_flags.overlap, "overlap fraction (1/3)");

    const std::vector<std::pair<std::string, std::string>> stages{
            {"tile", "plan patches and locate them in the source image"},
            {"match", "dense correspondence per patch pair"},
            {"triangulate", "flows to 3D points"},
            {"fuse", "points to an elevation map"},
            {"calibrate", "align the map to the DSM by translation"},
            {"eval", "error statistics against the DSM"},
            {"render", "signed error map image"},
            {"run-all", "every stage in order"}};
    std::vector<StageFlags> stage_flags(stages.size());
    std::vector<CLI::App*> stage_cmds;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        auto* cmd = app.add_subcommand(stages[i].first, stages[i].second);
        add_stage_flags(cmd, stage_flags[i]);
        stage_cmds.push_back(cmd);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*synth_cmd)
            return run_synth(synth_flags);
        if (*ds_cmd)
            return run_dataset(ds_flags);
        for (std::size_t i = 0; i < stages.size(); ++i)
            if (*stage_cmds[i])
                return run_stage(stages[i].first, stage_flags[i]);
    } catch (const Error& e) {
        emit("error", pipeline::format_log({{"category", std::string(category(e.code()))},
                                            {"code", std::string(to_string(e.code()))},
                                            {"field", e.field()},
                                            {"message", e.message()}}));
        return exit_code(e.code());
    } catch (const std::exception& e) {
        emit("error", pipeline::format_log({{"category", "other"}, {"message", e.what()}}));
        return 1;
    }
    return 1;
}
