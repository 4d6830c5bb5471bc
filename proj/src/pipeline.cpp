#include "sarstereo/pipeline.h"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "sarstereo/bridge.h"

namespace sarstereo::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

MatcherSpec MatcherSpec::parse(const std::string& text)
{
    static const std::string kExternal = "external:";
    if (text == "poc")
        return {MatcherKind::Poc, {}};
    if (text == "truth")
        return {MatcherKind::Truth, {}};
    if (text.rfind(kExternal, 0) == 0) {
        std::string cmd = text.substr(kExternal.size());
        if (cmd.empty())
            fail(ErrorCode::ConfigError, "external matcher needs a command", "matcher");
        return {MatcherKind::External, std::move(cmd)};
    }
    fail(ErrorCode::ConfigError,
         "unknown matcher '" + text + "' (expected poc, truth or external:<command>)", "matcher");
}

std::string MatcherSpec::str() const
{
    switch (kind) {
    case MatcherKind::Poc: return "poc";
    case MatcherKind::Truth: return "truth";
    case MatcherKind::External: return "external:" + command;
    }
    return "poc";
}

void PipelineConfig::validate() const
{
    const auto bad = [](const std::string& field, const std::string& msg) {
        fail(ErrorCode::ConfigError, field + ": " + msg, field);
    };
    if (out_dir.empty())
        bad("out", "output directory not set");
    if (patch_height < 1)
        bad("patch.height", "must be positive");
    if (patch_width < 1)
        bad("patch.width", "must be positive");
    if (!(overlap >= 0.0 && overlap < 1.0))
        bad("patch.overlap", "must lie in [0, 1)");
    if (thresholds.empty())
        bad("thresholds", "at least one threshold is required");
    for (double t : thresholds)
        if (!(t >= 0.0 && std::isfinite(t)))
            bad("thresholds", "thresholds must be finite and non-negative");
    if (jobs < 1)
        bad("jobs", "must be at least 1");
    if (!(timeout_s > 0.0))
        bad("timeout_s", "must be positive");
    if (!(color_limit > 0.0))
        bad("color_limit", "must be positive");
    try {
        reconstruct.validate();
    } catch (const Error& e) {
        bad("reconstruct." + e.field(), e.message());
    }
    try {
        poc.validate();
    } catch (const Error& e) {
        bad("poc." + e.field(), e.message());
    }
}

namespace {

const char* aggregator_name(reconstruct::Aggregator a)
{
    return a == reconstruct::Aggregator::Median ? "median" : "mean";
}

reconstruct::Aggregator aggregator_from(const std::string& s)
{
    if (s == "median")
        return reconstruct::Aggregator::Median;
    if (s == "mean")
        return reconstruct::Aggregator::Mean;
    fail(ErrorCode::ConfigError, "reconstruct.aggregator: expected median or mean",
         "reconstruct.aggregator");
}

template <typename T>
T get_field(const json& j, const std::string& field)
{
    try {
        return j.get<T>();
    } catch (const json::exception& e) {
        fail(ErrorCode::ConfigError, field + ": " + e.what(), field);
    }
}

void check_object(const json& j, const std::string& field)
{
    if (!j.is_object())
        fail(ErrorCode::ConfigError, field + ": expected an object", field);
}

fs::path resolve(const fs::path& p, const fs::path& base)
{
    return p.is_relative() && !base.empty() ? base / p : p;
}

} // namespace

json to_json(const PipelineConfig& c)
{
    return {{"ref", c.ref_manifest.string()},
            {"src", c.src_manifest.string()},
            {"dsm", c.dsm_manifest.string()},
            {"out", c.out_dir.string()},
            {"patch", {{"height", c.patch_height}, {"width", c.patch_width}, {"overlap", c.overlap}}},
            {"matcher", c.matcher.str()},
            {"reconstruct",
             {{"confidence_min", c.reconstruct.confidence_min},
              {"residual_max", c.reconstruct.residual_max},
              {"cell_size", c.reconstruct.cell_size},
              {"aggregator", aggregator_name(c.reconstruct.aggregator)},
              {"sample_stride", c.reconstruct.sample_stride}}},
            {"poc",
             {{"block_size", c.poc.block_size},
              {"pyramid_levels", c.poc.pyramid_levels},
              {"grid_stride", c.poc.grid_stride},
              {"spectral_band", c.poc.spectral_band},
              {"peak_accept_threshold", c.poc.peak_accept_threshold}}},
            {"thresholds", c.thresholds},
            {"jobs", c.jobs},
            {"seed", c.seed},
            {"calibrate", c.calibrate},
            {"timeout_s", c.timeout_s},
            {"write_points", c.write_points},
            {"color_limit", c.color_limit}};
}

PipelineConfig config_from_json(const json& j, PipelineConfig c, const fs::path& base_dir)
{
    check_object(j, "config");
    for (const auto& [key, v] : j.items()) {
        if (key == "ref")
            c.ref_manifest = resolve(get_field<std::string>(v, key), base_dir);
        else if (key == "src")
            c.src_manifest = resolve(get_field<std::string>(v, key), base_dir);
        else if (key == "dsm")
            c.dsm_manifest = resolve(get_field<std::string>(v, key), base_dir);
        else if (key == "out")
            c.out_dir = resolve(get_field<std::string>(v, key), base_dir);
        else if (key == "patch") {
            check_object(v, key);
            for (const auto& [k, x] : v.items()) {
                const std::string f = "patch." + k;
                if (k == "height")
                    c.patch_height = get_field<long>(x, f);
                else if (k == "width")
                    c.patch_width = get_field<long>(x, f);
                else if (k == "overlap")
                    c.overlap = get_field<double>(x, f);
                else
                    fail(ErrorCode::ConfigError, "unknown key " + f, f);
            }
        } else if (key == "matcher")
            c.matcher = MatcherSpec::parse(get_field<std::string>(v, key));
        else if (key == "reconstruct") {
            check_object(v, key);
            for (const auto& [k, x] : v.items()) {
                const std::string f = "reconstruct." + k;
                if (k == "confidence_min")
                    c.reconstruct.confidence_min = get_field<double>(x, f);
                else if (k == "residual_max")
                    c.reconstruct.residual_max = get_field<double>(x, f);
                else if (k == "cell_size")
                    c.reconstruct.cell_size = get_field<double>(x, f);
                else if (k == "aggregator")
                    c.reconstruct.aggregator = aggregator_from(get_field<std::string>(x, f));
                else if (k == "sample_stride")
                    c.reconstruct.sample_stride = get_field<int>(x, f);
                else
                    fail(ErrorCode::ConfigError, "unknown key " + f, f);
            }
        } else if (key == "poc") {
            check_object(v, key);
            for (const auto& [k, x] : v.items()) {
                const std::string f = "poc." + k;
                if (k == "block_size")
                    c.poc.block_size = get_field<int>(x, f);
                else if (k == "pyramid_levels")
                    c.poc.pyramid_levels = get_field<int>(x, f);
                else if (k == "grid_stride")
                    c.poc.grid_stride = get_field<int>(x, f);
                else if (k == "spectral_band")
                    c.poc.spectral_band = get_field<double>(x, f);
                else if (k == "peak_accept_threshold")
                    c.poc.peak_accept_threshold = get_field<double>(x, f);
                else
                    fail(ErrorCode::ConfigError, "unknown key " + f, f);
            }
        } else if (key == "thresholds")
            c.thresholds = get_field<std::vector<double>>(v, key);
        else if (key == "jobs")
            c.jobs = get_field<int>(v, key);
        else if (key == "seed")
            c.seed = get_field<std::uint64_t>(v, key);
        else if (key == "calibrate")
            c.calibrate = get_field<bool>(v, key);
        else if (key == "timeout_s")
            c.timeout_s = get_field<double>(v, key);
        else if (key == "write_points")
            c.write_points = get_field<bool>(v, key);
        else if (key == "color_limit")
            c.color_limit = get_field<double>(v, key);
        else
            fail(ErrorCode::ConfigError, "unknown key " + key, key);
    }
    return c;
}

PipelineConfig load_config(const fs::path& path, PipelineConfig base)
{
    json j;
    try {
        j = json::parse(raster::read_text(path));
    } catch (const json::exception& e) {
        fail(ErrorCode::ConfigError, "invalid JSON in " + path.string() + ": " + e.what(),
             path.string());
    }
    return config_from_json(j, std::move(base), path.parent_path());
}

std::string format_log(const std::vector<std::pair<std::string, std::string>>& fields)
{
    std::string out;
    for (const auto& [k, v] : fields) {
        if (!out.empty())
            out += ' ';
        out += k;
        out += '=';
        const bool quote = v.empty() || v.find_first_of(" \t\"=\\\n") != std::string::npos;
        if (!quote) {
            out += v;
            continue;
        }
        out += '"';
        for (char ch : v) {
            if (ch == '"' || ch == '\\')
                out += '\\';
            out += ch == '\n' ? ' ' : ch;
        }
        out += '"';
    }
    return out;
}

json to_json(const TilePlan& t)
{
    json patches = json::array();
    for (const auto& p : t.patches)
        patches.push_back({{"id", p.id},
                           {"row", p.spec.row},
                           {"col", p.spec.col},
                           {"height", p.spec.height},
                           {"width", p.spec.width},
                           {"src_row", p.src.row},
                           {"src_col", p.src.col},
                           {"clamp_row", p.src.clamp_row},
                           {"clamp_col", p.src.clamp_col},
                           {"out_of_bounds", p.src.out_of_bounds},
                           {"unmatchable", p.src.unmatchable},
                           {"reason", p.src.reason}});
    return {{"ref_image_id", t.ref_image_id},
            {"src_image_id", t.src_image_id},
            {"plan", tiling::to_json(t.plan)},
            {"patches", std::move(patches)}};
}

TilePlan tile_plan_from_json(const json& j)
{
    TilePlan t;
    try {
        t.ref_image_id = j.at("ref_image_id").get<std::string>();
        t.src_image_id = j.at("src_image_id").get<std::string>();
        t.plan = tiling::plan_from_json(j.at("plan"));
        for (const json& p : j.at("patches")) {
            PlannedPatch pp;
            pp.id = p.at("id").get<std::string>();
            pp.spec = {p.at("row").get<long>(), p.at("col").get<long>(),
                       p.at("height").get<long>(), p.at("width").get<long>()};
            pp.src.row = p.at("src_row").get<long>();
            pp.src.col = p.at("src_col").get<long>();
            pp.src.clamp_row = p.at("clamp_row").get<long>();
            pp.src.clamp_col = p.at("clamp_col").get<long>();
            pp.src.out_of_bounds = p.at("out_of_bounds").get<bool>();
            pp.src.unmatchable = p.at("unmatchable").get<bool>();
            pp.src.reason = p.at("reason").get<std::string>();
            t.patches.push_back(std::move(pp));
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::MissingField, std::string("invalid tile plan: ") + e.what(), "plan.json");
    }
    return t;
}

namespace {

class Stopwatch {
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

json read_json(const fs::path& path)
{
    try {
        return json::parse(raster::read_text(path));
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedHeader, "invalid JSON in " + path.string() + ": " + e.what(),
             path.string());
    }
}

void write_json(const fs::path& path, const json& j)
{
    raster::write_text(path, j.dump(2) + "\n");
}

void make_dirs(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        fail(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message(),
             dir.string());
}

void reset_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::remove_all(dir, ec);
    make_dirs(dir);
}

const fs::path& require_path(const fs::path& p, const std::string& field)
{
    if (p.empty())
        fail(ErrorCode::ConfigError, field + ": path not set", field);
    if (!fs::exists(p))
        fail(ErrorCode::IoFailure, field + ": " + p.string() + " does not exist", field);
    return p;
}

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

json point_report_json(const reconstruct::PointReport& r)
{
    return {{"points_in", r.points_in},
            {"kept", r.kept},
            {"dropped",
             {{"below_confidence", r.below_confidence},
              {"triangulation_failed", r.triangulation_failed},
              {"residual_exceeded", r.residual_exceeded}}}};
}

} // namespace

Pipeline::Pipeline(PipelineConfig config, LogSink log)
    : config_(std::move(config)), log_(std::move(log))
{
    config_.validate();
    make_dirs(config_.out_dir);
    const fs::path report_path = path("run_report.json");
    if (fs::exists(report_path)) {
        try {
            report_ = json::parse(raster::read_text(report_path));
        } catch (const json::exception&) {
            report_ = json::object();
        }
    }
    if (!report_.is_object())
        report_ = json::object();
    report_["version"] = 1;
    report_["config"] = to_json(config_);
    report_["seed"] = config_.seed;
    if (!report_.contains("stages"))
        report_["stages"] = json::object();
    if (!report_.contains("timings"))
        report_["timings"] = json::object();
}

void Pipeline::log(const std::string& stage, const std::string& event,
                   std::vector<std::pair<std::string, std::string>> fields) const
{
    if (!log_)
        return;
    fields.insert(fields.begin(), {{"stage", stage}, {"event", event}});
    log_(format_log(fields));
}

void Pipeline::save_report() const
{
    write_json(path("run_report.json"), report_);
}

void Pipeline::finish_stage(const std::string& stage, json summary, double seconds)
{
    report_["stages"][stage] = std::move(summary);
    report_["timings"][stage] = seconds;
    if (report_.contains("errors")) {
        report_["errors"].erase(stage);
        if (report_["errors"].empty())
            report_.erase("errors");
    }
    save_report();
    log(stage, "done", {{"seconds", fmt(seconds)}});
}

void Pipeline::record_failure(const std::string& stage, const Error& e)
{
    report_["errors"][stage] = {
            {"code", std::string(to_string(e.code()))}, {"message", e.what()}, {"field", e.field()}};
    save_report();
}

raster::GeoRaster Pipeline::load_dsm() const
{
    return raster::read_georaster(require_path(config_.dsm_manifest, "dsm"));
}

fs::path Pipeline::evaluated_map() const
{
    const fs::path aligned = path("map_aligned.json");
    return config_.calibrate && fs::exists(aligned) ? aligned : path("map.json");
}

TilePlan Pipeline::tile()
{
    Stopwatch sw;
    log("tile", "start");
    const auto ref = raster::load_sar_image(require_path(config_.ref_manifest, "ref"));
    const auto src = raster::read_manifest(require_path(config_.src_manifest, "src"));
    TilePlan t;
    t.plan = tiling::plan_patches(ref, config_.patch_height, config_.patch_width, config_.overlap);
    t.ref_image_id = ref.id;
    t.src_image_id = src.id;
    std::size_t unmatchable = 0, out_of_bounds = 0;
    for (const auto& spec : t.plan.patches) {
        PlannedPatch p{tiling::patch_id(spec), spec, tiling::localize_src(ref.model, src.model, spec)};
        unmatchable += p.src.unmatchable;
        out_of_bounds += p.src.out_of_bounds;
        t.patches.push_back(std::move(p));
    }
    write_json(path("plan.json"), to_json(t));
    finish_stage("tile",
                 {{"patches", t.patches.size()},
                  {"unmatchable", unmatchable},
                  {"out_of_bounds", out_of_bounds},
                  {"stride", {t.plan.stride_rows, t.plan.stride_cols}}},
                 sw.seconds());
    return t;
}

void Pipeline::match()
{
    Stopwatch sw;
    log("match", "start", {{"matcher", config_.matcher.str()}});
    const TilePlan t = tile_plan_from_json(read_json(path("plan.json")));
    const auto ref = raster::load_sar_image(require_path(config_.ref_manifest, "ref"));
    const auto src = raster::load_sar_image(require_path(config_.src_manifest, "src"));

    std::vector<const PlannedPatch*> todo;
    for (const auto& p : t.patches)
        if (!p.src.unmatchable)
            todo.push_back(&p);
    std::vector<tiling::PatchPair> pairs;
    pairs.reserve(todo.size());
    for (const auto* p : todo)
        pairs.push_back(tiling::extract_pair(ref, src, p->spec, p->src));

    const fs::path flows = path("flows");
    reset_dir(flows);
    std::vector<std::optional<Error>> errors(todo.size());
    std::vector<std::optional<FlowGrid>> results(todo.size());

    switch (config_.matcher.kind) {
    case MatcherKind::Poc:
#pragma omp parallel for schedule(dynamic, 1) num_threads(config_.jobs)
        for (std::size_t i = 0; i < todo.size(); ++i) {
            try {
                results[i] = poc::match_patch(pairs[i], config_.poc);
            } catch (const Error& e) {
                errors[i] = e;
            }
        }
        break;
    case MatcherKind::Truth: {
        const auto dsm = load_dsm();
        for (std::size_t i = 0; i < todo.size(); ++i) {
            try {
                const auto& p = *todo[i];
                const auto elev =
                        gtruth::elevation_in_image_geometry(dsm, ref.model, p.spec, nullptr);
                results[i] = gtruth::disparity_groundtruth(elev, p.spec, p.src.row, p.src.col,
                                                           ref.model, src.model)
                                     .to_flow();
            } catch (const Error& e) {
                errors[i] = e;
            }
        }
        break;
    }
    case MatcherKind::External: {
        std::vector<bridge::MatchJob> jobs;
        for (std::size_t i = 0; i < todo.size(); ++i)
            jobs.push_back({todo[i]->id, &pairs[i], t.ref_image_id, t.src_image_id});
        bridge::MatcherOptions opts;
        opts.timeout_s = config_.timeout_s;
        auto run = bridge::run_external_matcher(config_.matcher.command, jobs,
                                                std::size_t(config_.jobs), opts);
        for (std::size_t i = 0; i < todo.size(); ++i) {
            auto& r = run.results[i];
            if (r.ok())
                results[i] = std::move(*r.flow);
            else
                errors[i] = Error(*r.error, r.message, todo[i]->id);
        }
        break;
    }
    }

    std::size_t matched = 0, matched_pixels = 0, pixels = 0;
    double conf_sum = 0.0;
    json failures = json::array();
    for (std::size_t i = 0; i < todo.size(); ++i) {
        if (errors[i]) {
            failures.push_back({{"id", todo[i]->id},
                                {"code", std::string(to_string(errors[i]->code()))},
                                {"message", errors[i]->what()}});
            log("match", "patch_failed",
                {{"id", todo[i]->id},
                 {"code", std::string(to_string(errors[i]->code()))},
                 {"message", errors[i]->what()}});
            continue;
        }
        const FlowGrid& f = *results[i];
        raster::write_raster(f.to_raster(), flows / (todo[i]->id + ".srgr"));
        ++matched;
        for (float c : f.confidence.values()) {
            ++pixels;
            conf_sum += c;
            matched_pixels += c > 0.0f;
        }
    }
    if (matched == 0 && !todo.empty())
        throw *errors.front();

    finish_stage("match",
                 {{"matcher", config_.matcher.str()},
                  {"patches", todo.size()},
                  {"matched", matched},
                  {"failed", todo.size() - matched},
                  {"failures", std::move(failures)},
                  {"matched_pixels", matched_pixels},
                  {"mean_confidence", pixels ? conf_sum / double(pixels) : 0.0}},
                 sw.seconds());
}

void Pipeline::triangulate()
{
    Stopwatch sw;
    log("triangulate", "start");
    const TilePlan t = tile_plan_from_json(read_json(path("plan.json")));
    const auto ref = raster::read_manifest(require_path(config_.ref_manifest, "ref"));
    const auto src = raster::read_manifest(require_path(config_.src_manifest, "src"));
    const bool write = config_.write_points || !keep_points_in_memory_;
    const fs::path points = path("points");
    if (write)
        reset_dir(points);

    reconstruct::PointReport total;
    std::size_t missing = 0, used = 0;
    std::vector<reconstruct::PointCloud> clouds;
    for (const auto& p : t.patches) {
        if (p.src.unmatchable)
            continue;
        const fs::path flow_path = path("flows") / (p.id + ".srgr");
        if (!fs::exists(flow_path)) {
            ++missing;
            continue;
        }
        const FlowGrid flow = FlowGrid::from_raster(raster::read_raster(flow_path));
        reconstruct::PointReport rep;
        auto cloud = reconstruct::flow_to_points(flow, {p.spec, p.src.row, p.src.col}, ref.model,
                                                 src.model, config_.reconstruct, &rep);
        total += rep;
        ++used;
        log("triangulate", "patch",
            {{"id", p.id},
             {"points_in", std::to_string(rep.points_in)},
             {"kept", std::to_string(rep.kept)}});
        if (write)
            reconstruct::write_points_ascii(cloud, points / (p.id + ".txt"));
        if (keep_points_in_memory_)
            clouds.push_back(std::move(cloud));
    }
    if (keep_points_in_memory_)
        clouds_ = std::move(clouds);

    json summary = point_report_json(total);
    summary["patches"] = used;
    summary["missing_flows"] = missing;
    summary["points_written"] = write;
    finish_stage("triangulate", std::move(summary), sw.seconds());
}

reconstruct::ElevationMap Pipeline::fuse()
{
    Stopwatch sw;
    log("fuse", "start");
    const auto ref = raster::read_manifest(require_path(config_.ref_manifest, "ref"));
    std::vector<reconstruct::PointCloud> clouds;
    if (clouds_) {
        clouds = std::move(*clouds_);
        clouds_.reset();
    } else {
        const TilePlan t = tile_plan_from_json(read_json(path("plan.json")));
        for (const auto& p : t.patches) {
            const fs::path file = path("points") / (p.id + ".txt");
            if (fs::exists(file))
                clouds.push_back(reconstruct::read_points_ascii(file, ref.model.ellipsoid));
        }
    }
    std::size_t n = 0;
    for (const auto& c : clouds)
        n += c.points.size();
    const auto map = reconstruct::fuse(clouds, config_.reconstruct, ref.model.ellipsoid);
    reconstruct::write_elevation_map(map, path("map.json"));

    std::size_t cells = 0;
    float max_support = 0.0f;
    for (float s : map.support.values()) {
        cells += s > 0.0f;
        max_support = std::max(max_support, s);
    }
    finish_stage("fuse",
                 {{"points", n},
                  {"rows", map.elevation.rows()},
                  {"cols", map.elevation.cols()},
                  {"cells_with_data", cells},
                  {"max_support", max_support},
                  {"cell_size_m", config_.reconstruct.cell_size},
                  {"aggregator", aggregator_name(config_.reconstruct.aggregator)}},
                 sw.seconds());
    return map;
}

reconstruct::Offsets Pipeline::calibrate()
{
    Stopwatch sw;
    const fs::path aligned = path("map_aligned.json");
    if (!config_.calibrate) {
        std::error_code ec;
        fs::remove(aligned, ec);
        finish_stage("calibrate", {{"skipped", true}}, sw.seconds());
        return {};
    }
    log("calibrate", "start");
    const auto ref = raster::read_manifest(require_path(config_.ref_manifest, "ref"));
    const auto map = reconstruct::read_elevation_map(path("map.json"));
    const auto dsm = load_dsm();
    const auto off = reconstruct::calibrate_offsets(map, dsm, ref.model.ellipsoid);
    const json j = {{"east_m", off.east},
                    {"north_m", off.north},
                    {"up_m", off.up},
                    {"rms_m", off.rms},
                    {"cells", off.cells}};
    write_json(path("offsets.json"), j);
    reconstruct::write_elevation_map(reconstruct::apply_offsets(map, off, ref.model.ellipsoid),
                                     aligned);
    finish_stage("calibrate", j, sw.seconds());
    return off;
}

evalm::ErrorStats Pipeline::eval()
{
    Stopwatch sw;
    const fs::path map_path = evaluated_map();
    log("eval", "start", {{"map", map_path.filename().string()}});
    const auto map = reconstruct::read_elevation_map(map_path);
    const auto dsm = load_dsm();
    const auto stats = evalm::error_stats(map, dsm, config_.thresholds);
    json j = evalm::to_json(stats);
    j["map"] = map_path.filename().string();
    j["matcher"] = config_.matcher.str();
    write_json(path("stats.json"), j);
    raster::write_text(path("stats.txt"),
                       evalm::format_table({{config_.matcher.str(), stats}}));
    raster::write_text(path("thresholds.csv"), evalm::threshold_csv(stats));
    finish_stage("eval", j, sw.seconds());
    return stats;
}

void Pipeline::render()
{
    Stopwatch sw;
    log("render", "start");
    const fs::path map_path = evaluated_map();
    const auto map = reconstruct::read_elevation_map(map_path);
    const auto dsm = load_dsm();
    evalm::render_error_map(map, dsm, {config_.color_limit}, path("error_map.ppm"));
    finish_stage("render",
                 {{"file", "error_map.ppm"},
                  {"map", map_path.filename().string()},
                  {"color_limit_m", config_.color_limit}},
                 sw.seconds());
}

evalm::ErrorStats Pipeline::run_all()
{
    keep_points_in_memory_ = true;
    const auto run = [this](const std::string& stage, auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            record_failure(stage, e);
            throw;
        }
    };
    evalm::ErrorStats stats;
    run("tile", [&] { tile(); });
    run("match", [&] { match(); });
    run("triangulate", [&] { triangulate(); });
    run("fuse", [&] { fuse(); });
    run("calibrate", [&] { calibrate(); });
    run("eval", [&] { stats = eval(); });
    run("render", [&] { render(); });
    keep_points_in_memory_ = false;
    return stats;
}

nlohmann::json write_scene(const synth::RenderedScene& scene, const synth::SceneSpec& spec,
                           const fs::path& out_dir)
{
    make_dirs(out_dir);
    const auto write_image = [&](const synth::RenderedImage& img, const std::string& name) {
        const fs::path dir = out_dir / name;
        raster::save_sar_image(img.image, dir);
        raster::write_raster(img.elevation, dir / "elevation.srgr");
        raster::write_georaster(img.layover, dir / "layover.json", "layover.srgr");
    };
    write_image(scene.ref, "ref");
    write_image(scene.src, "src");
    make_dirs(out_dir / "dsm");
    raster::write_georaster(scene.dsm, out_dir / "dsm" / "dsm.json", "dsm.srgr");

    const auto& g = scene.geometry;
    json j = {{"spec", synth::to_json(spec)},
              {"geometry",
               {{"offset_a_m", g.offset_a},
                {"offset_b_m", g.offset_b},
                {"intersection_angle_deg", g.intersection_angle_deg},
                {"incidence_a_deg", g.incidence_a_deg},
                {"incidence_b_deg", g.incidence_b_deg},
                {"ref_size", {g.model_a.rows, g.model_a.cols}},
                {"src_size", {g.model_b.rows, g.model_b.cols}}}},
              {"files",
               {{"ref", "ref/manifest.json"},
                {"src", "src/manifest.json"},
                {"dsm", "dsm/dsm.json"},
                {"ref_layover", "ref/layover.json"},
                {"src_layover", "src/layover.json"},
                {"ref_elevation", "ref/elevation.srgr"},
                {"src_elevation", "src/elevation.srgr"}}}};
    write_json(out_dir / "scene.json", j);
    return j;
}

synth::SceneSpec load_scene_spec(const fs::path& path)
{
    if (path.empty())
        return synth::default_scene();
    try {
        return synth::scene_from_json(json::parse(raster::read_text(path)));
    } catch (const json::exception& e) {
        fail(ErrorCode::ConfigError, "invalid scene spec " + path.string() + ": " + e.what(),
             path.string());
    }
}

} // namespace sarstereo::pipeline
