// Test fixture for the bridge protocol. Serves request directories under the
// work directory until a shutdown marker appears.
//   echo:      zero flow, confidence 1
//   oracle:    flow read from --flow FILE or --flow-dir DIR/<request_id>.srgr
//   malformed: confidence 1.5 everywhere

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "sarstereo/bridge.h"
#include "sarstereo/errors.h"

namespace fs = std::filesystem;
using namespace sarstereo;

namespace {

struct Options {
    std::string work_dir;
    std::string mode = "echo";
    std::string flow_file;
    std::string flow_dir;
    std::vector<std::string> malformed_ids;
    std::vector<std::string> error_ids;
    int exit_after = -1;
    int delay_ms = 0;
    bool reverse = false;
    double max_idle_s = 600.0;
};

FlowGrid answer(const Options& o, const bridge::MatchRequest& req)
{
    const auto rows = req.sidecar.at("rows").get<std::size_t>();
    const auto cols = req.sidecar.at("cols").get<std::size_t>();
    const bool malformed =
            o.mode == "malformed" || std::count(o.malformed_ids.begin(), o.malformed_ids.end(),
                                                req.request_id) > 0;
    if (o.mode == "oracle") {
        const fs::path file = !o.flow_file.empty()
                                      ? fs::path(o.flow_file)
                                      : fs::path(o.flow_dir) / (req.request_id + ".srgr");
        return FlowGrid::from_raster(raster::read_raster(file));
    }
    FlowGrid f(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            f.set(r, c, 0.0f, 0.0f, 1.0f);
    if (malformed)
        f.confidence.at(0, 0) = 1.5f;
    return f;
}

// Writes the flow raster directly so invalid confidences reach the producer.
void respond(const fs::path& dir, const bridge::MatchRequest& req, const FlowGrid& flow)
{
    raster::Raster r = flow.to_raster();
    raster::write_raster(r, dir / "flow.srgr.tmp");
    fs::rename(dir / "flow.srgr.tmp", dir / "flow.srgr");
    const nlohmann::json j = {{"request_id", req.request_id}, {"flow", "flow.srgr"}};
    raster::write_text(dir / "response.json.tmp", j.dump(2) + "\n");
    fs::rename(dir / "response.json.tmp", dir / bridge::kResponseSidecar);
    raster::write_text(dir / "response.ready.tmp", req.request_id + "\n");
    fs::rename(dir / "response.ready.tmp", dir / bridge::kResponseMarker);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Bridge protocol fixture matcher"};
    Options o;
    app.add_option("work_dir", o.work_dir, "bridge work directory")->required();
    app.add_option("--mode", o.mode, "echo | oracle | malformed")
            ->check(CLI::IsMember({"echo", "oracle", "malformed"}));
    app.add_option("--flow", o.flow_file, "oracle: one flow file for every request");
    app.add_option("--flow-dir", o.flow_dir, "oracle: directory of <request_id>.srgr");
    app.add_option("--malformed", o.malformed_ids, "request ids answered out of range");
    app.add_option("--error", o.error_ids, "request ids answered with an error sidecar");
    app.add_option("--exit-after", o.exit_after, "exit after this many responses");
    app.add_option("--delay-ms", o.delay_ms, "delay before each response");
    app.add_flag("--reverse", o.reverse, "answer pending requests in reverse order");
    app.add_option("--max-idle", o.max_idle_s, "exit after this many idle seconds");
    CLI11_PARSE(app, argc, argv);

    const fs::path work = o.work_dir;
    std::set<std::string> done;
    int answered = 0;
    auto last_activity = std::chrono::steady_clock::now();
    try {
        while (!fs::exists(work / bridge::kShutdownMarker)) {
            std::vector<fs::path> pending;
            for (const auto& entry : fs::directory_iterator(work))
                if (entry.is_directory() && !done.count(entry.path().filename().string()) &&
                    fs::exists(entry.path() / bridge::kRequestMarker) &&
                    !fs::exists(entry.path() / bridge::kResponseMarker))
                    pending.push_back(entry.path());
            std::sort(pending.begin(), pending.end());
            if (o.reverse)
                std::reverse(pending.begin(), pending.end());
            for (const auto& dir : pending) {
                if (o.delay_ms > 0)
                    std::this_thread::sleep_for(std::chrono::milliseconds(o.delay_ms));
                const auto req = bridge::read_request(dir);
                if (std::count(o.error_ids.begin(), o.error_ids.end(), req.request_id))
                    bridge::write_error_response(dir, "requested failure");
                else {
                    try {
                        respond(dir, req, answer(o, req));
                    } catch (const Error& e) {
                        bridge::write_error_response(dir, e.what());
                    }
                }
                done.insert(dir.filename().string());
                last_activity = std::chrono::steady_clock::now();
                if (++answered == o.exit_after)
                    return 0;
            }
            if (std::chrono::duration<double>(std::chrono::steady_clock::now() - last_activity)
                        .count() > o.max_idle_s)
                return 3;
            std::this_thread::sleep_for(std::chrono::milliseconds(1));
        }
    } catch (const std::exception& e) {
        std::cerr << "fixture matcher: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
