#include "sarstereo/bridge.h"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <thread>

namespace sarstereo::bridge {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

extern "C" char** environ;

namespace {

void make_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        fail(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message(),
             dir.string());
}

void publish(const fs::path& tmp, const fs::path& final_path)
{
    std::error_code ec;
    fs::rename(tmp, final_path, ec);
    if (ec)
        fail(ErrorCode::IoFailure, "cannot rename to " + final_path.string() + ": " + ec.message(),
             final_path.string());
}

void write_raster_atomic(const raster::Raster& r, const fs::path& path)
{
    const fs::path tmp = path.string() + ".tmp";
    raster::write_raster(r, tmp);
    publish(tmp, path);
}

void write_text_atomic(const fs::path& path, const std::string& text)
{
    const fs::path tmp = path.string() + ".tmp";
    raster::write_text(tmp, text);
    publish(tmp, path);
}

json parse_sidecar(const fs::path& path, ErrorCode code)
{
    try {
        return json::parse(raster::read_text(path));
    } catch (const json::exception& e) {
        fail(code, "invalid JSON in " + path.string() + ": " + e.what(), path.string());
    }
}

double seconds_since(Clock::time_point t)
{
    return std::chrono::duration<double>(Clock::now() - t).count();
}

} // namespace

MatchRequest write_request(const tiling::PatchPair& pair, const fs::path& dir,
                           const std::string& request_id, const std::string& ref_image_id,
                           const std::string& src_image_id)
{
    if (pair.ref_pixels.rows() != pair.src_pixels.rows() ||
        pair.ref_pixels.cols() != pair.src_pixels.cols())
        fail(ErrorCode::DimensionMismatch, "ref and src patches differ in size");
    make_dir(dir);
    MatchRequest req;
    req.request_id = request_id;
    req.dir = dir;
    req.ref_patch = dir / "ref.srgr";
    req.src_patch = dir / "src.srgr";
    req.sidecar = {{"request_id", request_id},
                   {"ref_image_id", ref_image_id},
                   {"src_image_id", src_image_id},
                   {"rows", pair.ref_pixels.rows()},
                   {"cols", pair.ref_pixels.cols()},
                   {"ref_origin", {pair.spec.row, pair.spec.col}},
                   {"src_origin", {pair.src.row, pair.src.col}},
                   {"src_clamp", {pair.src.clamp_row, pair.src.clamp_col}},
                   {"out_of_bounds", pair.src.out_of_bounds},
                   {"files", {{"ref", "ref.srgr"}, {"src", "src.srgr"}}}};
    write_raster_atomic(pair.ref_pixels, req.ref_patch);
    write_raster_atomic(pair.src_pixels, req.src_patch);
    write_text_atomic(dir / kRequestSidecar, req.sidecar.dump(2) + "\n");
    write_text_atomic(dir / kRequestMarker, request_id + "\n");
    return req;
}

MatchRequest read_request(const fs::path& dir)
{
    if (!fs::exists(dir / kRequestMarker))
        fail(ErrorCode::MissingField, "request marker absent in " + dir.string(), dir.string());
    MatchRequest req;
    req.dir = dir;
    req.sidecar = parse_sidecar(dir / kRequestSidecar, ErrorCode::MissingField);
    try {
        req.request_id = req.sidecar.at("request_id").get<std::string>();
        req.ref_patch = dir / req.sidecar.at("files").at("ref").get<std::string>();
        req.src_patch = dir / req.sidecar.at("files").at("src").get<std::string>();
        req.sidecar.at("rows").get<std::size_t>();
        req.sidecar.at("cols").get<std::size_t>();
    } catch (const json::exception& e) {
        fail(ErrorCode::MissingField, std::string("request sidecar: ") + e.what(),
             (dir / kRequestSidecar).string());
    }
    return req;
}

std::optional<FlowGrid> try_read_response(const fs::path& dir)
{
    if (!fs::exists(dir / kResponseMarker))
        return std::nullopt;
    const json request = parse_sidecar(dir / kRequestSidecar, ErrorCode::MalformedResponse);
    const json response = parse_sidecar(dir / kResponseSidecar, ErrorCode::MalformedResponse);
    if (response.contains("error"))
        fail(ErrorCode::MalformedResponse,
             "matcher reported an error: " + response["error"].dump());
    std::size_t rows = 0, cols = 0;
    std::string flow_name;
    try {
        rows = request.at("rows").get<std::size_t>();
        cols = request.at("cols").get<std::size_t>();
        const auto id = response.at("request_id").get<std::string>();
        if (id != request.at("request_id").get<std::string>())
            fail(ErrorCode::MalformedResponse, "response request_id '" + id +
                                                       "' does not match the request");
        flow_name = response.value("flow", std::string("flow.srgr"));
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedResponse, std::string("response sidecar: ") + e.what());
    }
    raster::Raster r;
    try {
        r = raster::read_raster(dir / flow_name);
    } catch (const Error& e) {
        fail(ErrorCode::MalformedResponse, "unreadable flow: " + e.message(),
             (dir / flow_name).string());
    }
    if (r.rows() != rows || r.cols() != cols)
        fail(ErrorCode::MalformedResponse,
             "flow dims " + std::to_string(r.rows()) + "x" + std::to_string(r.cols()) +
                     " do not match patch dims " + std::to_string(rows) + "x" +
                     std::to_string(cols));
    return FlowGrid::from_raster(r);
}

FlowGrid read_response(const fs::path& dir, double timeout_s)
{
    const auto start = Clock::now();
    for (;;) {
        if (auto f = try_read_response(dir))
            return std::move(*f);
        if (seconds_since(start) >= timeout_s)
            fail(ErrorCode::Timeout, "no response in " + dir.string() + " after " +
                                             std::to_string(timeout_s) + " s",
                 dir.string());
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
}

void write_response(const fs::path& dir, const FlowGrid& flow)
{
    const MatchRequest req = read_request(dir);
    write_raster_atomic(flow.to_raster(), dir / "flow.srgr");
    const json sidecar = {{"request_id", req.request_id}, {"flow", "flow.srgr"}};
    write_text_atomic(dir / kResponseSidecar, sidecar.dump(2) + "\n");
    write_text_atomic(dir / kResponseMarker, req.request_id + "\n");
}

void write_error_response(const fs::path& dir, const std::string& message)
{
    std::string id;
    try {
        id = read_request(dir).request_id;
    } catch (const Error&) {
        id = dir.filename().string();
    }
    const json sidecar = {{"request_id", id}, {"error", message}};
    write_text_atomic(dir / kResponseSidecar, sidecar.dump(2) + "\n");
    write_text_atomic(dir / kResponseMarker, id + "\n");
}

namespace {

// Owns the matcher process and the scratch directory.
class MatcherProcess {
public:
    MatcherProcess(const std::string& command, const fs::path& work_dir)
    {
        const std::string script = command + " \"$1\"";
        const std::string work = work_dir.string();
        std::vector<char*> argv{const_cast<char*>("sh"), const_cast<char*>("-c"),
                                const_cast<char*>(script.c_str()), const_cast<char*>("sh"),
                                const_cast<char*>(work.c_str()), nullptr};
        // Own process group, so stop() also reaches children of the shell.
        posix_spawnattr_t attr;
        posix_spawnattr_init(&attr);
        posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
        posix_spawnattr_setpgroup(&attr, 0);
        const int rc = posix_spawn(&pid_, "/bin/sh", nullptr, &attr, argv.data(), environ);
        posix_spawnattr_destroy(&attr);
        if (rc != 0)
            fail(ErrorCode::SpawnFailure,
                 "cannot start matcher '" + command + "': " + std::strerror(rc), "matcher");
    }

    MatcherProcess(const MatcherProcess&) = delete;
    MatcherProcess& operator=(const MatcherProcess&) = delete;

    ~MatcherProcess() { stop(0.0); }

    /// True once the child has exited; records its status.
    bool exited()
    {
        if (pid_ <= 0)
            return true;
        int status = 0;
        const pid_t r = waitpid(pid_, &status, WNOHANG);
        if (r == pid_ || (r < 0 && errno == ECHILD)) {
            status_ = status;
            kill(-pid_, SIGKILL); // orphaned children of the shell
            pid_ = -1;
            return true;
        }
        return false;
    }

    int status() const { return status_; }

    /// Waits up to `grace` seconds, then kills.
    void stop(double grace)
    {
        const auto start = Clock::now();
        while (!exited() && seconds_since(start) < grace)
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        if (pid_ > 0) {
            kill(-pid_, SIGKILL);
            int status = 0;
            waitpid(pid_, &status, 0);
            status_ = status;
            pid_ = -1;
        }
    }

private:
    pid_t pid_ = -1;
    int status_ = 0;
};

std::string describe_status(int status)
{
    if (WIFEXITED(status))
        return "exit status " + std::to_string(WEXITSTATUS(status));
    if (WIFSIGNALED(status))
        return "signal " + std::to_string(WTERMSIG(status));
    return "unknown status";
}

struct WorkDir {
    fs::path path;
    bool remove = false;

    ~WorkDir()
    {
        if (remove) {
            std::error_code ec;
            fs::remove_all(path, ec);
        }
    }
};

WorkDir make_work_dir(const MatcherOptions& options)
{
    WorkDir w;
    if (!options.work_dir.empty()) {
        w.path = options.work_dir;
        make_dir(w.path);
    } else {
        std::string tmpl = (fs::temp_directory_path() / "sarstereo-bridge-XXXXXX").string();
        if (!mkdtemp(tmpl.data()))
            fail(ErrorCode::IoFailure, "cannot create a temporary bridge directory");
        w.path = tmpl;
    }
    std::error_code ec;
    fs::remove(w.path / kShutdownMarker, ec);
    w.remove = !options.keep_work_dir && options.work_dir.empty();
    return w;
}

} // namespace

MatcherRun run_external_matcher(const std::string& command, std::span<const MatchJob> jobs,
                                std::size_t parallelism, const MatcherOptions& options)
{
    if (parallelism < 1)
        fail(ErrorCode::ConfigError, "parallelism must be at least 1", "jobs");
    if (command.empty())
        fail(ErrorCode::ConfigError, "empty matcher command", "matcher");
    for (const auto& j : jobs)
        if (!j.pair || j.request_id.empty())
            fail(ErrorCode::InvalidArgument, "match job without pair or request id");

    MatcherRun run;
    run.results.resize(jobs.size());
    if (jobs.empty())
        return run;

    WorkDir work = make_work_dir(options);
    run.work_dir = work.path;
    MatcherProcess proc(command, work.path);

    std::vector<std::size_t> outstanding;
    std::vector<Clock::time_point> started(jobs.size());
    std::size_t next = 0, answered = 0;
    bool exited = false;

    const auto record_failure = [&](std::size_t i, ErrorCode code, const std::string& msg) {
        run.results[i].error = code;
        run.results[i].message = msg;
        ++run.failures;
    };

    while (next < jobs.size() || !outstanding.empty()) {
        while (!exited && outstanding.size() < parallelism && next < jobs.size()) {
            const auto& job = jobs[next];
            write_request(*job.pair, work.path / job.request_id, job.request_id,
                          job.ref_image_id, job.src_image_id);
            started[next] = Clock::now();
            outstanding.push_back(next++);
        }

        // Exit is checked before polling so responses written just before
        // the process ended are still collected.
        if (!exited)
            exited = proc.exited();

        for (auto it = outstanding.begin(); it != outstanding.end();) {
            const std::size_t i = *it;
            bool done = true;
            try {
                if (auto flow = try_read_response(work.path / jobs[i].request_id)) {
                    run.results[i].flow = std::move(*flow);
                    ++answered;
                } else if (seconds_since(started[i]) >= options.timeout_s) {
                    record_failure(i, ErrorCode::Timeout,
                                   "no response after " + std::to_string(options.timeout_s) +
                                           " s");
                } else {
                    done = false;
                }
            } catch (const Error& e) {
                ++answered;
                record_failure(i, e.code(), e.message());
            }
            it = done ? outstanding.erase(it) : it + 1;
        }

        if (exited) {
            if (answered == 0)
                fail(ErrorCode::SpawnFailure,
                     "matcher '" + command + "' exited (" + describe_status(proc.status()) +
                             ") before answering any request",
                     "matcher");
            const std::string msg =
                    "matcher exited (" + describe_status(proc.status()) + ") before answering";
            for (std::size_t i : outstanding)
                record_failure(i, ErrorCode::SpawnFailure, msg);
            outstanding.clear();
            for (; next < jobs.size(); ++next)
                record_failure(next, ErrorCode::SpawnFailure, msg);
            break;
        }
        if (!outstanding.empty())
            std::this_thread::sleep_for(std::chrono::duration<double>(options.poll_interval_s));
    }

    raster::write_text(work.path / kShutdownMarker, "\n");
    proc.stop(options.shutdown_grace_s);
    return run;
}

} // namespace sarstereo::bridge
