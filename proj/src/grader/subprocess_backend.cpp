#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>

#include "stusim/common.hpp"
#include "stusim/errors.hpp"
#include "stusim/grader.hpp"

extern char** environ;

namespace stusim {

using nlohmann::json;

namespace {

std::string resolve_executable(const std::string& name) {
    if (name.find('/') != std::string::npos) return name;
    const char* path = std::getenv("PATH");
    std::string dirs = path ? path : "/usr/bin:/bin";
    size_t start = 0;
    while (start <= dirs.size()) {
        size_t end = dirs.find(':', start);
        if (end == std::string::npos) end = dirs.size();
        const std::string candidate = dirs.substr(start, end - start) + "/" + name;
        if (::access(candidate.c_str(), X_OK) == 0) return candidate;
        start = end + 1;
    }
    throw GraderUnavailable("interpreter not found on PATH: " + name);
}

struct Pipe {
    int fd[2] = {-1, -1};
    Pipe() {
        if (::pipe2(fd, O_CLOEXEC) != 0) throw GraderUnavailable(std::string("pipe: ") + std::strerror(errno));
    }
    ~Pipe() {
        close_read();
        close_write();
    }
    void close_read() {
        if (fd[0] >= 0) ::close(fd[0]);
        fd[0] = -1;
    }
    void close_write() {
        if (fd[1] >= 0) ::close(fd[1]);
        fd[1] = -1;
    }
};

struct TempDir {
    std::string path;
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "stusim-run-XXXXXX").string();
        if (!::mkdtemp(tmpl.data())) throw GraderUnavailable(std::string("mkdtemp: ") + std::strerror(errno));
        path = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

struct ChildResult {
    std::string out;
    std::string err;
    int exit_status = 0;
    bool timed_out = false;
    bool output_capped = false;
};

ChildResult run_child(const std::string& exe, const std::vector<std::string>& args, const std::string& input,
                      const std::string& workdir, const ExecLimits& limits) {
    std::vector<std::string> env_storage;
    for (char** e = environ; *e; ++e) {
        const std::string entry = *e;
        if (entry.rfind("PYTHONHASHSEED=", 0) == 0 || entry.rfind("PYTHONDONTWRITEBYTECODE=", 0) == 0) continue;
        env_storage.push_back(entry);
    }
    env_storage.push_back("PYTHONHASHSEED=0");
    env_storage.push_back("PYTHONDONTWRITEBYTECODE=1");
    std::vector<char*> envp;
    for (auto& e : env_storage) envp.push_back(e.data());
    envp.push_back(nullptr);
    std::vector<std::string> argv_storage = args;
    argv_storage.insert(argv_storage.begin(), exe);
    std::vector<char*> argv;
    for (auto& a : argv_storage) argv.push_back(a.data());
    argv.push_back(nullptr);

    Pipe in, out, err, status;
    const rlim_t mem = static_cast<rlim_t>(limits.memory_mb) * 1024 * 1024;
    const rlim_t cpu = static_cast<rlim_t>(limits.wall_time_s) + 2;

    const pid_t pid = ::fork();
    if (pid < 0) throw GraderUnavailable(std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
        // Only async-signal-safe calls between fork and exec.
        ::setpgid(0, 0);
        if (::chdir(workdir.c_str()) != 0) ::_exit(126);
        struct rlimit rl;
        rl.rlim_cur = rl.rlim_max = mem;
        ::setrlimit(RLIMIT_AS, &rl);
        rl.rlim_cur = rl.rlim_max = cpu;
        ::setrlimit(RLIMIT_CPU, &rl);
        rl.rlim_cur = rl.rlim_max = 0;
        ::setrlimit(RLIMIT_CORE, &rl);
        ::unshare(CLONE_NEWNET);  // best effort: no network
        ::dup2(in.fd[0], 0);
        ::dup2(out.fd[1], 1);
        ::dup2(err.fd[1], 2);
        ::execve(exe.c_str(), argv.data(), envp.data());
        const int code = errno;
        ssize_t ignored = ::write(status.fd[1], &code, sizeof(code));
        (void)ignored;
        ::_exit(127);
    }
    ::setpgid(pid, pid);
    in.close_read();
    out.close_write();
    err.close_write();
    status.close_write();

    int exec_errno = 0;
    if (::read(status.fd[0], &exec_errno, sizeof(exec_errno)) == sizeof(exec_errno)) {
        ::waitpid(pid, nullptr, 0);
        throw GraderUnavailable("cannot execute " + exe + ": " + std::strerror(exec_errno));
    }

    ::fcntl(in.fd[1], F_SETFL, O_NONBLOCK);
    ::signal(SIGPIPE, SIG_IGN);
    ChildResult result;
    size_t written = 0;
    if (input.empty()) in.close_write();
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::milliseconds(static_cast<long>(limits.wall_time_s * 1000));
    bool out_open = true, err_open = true;
    char buf[65536];
    while (out_open || err_open) {
        const auto now = std::chrono::steady_clock::now();
        if (now >= deadline) {
            result.timed_out = true;
            break;
        }
        const int wait_ms =
            static_cast<int>(std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count()) + 1;
        pollfd fds[3];
        int nfds = 0;
        int out_i = -1, err_i = -1, in_i = -1;
        if (out_open) {
            fds[nfds] = {out.fd[0], POLLIN, 0};
            out_i = nfds++;
        }
        if (err_open) {
            fds[nfds] = {err.fd[0], POLLIN, 0};
            err_i = nfds++;
        }
        if (in.fd[1] >= 0) {
            fds[nfds] = {in.fd[1], POLLOUT, 0};
            in_i = nfds++;
        }
        const int ready = ::poll(fds, static_cast<nfds_t>(nfds), wait_ms);
        if (ready < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (in_i >= 0 && fds[in_i].revents) {
            if (fds[in_i].revents & (POLLERR | POLLHUP)) {
                in.close_write();
            } else {
                const ssize_t n = ::write(in.fd[1], input.data() + written, input.size() - written);
                if (n > 0) written += static_cast<size_t>(n);
                if (n < 0 && errno != EAGAIN) in.close_write();
                if (written == input.size()) in.close_write();
            }
        }
        auto drain = [&](int idx, int fd, std::string& sink, bool& open) {
            if (idx < 0 || !fds[idx].revents) return;
            const ssize_t n = ::read(fd, buf, sizeof(buf));
            if (n <= 0) {
                open = false;
                return;
            }
            sink.append(buf, static_cast<size_t>(n));
        };
        drain(out_i, out.fd[0], result.out, out_open);
        drain(err_i, err.fd[0], result.err, err_open);
        if (result.out.size() > static_cast<size_t>(limits.stdout_cap_bytes)) {
            result.output_capped = true;
            break;
        }
        if (result.err.size() > static_cast<size_t>(limits.stdout_cap_bytes)) result.err.resize(limits.stdout_cap_bytes);
    }
    if (result.timed_out || result.output_capped) ::kill(-pid, SIGKILL);
    int wstatus = 0;
    while (::waitpid(pid, &wstatus, 0) < 0 && errno == EINTR) {
    }
    if (result.timed_out || result.output_capped) ::kill(-pid, SIGKILL);  // stray grandchildren
    if (WIFEXITED(wstatus)) result.exit_status = WEXITSTATUS(wstatus);
    else if (WIFSIGNALED(wstatus)) result.exit_status = 128 + WTERMSIG(wstatus);
    return result;
}

}  // namespace

SubprocessBackend::SubprocessBackend(std::string interpreter, std::string runner_path,
                                     std::map<std::string, TestSuite> suites, size_t capacity)
    : interpreter_(std::move(interpreter)),
      runner_path_(std::filesystem::absolute(runner_path).string()),
      suites_(std::move(suites)),
      capacity_(std::max<size_t>(1, capacity)) {}

ExecReport SubprocessBackend::execute(const Assignment& assignment, const std::string& program,
                                      const ExecLimits& limits) {
    auto suite_it = suites_.find(assignment.test_suite_ref);
    if (suite_it == suites_.end()) throw DataError("unknown test suite '" + assignment.test_suite_ref + "'");
    const TestSuite& suite = suite_it->second;

    json cases = json::array();
    for (const auto& c : suite.cases) {
        json jc = c.invocation.is_object() ? c.invocation : json::object();
        jc["case_id"] = c.case_id;
        jc["expected"] = c.expected;
        cases.push_back(std::move(jc));
    }
    const json request = {{"program", program}, {"cases", cases}, {"per_case_timeout_s", limits.wall_time_s}};

    const std::string exe = resolve_executable(interpreter_);
    TempDir dir;
    const ChildResult child = run_child(exe, {runner_path_}, dump_line(request), dir.path, limits);

    ExecReport report;
    if (child.timed_out) {
        report.timed_out = true;
        return report;
    }
    if (child.output_capped) {
        report.error_trace = "output limit exceeded";
        return report;
    }
    const std::string first_line = split_lines(child.out).empty() ? "" : split_lines(child.out).front();
    std::optional<ExecReport> parsed;
    if (child.exit_status == 0) {
        try {
            parsed = report_from_json(json::parse(first_line));
        } catch (const std::exception&) {
            parsed.reset();
        }
    }
    if (!parsed) {
        const std::string err = trim(child.err);
        report.error_trace = err.empty() ? "runner exited with status " + std::to_string(child.exit_status) : err;
        return report;
    }
    if (parsed->timed_out || parsed->error_trace) return *parsed;

    // Pass/fail is decided here, not by the runner.
    std::map<std::string, const CaseResult*> observed;
    for (const auto& c : parsed->per_case) observed[c.case_id] = &c;
    for (const auto& tc : suite.cases) {
        CaseResult r;
        r.case_id = tc.case_id;
        r.expected = tc.expected;
        auto it = observed.find(tc.case_id);
        if (it == observed.end()) {
            r.observed = "<no result>";
        } else {
            r.observed = it->second->observed;
            r.error = it->second->error;
            r.passed = !r.error && outputs_match(r.observed, tc.expected, tc.tolerance);
        }
        report.per_case.push_back(std::move(r));
    }
    return report;
}

}  // namespace stusim
