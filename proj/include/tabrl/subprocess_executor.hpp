#pragma once

// POSIX executor: runs the external runner in a child process against a
// private copy of the table workspace.
//
// Protocol: the candidate is written to <copy>/__candidate__.src and the
// runner is launched as `<runner...> --code __candidate__.src --cwd <copy>`.
// Runner exit 0 = success, 1 = script exception, 2 = protocol error.

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <semaphore>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "tabrl/detail/parallel.hpp"
#include "tabrl/sandbox.hpp"

namespace tabrl {

inline constexpr std::string_view kCandidateFileName = "__candidate__.src";

struct SubprocessExecutorConfig {
  /// argv prefix of the runner, e.g. {"python3", "/opt/tabrl/runner.py"}.
  std::vector<std::string> runner_command{"tabrl-runner"};
  std::size_t max_concurrent = detail::hardware_workers();
  std::filesystem::path scratch_root = std::filesystem::temp_directory_path();
};

namespace detail {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }
  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline std::pair<Fd, Fd> make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) throw std::system_error(errno, std::generic_category(), "pipe2");
  return {Fd(fds[0]), Fd(fds[1])};
}

// Removes a scratch directory tree on scope exit.
class ScratchDir {
 public:
  explicit ScratchDir(const std::filesystem::path& root) {
    std::string tmpl = (root / "tabrl-exec-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::system_error(errno, std::generic_category(), "mkdtemp");
    path_ = tmpl;
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace detail

class SubprocessExecutor final : public Executor {
 public:
  explicit SubprocessExecutor(SubprocessExecutorConfig cfg)
      : cfg_(std::move(cfg)), slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, cfg_.max_concurrent))) {
    if (cfg_.runner_command.empty()) throw std::invalid_argument("runner command is empty");
  }

  ExecOutcome execute(const CodeCandidate& code, const std::filesystem::path& workspace,
                      const ExecLimits& limits) override {
    limits.validate();
    if (detail::is_blank(code.source)) return protocol_error("empty candidate code");
    std::error_code ec;
    if (!std::filesystem::is_directory(workspace, ec)) {
      return protocol_error("workspace is not a directory: " + workspace.string());
    }

    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    try {
      detail::ScratchDir scratch(cfg_.scratch_root);
      auto copy = scratch.path() / "ws";
      std::filesystem::copy(workspace, copy, std::filesystem::copy_options::recursive);
      {
        std::ofstream src(copy / kCandidateFileName, std::ios::binary);
        src << code.source;
        if (!src) return protocol_error("cannot write candidate file");
      }
      return run(copy, limits);
    } catch (const std::exception& e) {
      return protocol_error(e.what());
    }
  }

  const SubprocessExecutorConfig& config() const { return cfg_; }

 private:
  static ExecOutcome protocol_error(std::string why) {
    ExecOutcome out;
    out.runner_protocol_error = true;
    out.stderr_text = std::move(why);
    return out;
  }

  ExecOutcome run(const std::filesystem::path& cwd, const ExecLimits& limits) {
    std::vector<std::string> args = cfg_.runner_command;
    args.emplace_back("--code");
    args.emplace_back(kCandidateFileName);
    args.emplace_back("--cwd");
    args.emplace_back(cwd.string());
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    const std::string cwd_str = cwd.string();

    auto [out_r, out_w] = detail::make_pipe();
    auto [err_r, err_w] = detail::make_pipe();
    auto [status_r, status_w] = detail::make_pipe();

    const auto start = std::chrono::steady_clock::now();
    pid_t pid = ::fork();
    if (pid < 0) return protocol_error(std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
      // Child: async-signal-safe calls only.
      ::setpgid(0, 0);
      ::dup2(out_w.get(), STDOUT_FILENO);
      ::dup2(err_w.get(), STDERR_FILENO);
      int devnull = ::open("/dev/null", O_RDONLY);
      if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
      if (::chdir(cwd_str.c_str()) != 0) {
        int e = errno;
        (void)!::write(status_w.get(), &e, sizeof e);
        ::_exit(127);
      }
      struct rlimit core{0, 0};
      ::setrlimit(RLIMIT_CORE, &core);
      if (limits.max_memory > 0) {
        struct rlimit as{limits.max_memory, limits.max_memory};
        ::setrlimit(RLIMIT_AS, &as);
      }
      // Best effort: only succeeds when the container grants CAP_SYS_ADMIN.
      if (!limits.network_allowed) (void)::unshare(CLONE_NEWNET);
      ::execvp(argv[0], argv.data());
      int e = errno;
      (void)!::write(status_w.get(), &e, sizeof e);
      ::_exit(127);
    }
    ::setpgid(pid, pid);
    out_w.reset();
    err_w.reset();
    status_w.reset();

    ExecOutcome outcome;
    int exec_errno = 0;
    if (::read(status_r.get(), &exec_errno, sizeof exec_errno) == static_cast<ssize_t>(sizeof exec_errno)) {
      ::waitpid(pid, nullptr, 0);
      return protocol_error("cannot launch runner '" + cfg_.runner_command.front() + "': " + std::strerror(exec_errno));
    }

    const auto deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(limits.wall_timeout);
    bool out_open = true, err_open = true, exited = false;
    int status = 0;
    char buf[65536];

    auto drain = [&](int fd, std::string& sink, bool& open, bool& truncated) {
      ssize_t n = ::read(fd, buf, sizeof buf);
      if (n <= 0) {
        if (n == 0 || (errno != EINTR && errno != EAGAIN)) open = false;
        return;
      }
      auto room = limits.max_stdout > sink.size() ? limits.max_stdout - sink.size() : 0;
      auto take = std::min<std::size_t>(room, static_cast<std::size_t>(n));
      sink.append(buf, take);
      if (take < static_cast<std::size_t>(n)) truncated = true;
    };

    bool stderr_truncated = false;
    while (out_open || err_open || !exited) {
      if (!exited) {
        pid_t r = ::waitpid(pid, &status, WNOHANG);
        if (r == pid) {
          exited = true;
          // Stragglers forked by the script would otherwise hold the pipes open.
          ::kill(-pid, SIGKILL);
        }
      }
      auto now = std::chrono::steady_clock::now();
      if (!exited && now >= deadline) {
        outcome.timed_out = true;
        ::kill(-pid, SIGKILL);
        ::waitpid(pid, &status, 0);
        exited = true;
        continue;
      }
      if (!out_open && !err_open) {
        // Pipes closed but the child is still running: wait without spinning.
        ::usleep(2000);
        continue;
      }
      pollfd fds[2];
      nfds_t nfds = 0;
      if (out_open) fds[nfds++] = {out_r.get(), POLLIN, 0};
      if (err_open) fds[nfds++] = {err_r.get(), POLLIN, 0};
      auto wait_ms = exited ? 50 : std::clamp<long>(
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count(), 1, 20);
      int pr = ::poll(fds, nfds, static_cast<int>(wait_ms));
      if (pr < 0 && errno != EINTR) break;
      if (pr == 0 && exited) break;  // killed group, nothing left to read
      for (nfds_t i = 0; i < nfds; ++i) {
        if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
        if (fds[i].fd == out_r.get()) {
          drain(out_r.get(), outcome.stdout_text, out_open, outcome.stdout_truncated);
        } else {
          drain(err_r.get(), outcome.stderr_text, err_open, stderr_truncated);
        }
      }
    }
    outcome.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (!outcome.timed_out) {
      if (WIFEXITED(status)) {
        int code = WEXITSTATUS(status);
        outcome.exit_ok = code == 0;
        outcome.runner_protocol_error = code == 2;
      } else {
        outcome.exit_ok = false;
      }
    }
    return outcome;
  }

  SubprocessExecutorConfig cfg_;
  std::counting_semaphore<> slots_;
};

}  // namespace tabrl
