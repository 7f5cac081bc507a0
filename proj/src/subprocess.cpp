#include "hflow/subprocess.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

#include "hflow/common.hpp"

extern char** environ;

namespace hflow {

namespace {

// Reads everything currently buffered; returns false once the write end
// has closed (EOF).
bool drain(int fd, std::string* sink, bool* truncated, size_t limit) {
  char buf[16384];
  for (;;) {
    const ssize_t n = read(fd, buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      return true;  // EAGAIN: nothing buffered right now
    }
    if (n == 0) return false;
    if (sink->size() < limit) {
      const size_t take = std::min<size_t>(n, limit - sink->size());
      sink->append(buf, take);
      if (take < static_cast<size_t>(n)) *truncated = true;
    } else {
      *truncated = true;
    }
  }
}

}  // namespace

ProcessResult run_process(const ProcessSpec& spec) {
  int out_pipe[2], err_pipe[2];
  if (pipe2(out_pipe, O_CLOEXEC) != 0 || pipe2(err_pipe, O_CLOEXEC) != 0)
    throw Error(std::string("pipe: ") + std::strerror(errno));

  std::vector<std::string> env_strings;
  env_strings.reserve(spec.env.size());
  for (const auto& [k, v] : spec.env) env_strings.push_back(k + "=" + v);
  std::vector<char*> envp, argv;
  for (auto& s : env_strings) envp.push_back(s.data());
  envp.push_back(nullptr);
  std::vector<std::string> args = spec.argv;
  for (auto& s : args) argv.push_back(s.data());
  argv.push_back(nullptr);

  const auto t0 = std::chrono::steady_clock::now();
  const pid_t pid = fork();
  if (pid < 0) throw Error(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    const int devnull = open("/dev/null", O_RDONLY);
    if (devnull >= 0) dup2(devnull, STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    dup2(err_pipe[1], STDERR_FILENO);
    if (!spec.cwd.empty() && chdir(spec.cwd.c_str()) != 0) _exit(127);
    // execvpe searches the caller's PATH, not envp's; swap environ first
    // so the command resolves against the environment it will run with.
    environ = envp.data();
    execvp(argv[0], argv.data());
    const char* msg = "exec failed: ";
    (void)!write(STDERR_FILENO, msg, std::strlen(msg));
    (void)!write(STDERR_FILENO, argv[0], std::strlen(argv[0]));
    (void)!write(STDERR_FILENO, "\n", 1);
    _exit(127);
  }

  close(out_pipe[1]);
  close(err_pipe[1]);
  fcntl(out_pipe[0], F_SETFL, O_NONBLOCK);
  fcntl(err_pipe[0], F_SETFL, O_NONBLOCK);

  ProcessResult res;
  bool out_open = true, err_open = true;
  std::chrono::steady_clock::time_point term_at{};
  while (out_open || err_open) {
    if (spec.cancel && spec.cancel->load(std::memory_order_relaxed)) {
      const auto now = std::chrono::steady_clock::now();
      if (!res.cancelled) {
        kill(pid, SIGTERM);
        res.cancelled = true;
        term_at = now;
      } else if (now - term_at > std::chrono::seconds(2)) {
        kill(pid, SIGKILL);  // escalate if SIGTERM was ignored
        term_at = now;
      }
    }
    pollfd fds[2] = {{out_open ? out_pipe[0] : -1, POLLIN, 0},
                     {err_open ? err_pipe[0] : -1, POLLIN, 0}};
    const int rc = poll(fds, 2, 50);
    if (rc < 0 && errno != EINTR) break;
    if (fds[0].revents != 0)
      out_open = drain(out_pipe[0], &res.stdout_data, &res.stdout_truncated,
                       spec.capture_limit) &&
                 !(fds[0].revents & POLLERR);
    if (fds[1].revents != 0)
      err_open = drain(err_pipe[0], &res.stderr_data, &res.stderr_truncated,
                       spec.capture_limit) &&
                 !(fds[1].revents & POLLERR);
  }
  close(out_pipe[0]);
  close(err_pipe[0]);

  int status = 0;
  while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  const auto t1 = std::chrono::steady_clock::now();
  res.wall_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
  if (WIFEXITED(status))
    res.exit_code = WEXITSTATUS(status);
  else if (WIFSIGNALED(status))
    res.exit_code = 128 + WTERMSIG(status);
  return res;
}

}  // namespace hflow
