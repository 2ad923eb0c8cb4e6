#include "mvp/eval/adapter.hpp"

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <mutex>

#include "mvp/tensor/random.hpp"

extern char** environ;

namespace mvp {

std::string MemoizingAdapter::answer(const std::string& prompt) {
  {
    std::shared_lock lock(mutex_);
    if (auto it = cache_.find(prompt); it != cache_.end()) return it->second;
  }
  auto reply = inner_.answer(prompt);
  std::unique_lock lock(mutex_);
  ++inner_calls_;
  // A concurrent caller may have filled the slot first; keep its value so
  // every caller sees the same answer.
  return cache_.try_emplace(prompt, std::move(reply)).first->second;
}

std::size_t MemoizingAdapter::cache_size() const {
  std::shared_lock lock(mutex_);
  return cache_.size();
}

std::size_t MemoizingAdapter::inner_calls() const {
  std::shared_lock lock(mutex_);
  return inner_calls_;
}

OracleAdapter::OracleAdapter(const std::vector<MCQItem>& items) {
  for (const auto& item : items) {
    for (const auto& v : rotate_options(item)) answers_[render_prompt(v)] = std::string(1, option_letter(v.answer_index));
  }
}

std::string OracleAdapter::answer(const std::string& prompt) {
  auto it = answers_.find(prompt);
  if (it == answers_.end()) throw AdapterError("oracle: unknown prompt");
  return it->second;
}

FullTextAdapter::FullTextAdapter(const std::vector<MCQItem>& items) {
  for (const auto& item : items) {
    for (const auto& v : rotate_options(item)) answers_[render_prompt(v)] = v.options[v.answer_index];
  }
}

std::string FullTextAdapter::answer(const std::string& prompt) {
  auto it = answers_.find(prompt);
  if (it == answers_.end()) throw AdapterError("fulltext: unknown prompt");
  return it->second;
}

std::string RandomGuessAdapter::answer(const std::string& prompt) {
  // Count the "X. " option lines so the guess ranges over the letters shown.
  std::size_t n = 0;
  std::size_t pos = 0;
  while (pos < prompt.size()) {
    const auto eol = prompt.find('\n', pos);
    const auto line = std::string_view(prompt).substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
    if (line.size() >= 2 && line[0] == static_cast<char>('A' + n) && line[1] == '.') ++n;
    if (eol == std::string::npos) break;
    pos = eol + 1;
  }
  if (n == 0) throw AdapterError("random: no options in prompt");
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : prompt) h = (h ^ c) * 1099511628211ULL;
  return std::string(1, static_cast<char>('A' + mix_seed(seed_, h) % n));
}

std::string SubprocessAdapter::answer(const std::string& prompt) {
  const auto out = run_subprocess(command_, prompt + "\n");
  auto line = out.substr(0, out.find('\n'));
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

const std::string& OneShotAdapter::exemplar() {
  static const std::string text =
      "Which of these is a body of water?\n"
      "A. Runway\n"
      "B. Lake\n"
      "C. Parking lot\n"
      "D. Forest\n" +
      std::string(kLetterInstruction) + "\nB\n\n";
  return text;
}

std::string OneShotAdapter::answer(const std::string& prompt) { return inner_.answer(exemplar() + prompt); }

namespace {

struct Fd {
  int fd = -1;
  ~Fd() { reset(); }
  void reset() {
    if (fd >= 0) ::close(fd);
    fd = -1;
  }
};

[[noreturn]] void fail(const std::string& what) { throw AdapterError(what + ": " + std::strerror(errno)); }

}  // namespace

std::string run_subprocess(const std::string& command, const std::string& input) {
  static std::once_flag sigpipe_once;
  std::call_once(sigpipe_once, [] { std::signal(SIGPIPE, SIG_IGN); });
  int in_pipe[2], out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) fail("pipe");
  Fd in_r{in_pipe[0]}, in_w{in_pipe[1]};
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) fail("pipe");
  Fd out_r{out_pipe[0]}, out_w{out_pipe[1]};

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_r.fd, STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_w.fd, STDOUT_FILENO);
  const char* argv[] = {"/bin/sh", "-c", command.c_str(), nullptr};
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, "/bin/sh", &actions, nullptr, const_cast<char* const*>(argv), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) {
    errno = rc;
    fail("spawn " + command);
  }
  in_r.reset();
  out_w.reset();

  // Interleave writing and reading so a chatty child cannot deadlock us.
  std::string output;
  std::size_t written = 0;
  if (input.empty()) in_w.reset();
  if (in_w.fd >= 0) ::fcntl(in_w.fd, F_SETFL, O_NONBLOCK);
  char buf[4096];
  while (out_r.fd >= 0) {
    pollfd fds[2] = {{out_r.fd, POLLIN, 0}, {in_w.fd, POLLOUT, 0}};
    const nfds_t nfds = in_w.fd >= 0 ? 2 : 1;
    if (::poll(fds, nfds, -1) < 0) {
      if (errno == EINTR) continue;
      fail("poll");
    }
    if (nfds == 2 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const auto n = ::write(in_w.fd, input.data() + written, input.size() - written);
      if (n > 0) written += static_cast<std::size_t>(n);
      if (n < 0 && errno != EAGAIN && errno != EINTR) written = input.size();  // child closed stdin
      if (written == input.size()) in_w.reset();
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      const auto n = ::read(out_r.fd, buf, sizeof buf);
      if (n > 0) output.append(buf, static_cast<std::size_t>(n));
      else if (n == 0 || (errno != EINTR && errno != EAGAIN)) out_r.reset();
    }
  }
  in_w.reset();

  int status = 0;
  while (::waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) fail("waitpid");
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw AdapterError("command exited with status " +
                       std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status)) + ": " +
                       command);
  }
  return output;
}

}  // namespace mvp
