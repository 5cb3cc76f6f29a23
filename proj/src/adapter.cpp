#include "halodet/adapter.hpp"

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <thread>

#include "halodet/error.hpp"

namespace halodet {

namespace {

using Clock = std::chrono::steady_clock;

[[noreturn]] void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  if (left <= 0) return 0;
  return left > INT32_MAX ? INT32_MAX : static_cast<int>(left);
}

void close_fd(int& fd) {
  if (fd >= 0) ::close(fd);
  fd = -1;
}

void ignore_sigpipe() {
  static const bool once = [] {
    std::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)once;
}

}  // namespace

std::vector<std::string> split_command_line(std::string_view line) {
  std::vector<std::string> out;
  std::string word;
  bool in_word = false;
  char quote = 0;
  for (char c : line) {
    if (quote) {
      if (c == quote) quote = 0;
      else word += c;
      continue;
    }
    if (c == '\'' || c == '"') {
      quote = c;
      in_word = true;
    } else if (c == ' ' || c == '\t' || c == '\n') {
      if (in_word) out.push_back(std::move(word));
      word.clear();
      in_word = false;
    } else {
      word += c;
      in_word = true;
    }
  }
  if (in_word) out.push_back(std::move(word));
  return out;
}

AdapterHandle adapter_from_command_line(std::string_view line, double timeout_seconds, std::uint64_t seed) {
  AdapterHandle h;
  h.command = split_command_line(line);
  h.timeout_seconds = timeout_seconds;
  h.seed = seed;
  return h;
}

bool AdapterHello::has_cap(std::string_view cap) const {
  for (const auto& c : caps) {
    if (c == cap) return true;
  }
  return false;
}

AdapterSession::AdapterSession(const AdapterHandle& handle) : handle_(handle) {
  if (handle_.command.empty()) fail(ErrorCode::AdapterLaunch, "adapter command is empty");
  if (!(handle_.timeout_seconds > 0)) fail(ErrorCode::InvalidArgument, "adapter timeout must be > 0");
  if (handle_.protocol_version != kAdapterProtocol) {
    fail(ErrorCode::InvalidArgument, "unsupported adapter protocol " + std::to_string(handle_.protocol_version));
  }
  ignore_sigpipe();

  int in_pipe[2], out_pipe[2], err_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) fail(ErrorCode::AdapterLaunch, std::string("pipe: ") + std::strerror(errno));
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    fail(ErrorCode::AdapterLaunch, std::string("pipe: ") + std::strerror(errno));
  }
  // Carries the child's errno back if exec fails; closes on successful exec.
  if (::pipe2(err_pipe, O_CLOEXEC) != 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    fail(ErrorCode::AdapterLaunch, std::string("pipe: ") + std::strerror(errno));
  }

  std::vector<char*> argv;
  for (auto& arg : handle_.command) argv.push_back(arg.data());
  argv.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1]}) ::close(fd);
    fail(ErrorCode::AdapterLaunch, std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::execvp(argv[0], argv.data());
    const int err = errno;
    [[maybe_unused]] auto n = ::write(err_pipe[1], &err, sizeof err);
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];

  int child_errno = 0;
  ssize_t n = 0;
  do {
    n = ::read(err_pipe[0], &child_errno, sizeof child_errno);
  } while (n < 0 && errno == EINTR);
  ::close(err_pipe[0]);
  if (n == static_cast<ssize_t>(sizeof child_errno)) {
    terminate();
    fail(ErrorCode::AdapterLaunch,
         "cannot launch adapter '" + handle_.command.front() + "': " + std::strerror(child_errno));
  }

  nlohmann::json reply;
  try {
    reply = request({{"cmd", "hello"}, {"protocol", handle_.protocol_version}});
  } catch (...) {
    terminate();
    throw;
  }
  try {
    hello_.name = reply.value("name", std::string{});
    if (reply.contains("caps")) hello_.caps = reply.at("caps").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    terminate();
    fail(ErrorCode::AdapterProtocol, std::string("malformed hello reply: ") + e.what());
  }
}

AdapterSession::~AdapterSession() { terminate(); }

void AdapterSession::terminate() {
  close_fd(to_child_);
  close_fd(from_child_);
  if (pid_ <= 0 || reaped_) return;
  // Closing stdin asks the adapter to exit; give it a moment, then kill.
  const auto deadline = Clock::now() + std::chrono::seconds(2);
  while (Clock::now() < deadline) {
    const pid_t r = ::waitpid(pid_, &wait_status_, WNOHANG);
    if (r == pid_ || (r < 0 && errno != EINTR)) {
      reaped_ = true;
      return;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ::kill(pid_, SIGKILL);
  while (::waitpid(pid_, &wait_status_, 0) < 0 && errno == EINTR) {
  }
  reaped_ = true;
}

std::string AdapterSession::exit_description() {
  if (!reaped_ && pid_ > 0) {
    // Give a crashing child a moment to finish exiting.
    for (int i = 0; i < 200; ++i) {
      const pid_t r = ::waitpid(pid_, &wait_status_, WNOHANG);
      if (r == pid_) {
        reaped_ = true;
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }
  if (!reaped_) return "still running";
  if (WIFEXITED(wait_status_)) return "exited with status " + std::to_string(WEXITSTATUS(wait_status_));
  if (WIFSIGNALED(wait_status_)) return "killed by signal " + std::to_string(WTERMSIG(wait_status_));
  return "terminated";
}

void AdapterSession::send_line(const std::string& line, Clock::time_point deadline) {
  std::size_t done = 0;
  while (done < line.size()) {
    pollfd pfd{to_child_, POLLOUT, 0};
    const int rc = ::poll(&pfd, 1, remaining_ms(deadline));
    if (rc < 0) {
      if (errno == EINTR) continue;
      fail(ErrorCode::AdapterCrash, std::string("poll: ") + std::strerror(errno));
    }
    if (rc == 0) {
      ::kill(pid_, SIGKILL);
      fail(ErrorCode::AdapterTimeout, "adapter timed out after " + std::to_string(handle_.timeout_seconds) + " s");
    }
    const ssize_t n = ::write(to_child_, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      fail(ErrorCode::AdapterCrash, "adapter closed its input (" + exit_description() + ")");
    }
    done += static_cast<std::size_t>(n);
  }
}

std::string AdapterSession::read_line(Clock::time_point deadline) {
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    pollfd pfd{from_child_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, remaining_ms(deadline));
    if (rc < 0) {
      if (errno == EINTR) continue;
      fail(ErrorCode::AdapterCrash, std::string("poll: ") + std::strerror(errno));
    }
    if (rc == 0) {
      ::kill(pid_, SIGKILL);
      fail(ErrorCode::AdapterTimeout, "adapter timed out after " + std::to_string(handle_.timeout_seconds) + " s");
    }
    char chunk[65536];
    const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      fail(ErrorCode::AdapterCrash, std::string("read: ") + std::strerror(errno));
    }
    if (n == 0) fail(ErrorCode::AdapterCrash, "adapter closed its output (" + exit_description() + ")");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

nlohmann::json AdapterSession::request(const nlohmann::json& message) {
  if (to_child_ < 0) fail(ErrorCode::AdapterCrash, "adapter session is closed");
  const auto deadline =
      Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(handle_.timeout_seconds));
  send_line(message.dump() + "\n", deadline);
  const std::string line = read_line(deadline);
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::AdapterMalformed, std::string("adapter sent a malformed frame: ") + e.what());
  }
  if (!reply.is_object() || !reply.contains("ok") || !reply.at("ok").is_boolean()) {
    fail(ErrorCode::AdapterMalformed, "adapter reply lacks a boolean 'ok' field");
  }
  if (!reply.at("ok").get<bool>()) {
    std::string message_text = "unspecified error";
    if (reply.contains("error") && reply.at("error").is_string()) message_text = reply.at("error").get<std::string>();
    fail(ErrorCode::AdapterRejected, "adapter rejected '" + message.value("cmd", std::string{"?"}) +
                                         "': " + message_text);
  }
  return reply;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& rows, std::string_view what) {
  if (!rows.is_array()) fail(ErrorCode::AdapterMalformed, std::string(what) + " is not an array of rows");
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::Index p = 0;
  if (n > 0) {
    if (!rows[0].is_array()) fail(ErrorCode::AdapterMalformed, std::string(what) + " rows must be arrays");
    p = static_cast<Eigen::Index>(rows[0].size());
  }
  Eigen::MatrixXd m(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != p) {
      fail(ErrorCode::AdapterMalformed, std::string(what) + " has ragged rows");
    }
    for (Eigen::Index k = 0; k < p; ++k) {
      const auto& v = row[static_cast<std::size_t>(k)];
      if (!v.is_number()) fail(ErrorCode::AdapterMalformed, std::string(what) + " contains a non-number");
      m(i, k) = v.get<double>();
    }
  }
  return m;
}

}  // namespace halodet
