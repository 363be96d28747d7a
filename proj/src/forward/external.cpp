#include "bae/external.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <optional>

#include <json.hpp>

extern char** environ;

namespace bae {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] {
    struct sigaction sa {};
    sa.sa_handler = SIG_IGN;
    sigaction(SIGPIPE, &sa, nullptr);
  });
}

/// One simulator process and its pipes.
class Child {
 public:
  explicit Child(const std::vector<std::string>& command) {
    int in_pipe[2];
    int out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) throw Error("external model: pipe() failed");
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) posix_spawn_file_actions_addclose(&actions, fd);

    std::vector<char*> argv;
    for (const auto& a : command) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    const int rc = posix_spawnp(&pid_, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    fcntl(to_child_, F_SETFD, FD_CLOEXEC);
    fcntl(from_child_, F_SETFD, FD_CLOEXEC);
    if (rc != 0) {
      pid_ = -1;
      throw Error("external model: cannot launch '" + command.front() + "': " + std::strerror(rc));
    }
  }

  ~Child() { terminate(); }
  Child(const Child&) = delete;
  Child& operator=(const Child&) = delete;

  void terminate() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
      kill(pid_, SIGKILL);
      waitpid(pid_, nullptr, 0);
      pid_ = -1;
    }
  }

  bool send_line(const std::string& line) {
    std::string data = line + "\n";
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
      const ssize_t n = write(to_child_, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        return false;
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
    return true;
  }

  enum class ReadStatus { line, timeout, closed };

  ReadStatus read_line(std::string& line, Clock::time_point deadline) {
    for (;;) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return ReadStatus::line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      if (left.count() <= 0) return ReadStatus::timeout;
      pollfd pfd{from_child_, POLLIN, 0};
      const int rc = poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
      if (rc < 0) {
        if (errno == EINTR) continue;
        return ReadStatus::closed;
      }
      if (rc == 0) return ReadStatus::timeout;
      char chunk[4096];
      const ssize_t n = read(from_child_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return ReadStatus::closed;
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

struct Handshake {
  Eigen::Index input_dim = 0;
  Eigen::Index output_dim = 0;
};

Handshake read_handshake(Child& child, std::chrono::milliseconds timeout) {
  std::string line;
  const auto status = child.read_line(line, Clock::now() + timeout);
  if (status != Child::ReadStatus::line) throw Error("external model: no handshake from simulator");
  try {
    const auto j = json::parse(line);
    if (j.at("protocol").get<std::string>() != kExternalProtocol)
      throw Error("external model: unsupported protocol " + j.at("protocol").dump());
    return {j.at("input_dim").get<Eigen::Index>(), j.at("output_dim").get<Eigen::Index>()};
  } catch (const json::exception& e) {
    throw Error(std::string("external model: malformed handshake: ") + e.what());
  }
}

}  // namespace

struct ExternalModel::Impl {
  ExternalModelSpec spec;
  Handshake shape;
  std::vector<std::unique_ptr<Child>> children;
  std::vector<bool> needs_restart;
  std::deque<std::size_t> idle;
  std::mutex mutex;
  std::condition_variable available;
  long long next_id = 0;

  std::unique_ptr<Child> launch() {
    auto child = std::make_unique<Child>(spec.command);
    const auto hs = read_handshake(*child, spec.timeout);
    if (!children.empty() && (hs.input_dim != shape.input_dim || hs.output_dim != shape.output_dim))
      throw Error("external model: restarted simulator reported different dimensions");
    shape = hs;
    return child;
  }

  EvalResult call(std::size_t slot, long long id, const Eigen::VectorXd& k) {
    if (needs_restart[slot]) {
      children[slot].reset();
      try {
        children[slot] = launch();
      } catch (const Error& e) {
        return EvalResult::failure(std::string("process-died: restart failed: ") + e.what());
      }
      needs_restart[slot] = false;
    }
    Child& child = *children[slot];
    json request = {{"id", id}, {"k", std::vector<double>(k.data(), k.data() + k.size())}};
    if (!child.send_line(request.dump())) {
      needs_restart[slot] = true;
      return EvalResult::failure("process-died: write to simulator failed");
    }
    std::string line;
    switch (child.read_line(line, Clock::now() + spec.timeout)) {
      case Child::ReadStatus::timeout:
        needs_restart[slot] = true;
        return EvalResult::failure("timeout: no reply within " + std::to_string(spec.timeout.count()) + " ms");
      case Child::ReadStatus::closed:
        needs_restart[slot] = true;
        return EvalResult::failure("process-died: simulator closed its output");
      case Child::ReadStatus::line:
        break;
    }
    try {
      const auto reply = json::parse(line);
      if (reply.at("id").get<long long>() != id) {
        needs_restart[slot] = true;
        return EvalResult::failure("protocol-violation: reply id does not match request");
      }
      if (reply.contains("error")) return EvalResult::failure("simulator-error: " + reply.at("error").get<std::string>());
      const auto values = reply.at("y").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(values.size()) != shape.output_dim) {
        needs_restart[slot] = true;
        return EvalResult::failure("protocol-violation: reply has wrong length");
      }
      return EvalResult(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
    } catch (const json::exception& e) {
      needs_restart[slot] = true;
      return EvalResult::failure(std::string("protocol-violation: ") + e.what());
    }
  }
};

ExternalModel::ExternalModel(ExternalModelSpec spec) : impl_(std::make_unique<Impl>()) {
  require(!spec.command.empty(), "ExternalModel: empty command");
  require(spec.processes >= 1, "ExternalModel: need at least one process");
  ignore_sigpipe();
  impl_->spec = std::move(spec);
  for (int i = 0; i < impl_->spec.processes; ++i) {
    impl_->children.push_back(impl_->launch());
    impl_->needs_restart.push_back(false);
    impl_->idle.push_back(static_cast<std::size_t>(i));
  }
}

ExternalModel::~ExternalModel() = default;

Eigen::Index ExternalModel::input_dim() const { return impl_->shape.input_dim; }
Eigen::Index ExternalModel::output_dim() const { return impl_->shape.output_dim; }
const ExternalModelSpec& ExternalModel::spec() const noexcept { return impl_->spec; }

EvalResult ExternalModel::evaluate(const Eigen::VectorXd& k) const {
  require(k.size() == input_dim(), "ExternalModel: parameter length mismatch");
  std::size_t slot;
  long long id;
  {
    std::unique_lock lock(impl_->mutex);
    impl_->available.wait(lock, [&] { return !impl_->idle.empty(); });
    slot = impl_->idle.front();
    impl_->idle.pop_front();
    id = impl_->next_id++;
  }
  auto result = impl_->call(slot, id, k);
  {
    std::lock_guard lock(impl_->mutex);
    impl_->idle.push_back(slot);
  }
  impl_->available.notify_one();
  return result;
}

}  // namespace bae
