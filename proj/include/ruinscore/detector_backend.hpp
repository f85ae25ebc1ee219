#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ruinscore/dataset_io.hpp"
#include "ruinscore/error.hpp"
#include "ruinscore/fusion.hpp"
#include "ruinscore/types.hpp"

extern char** environ;

namespace ruinscore {

enum class BackendTask { Scene, Components, Damage };

template <>
struct EnumTraits<BackendTask> {
  static constexpr std::array<std::string_view, 3> names = {"scene", "components", "damage"};
  static constexpr std::string_view kind = "task";
};

// Supplies the three evidence sources of the cascade for one image.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual SceneLabel scene(const ImageEntry& entry) = 0;
  virtual std::vector<ComponentDetection> components(const ImageEntry& entry) = 0;
  virtual std::vector<DamageDetection> damages(const ImageEntry& entry) = 0;
};

// Reads evidence from the detection files referenced by the manifest. Never
// opens image bytes. Without a scene override the scene is reported as
// Outside with zero confidence, so no indoor-specific filtering kicks in.
class FileBackend final : public Backend {
 public:
  explicit FileBackend(ClassMaps class_maps = {}) : class_maps_(std::move(class_maps)) {}

  SceneLabel scene(const ImageEntry&) override { return {SceneClass::Outside, 0.0}; }

  std::vector<ComponentDetection> components(const ImageEntry& entry) override {
    if (!entry.components_file) return {};
    return load_detections<ComponentClass>(*entry.components_file, class_maps_.component);
  }

  std::vector<DamageDetection> damages(const ImageEntry& entry) override {
    if (!entry.damage_file) throw Error(ErrorKind::MissingEvidence, "damage");
    return load_detections<DamageClass>(*entry.damage_file, class_maps_.damage);
  }

 private:
  ClassMaps class_maps_;
};

// Scene first, then components, then damage; one request per task. Every
// stage runs; a manifest scene override only replaces the scene answer.
inline CascadeOutput run_cascade(const ImageEntry& entry, Backend& backend, const FusionConfig& /*config*/) {
  CascadeOutput out;
  out.image_id = entry.id;
  out.scene = backend.scene(entry);
  if (entry.scene_override) out.scene = *entry.scene_override;
  out.components = backend.components(entry);
  out.damages = backend.damages(entry);
  return out;
}

// ---------------------------------------------------------------------------
// External process backend: newline-delimited JSON over the child's stdio.

struct BackendRequest {
  std::string image;
  BackendTask task = BackendTask::Scene;
};

struct BackendResponse {
  BackendTask task = BackendTask::Scene;
  std::optional<SceneLabel> scene;
  std::vector<ComponentDetection> components;
  std::vector<DamageDetection> damages;
};

struct ExternalBackendOptions {
  std::vector<std::string> command;
  double timeout_s = 30.0;
};

inline std::string request_line(const BackendRequest& req) {
  return json{{"image", req.image}, {"task", name_of(req.task)}}.dump() + "\n";
}

// Validates one response line against the schema for the requested task.
inline BackendResponse parse_response_line(std::string_view line, BackendTask task) {
  auto violation = [](const std::string& what) -> Error { return Error(ErrorKind::ProtocolViolation, what); };

  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) throw violation("malformed JSON");
  if (!j.is_object()) throw violation("response is not an object");
  if (j.contains("task")) {
    if (!j["task"].is_string() || j["task"].get<std::string>() != name_of(task))
      throw violation("task mismatch");
  }

  BackendResponse resp;
  resp.task = task;
  try {
    switch (task) {
      case BackendTask::Scene: {
        detail::reject_unknown_keys(j, {"scene", "confidence", "task", "image"}, "");
        if (!j.contains("scene") || !j["scene"].is_string()) throw violation("scene");
        auto cls = enum_from_name<SceneClass>(j["scene"].get<std::string>());
        if (!cls) throw violation("unknown scene " + j["scene"].get<std::string>());
        double conf = 1.0;
        if (j.contains("confidence")) conf = detail::number_at(j["confidence"], "confidence");
        if (!valid_confidence(conf)) throw violation("confidence");
        resp.scene = SceneLabel{*cls, conf};
        break;
      }
      case BackendTask::Components: resp.components = detections_from_json<ComponentClass>(j); break;
      case BackendTask::Damage: resp.damages = detections_from_json<DamageClass>(j); break;
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::ProtocolViolation) throw;
    throw violation(e.what());
  }
  return resp;
}

// A serial channel to one child process. Calls from several threads are
// serialized; spawn one handle per worker for parallelism.
class ExternalBackend final : public Backend {
 public:
  explicit ExternalBackend(ExternalBackendOptions opts) : opts_(std::move(opts)) {
    if (opts_.command.empty()) throw Error(ErrorKind::BackendUnavailable, "empty backend command");
    ignore_sigpipe();
    spawn();
  }

  ExternalBackend(const ExternalBackend&) = delete;
  ExternalBackend& operator=(const ExternalBackend&) = delete;

  ~ExternalBackend() override { shutdown(); }

  BackendResponse exchange(const BackendRequest& req) {
    std::lock_guard lock(mu_);
    if (pid_ <= 0) throw Error(ErrorKind::BackendUnavailable, "backend process is not running");
    write_all(request_line(req));
    const std::string line = read_line();
    return parse_response_line(line, req.task);
  }

  SceneLabel scene(const ImageEntry& entry) override { return *exchange({image_of(entry), BackendTask::Scene}).scene; }

  std::vector<ComponentDetection> components(const ImageEntry& entry) override {
    return exchange({image_of(entry), BackendTask::Components}).components;
  }

  std::vector<DamageDetection> damages(const ImageEntry& entry) override {
    return exchange({image_of(entry), BackendTask::Damage}).damages;
  }

 private:
  static void ignore_sigpipe() {
    static std::once_flag once;
    std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
  }

  static std::string image_of(const ImageEntry& entry) {
    if (!entry.image_path) throw Error(ErrorKind::MissingEvidence, "image_path");
    return *entry.image_path;
  }

  void spawn() {
    int in_pipe[2];
    int out_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw Error(ErrorKind::BackendUnavailable, std::strerror(errno));
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      throw Error(ErrorKind::BackendUnavailable, std::strerror(errno));
    }

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);

    std::vector<char*> argv;
    for (auto& a : opts_.command) argv.push_back(a.data());
    argv.push_back(nullptr);

    pid_t pid = -1;
    const int rc = ::posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    if (rc != 0) {
      ::close(in_pipe[1]);
      ::close(out_pipe[0]);
      throw Error(ErrorKind::BackendUnavailable, opts_.command[0] + ": " + std::strerror(rc));
    }
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
  }

  [[noreturn]] void fail_exited() {
    int status = 0;
    int code = -1;
    if (::waitpid(pid_, &status, 0) == pid_) {
      if (WIFEXITED(status)) code = WEXITSTATUS(status);
      else if (WIFSIGNALED(status)) code = 128 + WTERMSIG(status);
    }
    pid_ = -1;
    close_fds();
    throw Error(ErrorKind::ProcessExited, std::to_string(code));
  }

  void write_all(std::string_view data) {
    while (!data.empty()) {
      const ssize_t n = ::write(to_child_, data.data(), data.size());
      if (n < 0) {
        if (errno == EINTR) continue;
        fail_exited();
      }
      data.remove_prefix(static_cast<std::size_t>(n));
    }
  }

  std::string read_line() {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + std::chrono::duration<double>(opts_.timeout_s);
    for (;;) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now()).count();
      if (left <= 0) timeout();
      pollfd pfd{from_child_, POLLIN, 0};
      const int rc = ::poll(&pfd, 1, static_cast<int>(left));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorKind::BackendUnavailable, std::strerror(errno));
      }
      if (rc == 0) timeout();
      char chunk[4096];
      const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorKind::BackendUnavailable, std::strerror(errno));
      }
      if (n == 0) fail_exited();
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  // The channel is out of sync after a missed reply, so the child is killed.
  [[noreturn]] void timeout() {
    kill_child();
    throw Error(ErrorKind::Timeout, fmt::format("{}", opts_.timeout_s));
  }

  void kill_child() {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
      pid_ = -1;
    }
    close_fds();
  }

  void close_fds() {
    if (to_child_ >= 0) ::close(to_child_);
    if (from_child_ >= 0) ::close(from_child_);
    to_child_ = from_child_ = -1;
  }

  // EOF on stdin asks the child to exit; it gets a short grace period.
  void shutdown() {
    if (pid_ <= 0) return close_fds();
    if (to_child_ >= 0) {
      ::close(to_child_);
      to_child_ = -1;
    }
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
        pid_ = -1;
        return close_fds();
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    kill_child();
  }

  ExternalBackendOptions opts_;
  std::mutex mu_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

inline BackendResponse external_exchange(ExternalBackend& backend, const BackendRequest& request) {
  return backend.exchange(request);
}

}  // namespace ruinscore
