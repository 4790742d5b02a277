#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ergodic/baselines.hpp"
#include "ergodic/demos.hpp"
#include "ergodic/dynamics.hpp"
#include "ergodic/ergodic_mpc.hpp"
#include "ergodic/task_learning.hpp"

namespace ergodic::service
{

using Json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr unsigned short kDefaultPort = 8753;

struct ServiceConfig
{
  std::string host = "127.0.0.1";
  unsigned short port = kDefaultPort;  // 0 lets the OS pick
  double tick_hz = 50.0;
  std::vector<std::string> cors_origins;  // "*" admits any origin
  unsigned threads = 2;

  /// Overlays ERGO_PORT, ERGO_TICK_HZ and ERGO_CORS (comma separated) on `base`.
  static ServiceConfig from_env(ServiceConfig base);
  void validate() const;
};

/// Request failure carrying the HTTP status it maps to.
class ServiceError : public std::runtime_error
{
public:
  ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

private:
  int status_;
};

/// Density samples as {shape, lower, lengths, values}; values row-major with dimension 0 slowest.
Json density_json(const DensityGrid& grid);

/// Rollout summary for the live channel and HTTP replies.
Json summary_json(const RolloutResult& result, const MetricsRow& metrics, std::string_view task_id);

struct StoredTask
{
  std::string id;
  SystemKind system = SystemKind::cartpole;
  TaskDefinition task;
};

/// Learned tasks shared by every session.
class TaskStore
{
public:
  std::shared_ptr<const StoredTask> add(SystemKind system, TaskDefinition task);
  std::shared_ptr<const StoredTask> find(std::string_view id) const;
  std::vector<std::string> ids() const;

private:
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const StoredTask>, std::less<>> tasks_;
  std::uint64_t next_ = 1;
};

struct RolloutRequest
{
  double duration = 30.0;
  std::uint64_t seed = 0;
  double control_noise = 0.0;
  std::optional<Eigen::VectorXd> x0;  // defaults to the live state
  std::optional<double> q;
  std::optional<double> horizon;
  std::optional<double> sample_time;
  std::optional<int> max_iters;
  std::optional<double> barrier_weight;

  static RolloutRequest from_json(const Json& body);
};

/**
 * One client's live simulation.
 *
 * Ticks hold the most recent control for 1/tick_hz seconds of simulated time.
 * Recording samples the state once per tick. A controller rollout runs on its
 * own thread; the live sim is frozen until it finishes, and its states go out
 * to subscribers as rollout_state messages.
 */
class Session
{
public:
  using Sink = std::function<void(const Json&)>;

  Session(std::string id, SystemKind system, PlanarTask scenario, double tick_hz);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const std::string& id() const { return id_; }
  SystemKind system() const { return system_; }
  PlanarTask scenario() const { return scenario_; }
  double tick_period() const { return period_; }

  /// Advances one tick and broadcasts the state; nothing happens while a rollout runs.
  std::optional<Json> tick(int dropped = 0);

  /// One live-channel message in, replies for the sender out. Malformed input yields an error reply.
  std::vector<Json> handle(const Json& msg);
  std::vector<Json> handle_text(std::string_view text);

  Json describe() const;

  DemoSet demos() const;
  /// Adds demos of this session's system; ids already present are a conflict.
  std::vector<std::string> import_demos(const DemoSet& set);

  /// Body: {demo_ids?, mode, order?, beta?, gamma?, res?, clip?}.
  Json learn(const Json& body, TaskStore& tasks);

  /// Starts a controller rollout; with `wait` the call returns the summary when it ends.
  Json start_rollout(std::shared_ptr<const StoredTask> task, const RolloutRequest& request, bool wait);
  bool cancel_rollout();
  bool rollout_active() const { return rollout_active_.load(); }

  int subscribe(Sink sink);
  void unsubscribe(int token);

private:
  std::vector<Json> dispatch(const std::string& type, const Json& msg);
  Json state_message() const;
  void broadcast(const Json& msg);
  void join_rollout();

  std::string id_;
  SystemKind system_;
  PlanarTask scenario_;
  double period_;
  int substeps_;
  std::shared_ptr<const ControlAffineSystem> sys_;

  mutable std::mutex mutex_;
  Eigen::VectorXd x_;
  Eigen::VectorXd u_;
  long ticks_ = 0;
  double t_ = 0.0;
  long dropped_ = 0;
  std::optional<DemoRecorder> recorder_;
  long record_tick0_ = 0;
  std::vector<Demonstration> demos_;
  int recorded_ = 0;
  std::optional<Json> last_summary_;

  std::mutex rollout_mutex_;
  std::thread rollout_thread_;
  std::atomic<bool> rollout_active_{false};
  std::atomic<bool> cancel_{false};

  std::mutex sink_mutex_;
  std::map<int, Sink> sinks_;
  int next_sink_ = 1;
};

struct HttpRequest
{
  std::string method;
  std::string target;  // path plus optional query
  std::string body;
  std::string origin;
};

struct HttpResponse
{
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::vector<std::pair<std::string, std::string>> headers;
};

/// Session registry plus the HTTP routes, independent of the transport.
class Service
{
public:
  explicit Service(ServiceConfig cfg);

  const ServiceConfig& config() const { return cfg_; }
  TaskStore& tasks() { return tasks_; }

  HttpResponse handle(const HttpRequest& request);

  std::shared_ptr<Session> create_session(SystemKind system, PlanarTask scenario = PlanarTask::reach);
  std::shared_ptr<Session> find_session(std::string_view id) const;

  /// Called with each new session, e.g. to start its tick timer.
  void on_session_created(std::function<void(std::shared_ptr<Session>)> hook);

private:
  HttpResponse route(const HttpRequest& request);

  ServiceConfig cfg_;
  TaskStore tasks_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>, std::less<>> sessions_;
  std::uint64_t next_ = 1;
  std::function<void(std::shared_ptr<Session>)> created_hook_;
};

/**
 * HTTP + WebSocket front end. Each session ticks on its own strand from a
 * steady timer with absolute deadlines; a wake-up later than one period counts
 * the missed periods as dropped frames instead of catching up.
 */
class Server
{
public:
  explicit Server(std::shared_ptr<Service> service);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts the worker threads; returns the bound port.
  unsigned short start();
  unsigned short port() const;
  /// Blocks until stop() or SIGINT/SIGTERM.
  void wait();
  void stop();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ergodic::service
