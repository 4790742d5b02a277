#include "ergodic/service.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "ergodic/errors.hpp"

namespace ergodic::service
{
namespace
{
constexpr double kSimDt = 0.002;

Json vec_json(const Eigen::VectorXd& v)
{
  return std::vector<double>(v.data(), v.data() + v.size());
}

Json opt_json(const std::optional<double>& v)
{
  return v ? Json(*v) : Json(nullptr);
}

Json error_message(const std::string& what)
{
  return {{"type", "error"}, {"message", what}};
}

std::vector<std::string> split(std::string_view s, char sep)
{
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size())
  {
    const std::size_t end = std::min(s.find(sep, start), s.size());
    out.emplace_back(s.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

std::string trim(std::string_view s)
{
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos)
  {
    return {};
  }
  return std::string(s.substr(b, s.find_last_not_of(" \t") - b + 1));
}

Eigen::VectorXd json_vector(const Json& j, const char* what)
{
  if (!j.is_array())
  {
    throw ServiceError(400, std::string(what) + " must be an array of numbers");
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
  {
    if (!j[i].is_number() || !std::isfinite(j[i].get<double>()))
    {
      throw ServiceError(400, std::string(what) + " must hold finite numbers");
    }
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Json parse_body(const std::string& body)
{
  if (trim(body).empty())
  {
    return Json::object();
  }
  Json j = Json::parse(body);
  if (!j.is_object())
  {
    throw ServiceError(400, "request body must be a JSON object");
  }
  return j;
}

HttpResponse json_response(int status, const Json& body)
{
  HttpResponse r;
  r.status = status;
  r.body = body.dump();
  return r;
}

struct Target
{
  std::vector<std::string> segments;
  std::map<std::string, std::string, std::less<>> query;
};

Target parse_target(std::string_view target)
{
  Target out;
  const auto q = target.find('?');
  const std::string_view path = target.substr(0, q);
  for (auto& seg : split(path, '/'))
  {
    if (!seg.empty())
    {
      out.segments.push_back(seg);
    }
  }
  if (q != std::string_view::npos)
  {
    for (auto& kv : split(target.substr(q + 1), '&'))
    {
      if (kv.empty())
      {
        continue;
      }
      const auto eq = kv.find('=');
      out.query[kv.substr(0, eq)] = eq == std::string::npos ? std::string() : kv.substr(eq + 1);
    }
  }
  return out;
}

int query_int(const Target& t, std::string_view key, int fallback)
{
  const auto it = t.query.find(key);
  if (it == t.query.end())
  {
    return fallback;
  }
  int v = 0;
  const auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc() || ptr != it->second.data() + it->second.size())
  {
    throw ServiceError(400, "query parameter " + std::string(key) + " must be an integer");
  }
  return v;
}

bool query_flag(const Target& t, std::string_view key, bool fallback)
{
  const auto it = t.query.find(key);
  if (it == t.query.end())
  {
    return fallback;
  }
  return it->second != "0" && it->second != "false";
}

std::size_t grid_resolution(int res)
{
  if (res < 2 || res > 512)
  {
    throw ServiceError(400, "grid resolution must be in [2, 512]");
  }
  return static_cast<std::size_t>(res);
}
}  // namespace

// ---------------------------------------------------------------------------
// Config

ServiceConfig ServiceConfig::from_env(ServiceConfig base)
{
  if (const char* p = std::getenv("ERGO_PORT"); p && *p)
  {
    const int port = std::stoi(p);
    if (port < 0 || port > 65535)
    {
      throw std::invalid_argument("ERGO_PORT out of range");
    }
    base.port = static_cast<unsigned short>(port);
  }
  if (const char* p = std::getenv("ERGO_TICK_HZ"); p && *p)
  {
    base.tick_hz = std::stod(p);
  }
  if (const char* p = std::getenv("ERGO_CORS"); p && *p)
  {
    base.cors_origins.clear();
    for (const auto& o : split(p, ','))
    {
      if (auto t = trim(o); !t.empty())
      {
        base.cors_origins.push_back(t);
      }
    }
  }
  return base;
}

void ServiceConfig::validate() const
{
  if (!(tick_hz > 0.0) || tick_hz > 1000.0)
  {
    throw std::invalid_argument("tick rate must be in (0, 1000] Hz");
  }
  if (threads == 0)
  {
    throw std::invalid_argument("need at least one worker thread");
  }
}

// ---------------------------------------------------------------------------
// JSON views

Json density_json(const DensityGrid& grid)
{
  return {{"shape", grid.shape},
          {"lower", grid.domain.lower()},
          {"lengths", grid.domain.lengths()},
          {"values", grid.values}};
}

Json summary_json(const RolloutResult& result, const MetricsRow& metrics, std::string_view task_id)
{
  Json j = {{"type", "rollout_summary"},
            {"task_id", task_id},
            {"system", std::string(to_string(result.system))},
            {"samples", result.traj.size()},
            {"duration", result.traj.duration()},
            {"replans", result.replans.size()},
            {"final_eps", result.final_eps},
            {"cancelled", result.cancelled},
            {"failed", result.failed},
            {"error", result.error}};
  j["success_time"] = opt_json(metrics.success_time);
  j["first_success_time"] = opt_json(metrics.first_success);
  j["eps_true"] = opt_json(metrics.eps_true);
  j["cleaning_m"] = opt_json(metrics.cleaning_m);
  j["reach_success"] = metrics.reach ? Json(*metrics.reach) : Json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Tasks

std::shared_ptr<const StoredTask> TaskStore::add(SystemKind system, TaskDefinition task)
{
  std::lock_guard lock(mutex_);
  auto stored = std::make_shared<StoredTask>();
  stored->id = "t" + std::to_string(next_++);
  stored->system = system;
  stored->task = std::move(task);
  tasks_[stored->id] = stored;
  return stored;
}

std::shared_ptr<const StoredTask> TaskStore::find(std::string_view id) const
{
  std::lock_guard lock(mutex_);
  const auto it = tasks_.find(id);
  return it == tasks_.end() ? nullptr : it->second;
}

std::vector<std::string> TaskStore::ids() const
{
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : tasks_)
  {
    out.push_back(id);
  }
  return out;
}

RolloutRequest RolloutRequest::from_json(const Json& body)
{
  RolloutRequest r;
  r.duration = body.value("duration", r.duration);
  r.seed = body.value("seed", r.seed);
  r.control_noise = body.value("control_noise", r.control_noise);
  if (body.contains("x0"))
  {
    r.x0 = json_vector(body["x0"], "x0");
  }
  if (body.contains("mpc"))
  {
    const Json& m = body["mpc"];
    if (!m.is_object())
    {
      throw ServiceError(400, "mpc must be an object");
    }
    if (m.contains("q")) r.q = m["q"].get<double>();
    if (m.contains("horizon")) r.horizon = m["horizon"].get<double>();
    if (m.contains("sample_time")) r.sample_time = m["sample_time"].get<double>();
    if (m.contains("max_iters")) r.max_iters = m["max_iters"].get<int>();
    if (m.contains("barrier_weight")) r.barrier_weight = m["barrier_weight"].get<double>();
  }
  if (!(r.duration > 0.0) || r.duration > 600.0)
  {
    throw ServiceError(400, "rollout duration must be in (0, 600] s");
  }
  if (!(r.control_noise >= 0.0))
  {
    throw ServiceError(400, "control_noise must be non-negative");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Session

Session::Session(std::string id, SystemKind system, PlanarTask scenario, double tick_hz)
  : id_(std::move(id))
  , system_(system)
  , scenario_(scenario)
  , period_(1.0 / tick_hz)
  , substeps_(std::max(1, static_cast<int>(std::lround(period_ / kSimDt))))
  , sys_(make_system(system))
{
  x_ = sys_->rest_state();
  u_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sys_->control_dim()));
}

Session::~Session()
{
  cancel_ = true;
  join_rollout();
}

void Session::join_rollout()
{
  std::thread done;
  {
    std::lock_guard lock(rollout_mutex_);
    done = std::move(rollout_thread_);
  }
  if (done.joinable())
  {
    done.join();
  }
}

Json Session::state_message() const
{
  bool success = false;
  if (system_ == SystemKind::cartpole)
  {
    success = in_success_region(x_);
  }
  else if (scenario_ == PlanarTask::reach)
  {
    const Disc target = planar_scenario(PlanarTask::reach).target;
    success = target.distance(x_[0], x_[1]) <= target.radius;
  }
  return {{"type", "state"},
          {"t", t_},
          {"x", vec_json(x_)},
          {"u", vec_json(u_)},
          {"in_success_region", success},
          {"recording", recorder_.has_value()},
          {"dropped_frames", dropped_}};
}

std::optional<Json> Session::tick(int dropped)
{
  Json msg;
  {
    std::lock_guard lock(mutex_);
    if (rollout_active_)
    {
      return std::nullopt;
    }
    dropped_ += dropped;
    const double h = period_ / substeps_;
    try
    {
      for (int s = 0; s < substeps_; ++s)
      {
        x_ = step_rk4(*sys_, x_, u_, h);
      }
    }
    catch (const IntegrationDiverged&)
    {
      x_ = sys_->rest_state();
      u_.setZero();
    }
    ++ticks_;
    t_ = static_cast<double>(ticks_) * period_;
    if (recorder_)
    {
      recorder_->push(static_cast<double>(ticks_ - record_tick0_) * period_, x_);
    }
    msg = state_message();
  }
  broadcast(msg);
  return msg;
}

std::vector<Json> Session::handle_text(std::string_view text)
{
  Json msg;
  try
  {
    msg = Json::parse(text);
  }
  catch (const Json::exception& e)
  {
    return {error_message(std::string("malformed message: ") + e.what())};
  }
  return handle(msg);
}

std::vector<Json> Session::handle(const Json& msg)
{
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
  {
    return {error_message("message needs a string 'type'")};
  }
  try
  {
    return dispatch(msg["type"].get<std::string>(), msg);
  }
  catch (const std::exception& e)
  {
    return {error_message(e.what())};
  }
}

std::vector<Json> Session::dispatch(const std::string& type, const Json& msg)
{
  if (type == "cancel_rollout")
  {
    return {cancel_rollout() ? Json{{"type", "rollout_cancelling"}} : error_message("no rollout is running")};
  }

  std::lock_guard lock(mutex_);
  if (rollout_active_)
  {
    return {error_message("a rollout is running; live input is paused")};
  }
  if (type == "control")
  {
    const Eigen::VectorXd u = json_vector(msg.value("u", Json()), "u");
    if (static_cast<std::size_t>(u.size()) != sys_->control_dim())
    {
      return {error_message("control has " + std::to_string(u.size()) + " entries, " + std::string(to_string(system_)) +
                            " takes " + std::to_string(sys_->control_dim()))};
    }
    u_ = sys_->clamp_control(u);
    return {};
  }
  if (type == "start_recording")
  {
    if (recorder_)
    {
      return {error_message("already recording")};
    }
    recorder_.emplace(system_, sys_->state_dim());
    record_tick0_ = ticks_;
    recorder_->push(0.0, x_);
    return {{{"type", "recording_started"}, {"t", t_}}};
  }
  if (type == "stop_recording")
  {
    if (!recorder_)
    {
      return {error_message("not recording")};
    }
    Label label;
    try
    {
      label = label_from_string(msg.value("label", std::string()));
    }
    catch (const std::exception& e)
    {
      return {error_message(std::string("stop_recording needs label positive or negative: ") + e.what())};
    }
    if (recorder_->size() < 2)
    {
      return {error_message("recording holds fewer than 2 samples; let the sim tick first")};
    }
    std::string demo_id = msg.value("id", std::string());
    if (demo_id.empty())
    {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "demo_%03d", ++recorded_);
      demo_id = buf;
    }
    for (const auto& d : demos_)
    {
      if (d.id == demo_id)
      {
        return {error_message("demo id '" + demo_id + "' already exists")};
      }
    }
    Demonstration demo = recorder_->finalize(demo_id, label, Source::human);
    recorder_.reset();
    Json reply = {{"type", "demo_recorded"},
                  {"demo_id", demo.id},
                  {"label", std::string(to_string(label))},
                  {"samples", demo.samples.size()},
                  {"duration", demo.duration()}};
    demos_.push_back(std::move(demo));
    return {reply};
  }
  if (type == "reset")
  {
    x_ = sys_->rest_state();
    u_.setZero();
    return {state_message()};
  }
  return {error_message("unknown message type '" + type + "'")};
}

Json Session::describe() const
{
  std::lock_guard lock(mutex_);
  Json demos = Json::array();
  for (const auto& d : demos_)
  {
    demos.push_back({{"id", d.id},
                     {"label", std::string(to_string(d.label))},
                     {"source", std::string(to_string(d.source))},
                     {"samples", d.samples.size()},
                     {"duration", d.duration()}});
  }
  Json j = state_message();
  j.erase("type");
  j["id"] = id_;
  j["system"] = std::string(to_string(system_));
  if (system_ == SystemKind::planar)
  {
    j["scenario"] = std::string(to_string(scenario_));
  }
  j["tick_hz"] = 1.0 / period_;
  j["recording_samples"] = recorder_ ? recorder_->size() : 0;
  j["rollout_active"] = rollout_active_.load();
  j["demos"] = demos;
  j["last_rollout"] = last_summary_ ? *last_summary_ : Json(nullptr);
  return j;
}

DemoSet Session::demos() const
{
  std::lock_guard lock(mutex_);
  DemoSet set = DemoSet::for_system(system_);
  set.demos = demos_;
  return set;
}

std::vector<std::string> Session::import_demos(const DemoSet& set)
{
  if (set.system != system_)
  {
    throw ServiceError(400, "demo file is for " + std::string(to_string(set.system)) + ", session runs " +
                                std::string(to_string(system_)));
  }
  std::lock_guard lock(mutex_);
  for (const auto& d : set.demos)
  {
    validate(d);
    for (const auto& have : demos_)
    {
      if (have.id == d.id)
      {
        throw ServiceError(409, "demo id '" + d.id + "' already exists");
      }
    }
  }
  std::vector<std::string> ids;
  for (const auto& d : set.demos)
  {
    demos_.push_back(d);
    ids.push_back(d.id);
  }
  return ids;
}

Json Session::learn(const Json& body, TaskStore& tasks)
{
  const FusionMode mode = mode_from_string(body.value("mode", std::string("posonly")));
  FusionConfig cfg;
  cfg.order = body.value("order", cfg.order);
  cfg.beta = body.value("beta", cfg.beta);
  cfg.gamma = body.value("gamma", cfg.gamma);
  const std::size_t res = grid_resolution(body.value("res", 64));
  const bool clip = body.value("clip", true);

  DemoSet set = DemoSet::for_system(system_);
  {
    std::lock_guard lock(mutex_);
    if (body.contains("demo_ids"))
    {
      for (const auto& id : body["demo_ids"])
      {
        const std::string want = id.get<std::string>();
        const auto it = std::find_if(demos_.begin(), demos_.end(), [&](const Demonstration& d) { return d.id == want; });
        if (it == demos_.end())
        {
          throw ServiceError(404, "no demo '" + want + "' in session " + id_);
        }
        set.demos.push_back(*it);
      }
    }
    else
    {
      set.demos = demos_;
    }
  }
  TaskDefinition task = learn_task(set, mode, cfg);
  const DensityGrid grid = reconstruct_density(task.phi, task.domain, res, clip);
  Json provenance = Json::array();
  for (const auto& p : task.provenance)
  {
    provenance.push_back({{"id", p.id}, {"weight", p.weight}});
  }
  const auto stored = tasks.add(system_, std::move(task));
  return {{"task_id", stored->id},
          {"mode", std::string(to_string(mode))},
          {"order", stored->task.order()},
          {"provenance", provenance},
          {"grid", density_json(grid)}};
}

Json Session::start_rollout(std::shared_ptr<const StoredTask> task, const RolloutRequest& request, bool wait)
{
  if (task->system != system_)
  {
    throw ServiceError(400, "task " + task->id + " was learned for " + std::string(to_string(task->system)));
  }
  MpcConfig cfg = default_mpc_config(*sys_);
  cfg.order = task->task.order();
  if (request.q) cfg.q = *request.q;
  if (request.horizon) cfg.horizon = *request.horizon;
  if (request.sample_time) cfg.sample_time = *request.sample_time;
  if (request.max_iters) cfg.max_iters = *request.max_iters;
  if (request.barrier_weight) cfg.barrier_weight = *request.barrier_weight;
  cfg.validate(*sys_);

  std::unique_lock guard(rollout_mutex_);
  if (rollout_active_)
  {
    throw ServiceError(409, "a rollout is already running in session " + id_);
  }
  Eigen::VectorXd x0;
  {
    std::lock_guard lock(mutex_);
    if (recorder_)
    {
      throw ServiceError(409, "stop recording before starting a rollout");
    }
    x0 = request.x0.value_or(x_);
  }
  if (static_cast<std::size_t>(x0.size()) != sys_->state_dim())
  {
    throw ServiceError(400, "x0 must have " + std::to_string(sys_->state_dim()) + " entries");
  }
  if (rollout_thread_.joinable())
  {
    rollout_thread_.join();
  }
  cancel_ = false;
  rollout_active_ = true;
  broadcast({{"type", "rollout_started"}, {"task_id", task->id}, {"duration", request.duration}});

  auto work = [this, task, cfg, x0, request]() -> Json {
    RolloutOptions opt;
    opt.seed = request.seed;
    opt.control_noise = request.control_noise;
    opt.record_period = period_;
    std::size_t sent = 0;
    auto stream = [&](const RolloutResult& r) {
      for (; sent < r.traj.size(); ++sent)
      {
        const auto row = static_cast<Eigen::Index>(sent);
        broadcast({{"type", "rollout_state"},
                   {"t", r.traj.t[sent]},
                   {"x", vec_json(r.traj.x.row(row).transpose())},
                   {"u", vec_json(r.controls.row(row).transpose())}});
      }
    };
    opt.on_tick = [&](const RolloutResult& r) {
      stream(r);
      return !cancel_.load();
    };
    RolloutResult result;
    try
    {
      result = run_closed_loop(sys_, task->task, cfg, x0, request.duration, opt);
    }
    catch (const std::exception& e)
    {
      result.system = system_;
      result.failed = true;
      result.error = e.what();
    }
    stream(result);
    MetricsRow metrics;
    if (result.traj.size() >= 2)
    {
      metrics = score_rollout(result.traj, system_, scenario_, nullptr, task->id, std::string(to_string(task->task.mode)));
    }
    const Json summary = summary_json(result, metrics, task->id);
    {
      std::lock_guard lock(mutex_);
      last_summary_ = summary;
    }
    rollout_active_ = false;
    broadcast(summary);
    return summary;
  };

  if (wait)
  {
    guard.unlock();
    return work();
  }
  rollout_thread_ = std::thread(work);
  return {{"status", "started"}, {"task_id", task->id}};
}

bool Session::cancel_rollout()
{
  if (!rollout_active_)
  {
    return false;
  }
  cancel_ = true;
  return true;
}

int Session::subscribe(Sink sink)
{
  std::lock_guard lock(sink_mutex_);
  sinks_[next_sink_] = std::move(sink);
  return next_sink_++;
}

void Session::unsubscribe(int token)
{
  std::lock_guard lock(sink_mutex_);
  sinks_.erase(token);
}

void Session::broadcast(const Json& msg)
{
  // Sinks run unlocked so one may unsubscribe itself.
  std::vector<Sink> sinks;
  {
    std::lock_guard lock(sink_mutex_);
    for (const auto& [_, sink] : sinks_)
    {
      sinks.push_back(sink);
    }
  }
  for (const auto& sink : sinks)
  {
    sink(msg);
  }
}

// ---------------------------------------------------------------------------
// Service

Service::Service(ServiceConfig cfg) : cfg_(std::move(cfg))
{
  cfg_.validate();
}

std::shared_ptr<Session> Service::create_session(SystemKind system, PlanarTask scenario)
{
  std::shared_ptr<Session> s;
  std::function<void(std::shared_ptr<Session>)> hook;
  {
    std::lock_guard lock(mutex_);
    s = std::make_shared<Session>("s" + std::to_string(next_++), system, scenario, cfg_.tick_hz);
    sessions_[s->id()] = s;
    hook = created_hook_;
  }
  if (hook)
  {
    hook(s);
  }
  return s;
}

std::shared_ptr<Session> Service::find_session(std::string_view id) const
{
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

void Service::on_session_created(std::function<void(std::shared_ptr<Session>)> hook)
{
  std::lock_guard lock(mutex_);
  created_hook_ = std::move(hook);
}

HttpResponse Service::handle(const HttpRequest& request)
{
  HttpResponse r;
  try
  {
    r = route(request);
  }
  catch (const ServiceError& e)
  {
    r = json_response(e.status(), {{"error", e.what()}});
  }
  catch (const LabelMissingError& e)
  {
    r = json_response(422, {{"error", e.what()}});
  }
  catch (const Json::exception& e)
  {
    r = json_response(400, {{"error", std::string("bad JSON: ") + e.what()}});
  }
  catch (const std::invalid_argument& e)
  {
    r = json_response(400, {{"error", e.what()}});
  }
  catch (const ParseError& e)
  {
    r = json_response(400, {{"error", e.what()}});
  }
  catch (const std::exception& e)
  {
    r = json_response(500, {{"error", e.what()}});
  }

  if (!request.origin.empty())
  {
    const bool any = std::find(cfg_.cors_origins.begin(), cfg_.cors_origins.end(), "*") != cfg_.cors_origins.end();
    const bool listed =
        std::find(cfg_.cors_origins.begin(), cfg_.cors_origins.end(), request.origin) != cfg_.cors_origins.end();
    if (any || listed)
    {
      r.headers.emplace_back("Access-Control-Allow-Origin", any ? "*" : request.origin);
      r.headers.emplace_back("Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS");
      r.headers.emplace_back("Access-Control-Allow-Headers", "Content-Type");
      r.headers.emplace_back("Vary", "Origin");
    }
  }
  return r;
}

HttpResponse Service::route(const HttpRequest& request)
{
  const Target target = parse_target(request.target);
  const auto& seg = target.segments;
  const std::string& method = request.method;

  if (method == "OPTIONS")
  {
    HttpResponse r;
    r.status = 204;
    r.content_type.clear();
    return r;
  }
  auto need = [&](const char* m) {
    if (method != m)
    {
      throw ServiceError(405, method + " not allowed here");
    }
  };
  auto session_or_404 = [&](const std::string& id) {
    auto s = find_session(id);
    if (!s)
    {
      throw ServiceError(404, "no session '" + id + "'");
    }
    return s;
  };
  auto task_or_404 = [&](const std::string& id) {
    auto t = tasks_.find(id);
    if (!t)
    {
      throw ServiceError(404, "no task '" + id + "'");
    }
    return t;
  };

  if (seg.size() == 1 && seg[0] == "health")
  {
    need("GET");
    std::size_t n = 0;
    {
      std::lock_guard lock(mutex_);
      n = sessions_.size();
    }
    return json_response(200, {{"status", "ok"}, {"version", kVersion}, {"sessions", n}});
  }

  if (!seg.empty() && seg[0] == "sessions")
  {
    if (seg.size() == 1)
    {
      if (method == "GET")
      {
        Json ids = Json::array();
        std::lock_guard lock(mutex_);
        for (const auto& [id, _] : sessions_)
        {
          ids.push_back(id);
        }
        return json_response(200, {{"sessions", ids}});
      }
      need("POST");
      const Json body = parse_body(request.body);
      if (!body.contains("system") || !body["system"].is_string())
      {
        throw ServiceError(400, "body needs a string 'system'");
      }
      const SystemKind system = system_from_string(body["system"].get<std::string>());
      const PlanarTask scenario = planar_task_from_string(body.value("scenario", std::string("reach")));
      return json_response(201, create_session(system, scenario)->describe());
    }
    auto session = session_or_404(seg[1]);
    if (seg.size() == 2)
    {
      need("GET");
      return json_response(200, session->describe());
    }
    if (seg.size() == 3 && seg[2] == "learn")
    {
      need("POST");
      return json_response(200, session->learn(parse_body(request.body), tasks_));
    }
    if (seg.size() == 3 && seg[2] == "rollout")
    {
      need("POST");
      const Json body = parse_body(request.body);
      if (!body.contains("task_id") || !body["task_id"].is_string())
      {
        throw ServiceError(400, "body needs a string 'task_id'");
      }
      auto task = task_or_404(body["task_id"].get<std::string>());
      const bool wait = body.value("wait", false);
      const Json reply = session->start_rollout(task, RolloutRequest::from_json(body), wait);
      return json_response(wait ? 200 : 202, reply);
    }
    if (seg.size() == 4 && seg[2] == "rollout" && seg[3] == "cancel")
    {
      need("POST");
      return json_response(200, {{"cancelled", session->cancel_rollout()}});
    }
    if (seg.size() == 3 && seg[2] == "live")
    {
      throw ServiceError(426, "the live channel needs a WebSocket upgrade");
    }
  }

  if (!seg.empty() && seg[0] == "tasks")
  {
    if (seg.size() == 1)
    {
      need("GET");
      return json_response(200, {{"tasks", tasks_.ids()}});
    }
    auto task = task_or_404(seg[1]);
    if (seg.size() == 2)
    {
      need("GET");
      HttpResponse r;
      r.body = serialize_task(task->task);
      return r;
    }
    if (seg.size() == 3 && seg[2] == "density")
    {
      need("GET");
      const std::size_t res = grid_resolution(query_int(target, "res", 64));
      const DensityGrid grid = reconstruct_density(task->task.phi, task->task.domain, res, query_flag(target, "clip", true));
      Json j = density_json(grid);
      j["task_id"] = task->id;
      return json_response(200, j);
    }
  }

  if (seg.size() == 1 && seg[0] == "demos")
  {
    const auto it = target.query.find("session");
    if (it == target.query.end())
    {
      throw ServiceError(400, "demos needs ?session=<id>");
    }
    auto session = session_or_404(it->second);
    if (method == "GET")
    {
      HttpResponse r;
      r.content_type = "application/x-ndjson";
      r.body = serialize_demos(session->demos());
      return r;
    }
    need("PUT");
    return json_response(200, {{"imported", session->import_demos(parse_demos(request.body))}});
  }

  throw ServiceError(404, "no route for " + method + " " + request.target);
}

}  // namespace ergodic::service
