#include <gtest/gtest.h>

#include <chrono>
#include <condition_variable>
#include <numbers>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "ergodic/service.hpp"

using namespace ergodic;
using namespace ergodic::service;

namespace
{
ServiceConfig quiet_config()
{
  ServiceConfig cfg;
  cfg.port = 0;
  return cfg;
}

HttpResponse call(Service& svc, const std::string& method, const std::string& target, const Json& body = nullptr,
                  const std::string& origin = "")
{
  return svc.handle({method, target, body.is_null() ? std::string() : body.dump(), origin});
}

Json json_of(const HttpResponse& r)
{
  return Json::parse(r.body);
}

/// Collects everything a session broadcasts.
struct Inbox
{
  std::mutex mutex;
  std::condition_variable cv;
  std::vector<Json> messages;

  Session::Sink sink()
  {
    return [this](const Json& m) {
      std::lock_guard lock(mutex);
      messages.push_back(m);
      cv.notify_all();
    };
  }

  std::size_t count(const std::string& type)
  {
    std::lock_guard lock(mutex);
    return static_cast<std::size_t>(
        std::count_if(messages.begin(), messages.end(), [&](const Json& m) { return m["type"] == type; }));
  }

  Json wait_for(const std::string& type, std::chrono::seconds timeout = std::chrono::seconds(120))
  {
    std::unique_lock lock(mutex);
    Json found;
    cv.wait_for(lock, timeout, [&] {
      for (const auto& m : messages)
      {
        if (m["type"] == type)
        {
          found = m;
          return true;
        }
      }
      return false;
    });
    return found;
  }
};

std::string record_demo(Session& s, const std::vector<double>& u, int ticks, const char* label)
{
  s.handle({{"type", "control"}, {"u", u}});
  s.handle({{"type", "start_recording"}});
  for (int i = 0; i < ticks; ++i)
  {
    s.tick();
  }
  const auto reply = s.handle({{"type", "stop_recording"}, {"label", label}});
  return reply.at(0).at("demo_id").get<std::string>();
}
}  // namespace

TEST(Sessions, CartpoleStartsHanging)
{
  Service svc(quiet_config());
  const auto r = call(svc, "POST", "/sessions", {{"system", "cartpole"}});
  ASSERT_EQ(r.status, 201);
  const Json j = json_of(r);
  EXPECT_FALSE(j["id"].get<std::string>().empty());
  EXPECT_DOUBLE_EQ(j["x"][0].get<double>(), std::numbers::pi);
  EXPECT_EQ(j["x"][1], 0.0);
}

TEST(Sessions, PlanarStartsCentered)
{
  Service svc(quiet_config());
  const Json j = json_of(call(svc, "POST", "/sessions", {{"system", "planar"}}));
  EXPECT_EQ(j["x"], Json({0.5, 0.5, 0.0, 0.0}));
}

TEST(Sessions, BadSystemIs400)
{
  Service svc(quiet_config());
  EXPECT_EQ(call(svc, "POST", "/sessions", {{"system", "unicycle"}}).status, 400);
  EXPECT_EQ(call(svc, "POST", "/sessions", Json::object()).status, 400);
  EXPECT_EQ(svc.handle({"POST", "/sessions", "{not json", ""}).status, 400);
  EXPECT_EQ(call(svc, "GET", "/sessions/nope").status, 404);
}

TEST(Sessions, HealthReportsVersion)
{
  Service svc(quiet_config());
  const auto r = call(svc, "GET", "/health");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(json_of(r)["version"], kVersion);
}

TEST(Live, RecordTwoTicks)
{
  Session s("a", SystemKind::cartpole, PlanarTask::reach, 50.0);
  s.handle({{"type", "start_recording"}});
  s.tick();
  s.tick();
  const auto reply = s.handle({{"type", "stop_recording"}, {"label", "positive"}});
  ASSERT_EQ(reply.size(), 1u);
  EXPECT_EQ(reply[0]["type"], "demo_recorded");
  EXPECT_GE(reply[0]["samples"].get<int>(), 2);
  const DemoSet set = s.demos();
  ASSERT_EQ(set.demos.size(), 1u);
  EXPECT_EQ(set.demos[0].label, Label::positive);
}

TEST(Live, WrongControlDimensionLeavesSimAlone)
{
  Session a("a", SystemKind::cartpole, PlanarTask::reach, 50.0);
  Session b("b", SystemKind::cartpole, PlanarTask::reach, 50.0);
  a.handle({{"type", "control"}, {"u", {3.0}}});
  b.handle({{"type", "control"}, {"u", {3.0}}});
  const auto reply = a.handle({{"type", "control"}, {"u", {1.0, 2.0}}});
  ASSERT_EQ(reply.size(), 1u);
  EXPECT_EQ(reply[0]["type"], "error");
  EXPECT_EQ(a.handle_text("{\"type\": ")[0]["type"], "error");
  EXPECT_EQ(a.handle_text("[1,2]")[0]["type"], "error");
  EXPECT_EQ(a.handle({{"type", "warp"}})[0]["type"], "error");
  for (int i = 0; i < 10; ++i)
  {
    EXPECT_EQ(*a.tick(), *b.tick());
  }
}

TEST(Live, ThirtySecondsAtFiftyHertz)
{
  Session s("a", SystemKind::cartpole, PlanarTask::reach, 50.0);
  s.handle({{"type", "start_recording"}});
  const int ticks = static_cast<int>(30.0 * 50.0);
  for (int i = 0; i < ticks; ++i)
  {
    s.tick();
  }
  const auto reply = s.handle({{"type", "stop_recording"}, {"label", "negative"}});
  const int samples = reply.at(0)["samples"].get<int>();
  EXPECT_NEAR(samples, 1500, 1);
  EXPECT_NEAR(reply[0]["duration"].get<double>(), 30.0, 1e-9);
}

TEST(Live, ScriptedInputIsReproducible)
{
  auto script = [](Session& s) {
    for (int k = 0; k < 5; ++k)
    {
      s.handle({{"type", "control"}, {"u", {0.3 * k - 0.5, 1.0 - 0.2 * k}}});
      if (k == 1)
      {
        s.handle({{"type", "start_recording"}});
      }
      for (int i = 0; i < 17; ++i)
      {
        s.tick();
      }
    }
    s.handle({{"type", "stop_recording"}, {"label", "positive"}, {"id", "scripted"}});
    return serialize_demos(s.demos());
  };
  Session a("a", SystemKind::planar, PlanarTask::clean, 50.0);
  Session b("b", SystemKind::planar, PlanarTask::clean, 50.0);
  EXPECT_EQ(script(a), script(b));
}

TEST(Live, SessionsAreIsolated)
{
  Service svc(quiet_config());
  auto a = svc.create_session(SystemKind::planar);
  auto b = svc.create_session(SystemKind::planar);
  Inbox in_a, in_b;
  a->subscribe(in_a.sink());
  b->subscribe(in_b.sink());
  a->handle({{"type", "control"}, {"u", {1.0, 0.0}}});
  record_demo(*a, {1.0, 0.0}, 3, "positive");
  b->tick();
  EXPECT_EQ(in_a.count("state"), 3u);
  EXPECT_EQ(in_b.count("state"), 1u);
  EXPECT_EQ(a->demos().demos.size(), 1u);
  EXPECT_TRUE(b->demos().demos.empty());
  EXPECT_EQ(in_b.messages[0]["x"][0], 0.5);
}

TEST(Learn, SinglePositiveMatchesItsCoefficients)
{
  Service svc(quiet_config());
  auto s = svc.create_session(SystemKind::planar);
  const std::string id = record_demo(*s, {0.8, -0.4}, 40, "positive");
  const auto r = call(svc, "POST", "/sessions/" + s->id() + "/learn", {{"mode", "posonly"}, {"order", 6}});
  ASSERT_EQ(r.status, 200) << r.body;
  const Json j = json_of(r);
  EXPECT_EQ(j["grid"]["shape"], Json({64, 64}));
  const auto task = svc.tasks().find(j["task_id"].get<std::string>());
  ASSERT_TRUE(task);
  const Demonstration demo = s->demos().demos[0];
  const auto c = traj_coefficients(demo.samples, task->task.projection, 6, task->task.domain);
  ASSERT_EQ(c.size(), task->task.phi.size());
  for (std::size_t k = 0; k < c.size(); ++k)
  {
    EXPECT_NEAR(task->task.phi[k], c[k], 1e-14);
  }
}

TEST(Learn, NegonlyWithoutNegativesFails)
{
  Service svc(quiet_config());
  auto s = svc.create_session(SystemKind::cartpole);
  record_demo(*s, {2.0}, 10, "positive");
  const auto r = call(svc, "POST", "/sessions/" + s->id() + "/learn", {{"mode", "negonly"}});
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(call(svc, "POST", "/sessions/" + s->id() + "/learn", {{"mode", "sideways"}}).status, 400);
  EXPECT_EQ(call(svc, "POST", "/sessions/" + s->id() + "/learn", {{"demo_ids", {"ghost"}}}).status, 404);
}

TEST(Learn, PosnegGridMatchesOfflineComputation)
{
  Service svc(quiet_config());
  auto s = svc.create_session(SystemKind::planar, PlanarTask::clean);
  SynthRequest rq;
  rq.system = SystemKind::planar;
  rq.task = PlanarTask::clean;
  rq.positives = 3;
  rq.negatives = 2;
  const DemoSet set = synthesize(rq);
  const auto put = svc.handle({"PUT", "/demos?session=" + s->id(), serialize_demos(set), ""});
  ASSERT_EQ(put.status, 200) << put.body;
  EXPECT_EQ(json_of(put)["imported"].size(), 5u);
  EXPECT_EQ(svc.handle({"PUT", "/demos?session=" + s->id(), serialize_demos(set), ""}).status, 409);

  const Json j = json_of(call(svc, "POST", "/sessions/" + s->id() + "/learn", {{"mode", "posneg"}, {"beta", 0.5}}));
  const TaskDefinition offline = learn_task(parse_demos(serialize_demos(set)), FusionMode::posneg);
  const DensityGrid grid = reconstruct_density(offline.phi, offline.domain, 64, true);
  const auto values = j["grid"]["values"].get<std::vector<double>>();
  ASSERT_EQ(values.size(), grid.values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
  {
    ASSERT_EQ(values[i], grid.values[i]) << i;
  }

  const auto dens = call(svc, "GET", "/tasks/" + j["task_id"].get<std::string>() + "/density?res=16&clip=0");
  ASSERT_EQ(dens.status, 200);
  EXPECT_EQ(json_of(dens)["values"].size(), 256u);
  EXPECT_EQ(call(svc, "GET", "/tasks/t999/density").status, 404);
  EXPECT_EQ(call(svc, "GET", "/tasks/" + j["task_id"].get<std::string>() + "/density?res=1").status, 400);
}

TEST(Demos, ExportImportRoundTrip)
{
  Service svc(quiet_config());
  auto a = svc.create_session(SystemKind::cartpole);
  record_demo(*a, {4.0}, 25, "negative");
  const auto got = call(svc, "GET", "/demos?session=" + a->id());
  ASSERT_EQ(got.status, 200);
  EXPECT_EQ(got.content_type, "application/x-ndjson");
  auto b = svc.create_session(SystemKind::cartpole);
  EXPECT_EQ(svc.handle({"PUT", "/demos?session=" + b->id(), got.body, ""}).status, 200);
  EXPECT_EQ(serialize_demos(b->demos()), got.body);
  auto p = svc.create_session(SystemKind::planar);
  EXPECT_EQ(svc.handle({"PUT", "/demos?session=" + p->id(), got.body, ""}).status, 400);
  EXPECT_EQ(call(svc, "GET", "/demos").status, 400);
}

TEST(Rollout, OneSampleTimeIsOneReplan)
{
  Service svc(quiet_config());
  auto s = svc.create_session(SystemKind::cartpole);
  record_demo(*s, {5.0}, 50, "positive");
  const Json learned = json_of(call(svc, "POST", "/sessions/" + s->id() + "/learn", Json::object()));
  Inbox inbox;
  s->subscribe(inbox.sink());
  const auto r = call(svc, "POST", "/sessions/" + s->id() + "/rollout",
                      {{"task_id", learned["task_id"]}, {"duration", 0.1}, {"wait", true}});
  ASSERT_EQ(r.status, 200) << r.body;
  const Json summary = json_of(r);
  EXPECT_EQ(summary["replans"], 1);
  EXPECT_FALSE(summary["cancelled"].get<bool>());
  EXPECT_GE(inbox.count("rollout_state"), 1u);
  EXPECT_EQ(inbox.count("rollout_summary"), 1u);
  EXPECT_TRUE(summary["success_time"].is_number());
}

TEST(Rollout, CancelGivesPartialSummary)
{
  Service svc(quiet_config());
  auto s = svc.create_session(SystemKind::cartpole);
  record_demo(*s, {5.0}, 50, "positive");
  const Json learned = json_of(call(svc, "POST", "/sessions/" + s->id() + "/learn", Json::object()));
  Inbox inbox;
  s->subscribe(inbox.sink());
  const Json body = {{"task_id", learned["task_id"]}, {"duration", 60.0}};
  ASSERT_EQ(call(svc, "POST", "/sessions/" + s->id() + "/rollout", body).status, 202);
  EXPECT_EQ(call(svc, "POST", "/sessions/" + s->id() + "/rollout", body).status, 409);
  EXPECT_EQ(s->handle({{"type", "start_recording"}})[0]["type"], "error");
  EXPECT_FALSE(s->tick());
  ASSERT_FALSE(inbox.wait_for("rollout_state").is_null());
  EXPECT_EQ(s->handle({{"type", "cancel_rollout"}})[0]["type"], "rollout_cancelling");
  const Json summary = inbox.wait_for("rollout_summary");
  ASSERT_FALSE(summary.is_null());
  EXPECT_TRUE(summary["cancelled"].get<bool>());
  EXPECT_LT(summary["duration"].get<double>(), 60.0);
  EXPECT_FALSE(s->rollout_active());
  EXPECT_EQ(json_of(call(svc, "GET", "/sessions/" + s->id()))["last_rollout"], summary);
}

TEST(Rollout, RecordingBlocksRollout)
{
  Service svc(quiet_config());
  auto s = svc.create_session(SystemKind::cartpole);
  record_demo(*s, {5.0}, 20, "positive");
  const Json learned = json_of(call(svc, "POST", "/sessions/" + s->id() + "/learn", Json::object()));
  s->handle({{"type", "start_recording"}});
  EXPECT_EQ(call(svc, "POST", "/sessions/" + s->id() + "/rollout", {{"task_id", learned["task_id"]}}).status, 409);
  EXPECT_EQ(call(svc, "POST", "/sessions/" + s->id() + "/rollout", {{"task_id", "t404"}}).status, 404);
  auto p = svc.create_session(SystemKind::planar);
  EXPECT_EQ(call(svc, "POST", "/sessions/" + p->id() + "/rollout", {{"task_id", learned["task_id"]}}).status, 400);
}

TEST(Rollout, ExpertTaskFindsSuccess)
{
  Service svc(quiet_config());
  auto s = svc.create_session(SystemKind::cartpole);
  SynthRequest rq;
  rq.positives = 3;
  rq.negatives = 0;
  ASSERT_EQ(svc.handle({"PUT", "/demos?session=" + s->id(), serialize_demos(synthesize(rq)), ""}).status, 200);
  const Json learned = json_of(call(svc, "POST", "/sessions/" + s->id() + "/learn", {{"mode", "posonly"}}));
  const auto r = call(svc, "POST", "/sessions/" + s->id() + "/rollout",
                      {{"task_id", learned["task_id"]}, {"duration", 30.0}, {"seed", 3}, {"control_noise", 0.5},
                       {"wait", true}});
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_GT(json_of(r)["success_time"].get<double>(), 0.0);
}

TEST(Cors, AllowListed)
{
  ServiceConfig cfg = quiet_config();
  cfg.cors_origins = {"http://localhost:5173"};
  Service svc(cfg);
  auto has_allow = [](const HttpResponse& r) {
    return std::any_of(r.headers.begin(), r.headers.end(),
                       [](const auto& h) { return h.first == "Access-Control-Allow-Origin"; });
  };
  EXPECT_TRUE(has_allow(call(svc, "GET", "/health", nullptr, "http://localhost:5173")));
  EXPECT_FALSE(has_allow(call(svc, "GET", "/health", nullptr, "http://evil.example")));
  EXPECT_EQ(call(svc, "OPTIONS", "/sessions", nullptr, "http://localhost:5173").status, 204);
}

TEST(Config, Environment)
{
  ::setenv("ERGO_PORT", "9001", 1);
  ::setenv("ERGO_TICK_HZ", "25", 1);
  ::setenv("ERGO_CORS", "http://a, http://b", 1);
  const ServiceConfig cfg = ServiceConfig::from_env(ServiceConfig{});
  ::unsetenv("ERGO_PORT");
  ::unsetenv("ERGO_TICK_HZ");
  ::unsetenv("ERGO_CORS");
  EXPECT_EQ(cfg.port, 9001);
  EXPECT_EQ(cfg.tick_hz, 25.0);
  EXPECT_EQ(cfg.cors_origins, (std::vector<std::string>{"http://a", "http://b"}));
  EXPECT_EQ(ServiceConfig{}.port, 8753);
}

namespace
{
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

std::pair<int, Json> http_call(unsigned short port, http::verb verb, const std::string& target, const Json& body = nullptr)
{
  asio::io_context ioc;
  beast::tcp_stream stream(ioc);
  stream.connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
  http::request<http::string_body> req{verb, target, 11};
  req.set(http::field::host, "127.0.0.1");
  if (!body.is_null())
  {
    req.set(http::field::content_type, "application/json");
    req.body() = body.dump();
  }
  req.prepare_payload();
  http::write(stream, req);
  beast::flat_buffer buffer;
  http::response<http::string_body> res;
  http::read(stream, buffer, res);
  beast::error_code ec;
  stream.socket().shutdown(tcp::socket::shutdown_both, ec);
  return {res.result_int(), res.body().empty() ? Json() : Json::parse(res.body())};
}
}  // namespace

TEST(Server, HttpAndLiveChannel)
{
  auto svc = std::make_shared<Service>(quiet_config());
  Server server(svc);
  const unsigned short port = server.start();
  ASSERT_NE(port, 0);

  const auto [hs, health] = http_call(port, http::verb::get, "/health");
  EXPECT_EQ(hs, 200);
  EXPECT_EQ(health["version"], kVersion);

  const auto [cs, created] = http_call(port, http::verb::post, "/sessions", {{"system", "cartpole"}});
  ASSERT_EQ(cs, 201);
  const std::string id = created["id"];

  asio::io_context ioc;
  websocket::stream<tcp::socket> ws(ioc);
  ws.next_layer().connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
  ws.handshake("127.0.0.1", "/sessions/" + id + "/live");

  auto next_of = [&](const std::string& type) {
    for (int i = 0; i < 2000; ++i)
    {
      beast::flat_buffer b;
      ws.read(b);
      const Json m = Json::parse(beast::buffers_to_string(b.data()));
      if (m["type"] == type)
      {
        return m;
      }
    }
    return Json();
  };

  const Json first = next_of("state");
  ASSERT_FALSE(first.is_null());
  EXPECT_TRUE(first.contains("in_success_region"));
  EXPECT_TRUE(first.contains("dropped_frames"));

  ws.write(asio::buffer(std::string(R"({"type":"control","u":[1,2,3]})")));
  EXPECT_EQ(next_of("error")["type"], "error");

  ws.write(asio::buffer(std::string(R"({"type":"control","u":[6.0]})")));
  ws.write(asio::buffer(std::string(R"({"type":"start_recording"})")));
  ASSERT_FALSE(next_of("recording_started").is_null());
  next_of("state");
  next_of("state");
  ws.write(asio::buffer(std::string(R"({"type":"stop_recording","label":"negative"})")));
  const Json rec = next_of("demo_recorded");
  ASSERT_FALSE(rec.is_null());
  EXPECT_GE(rec["samples"].get<int>(), 2);

  const auto [ss, described] = http_call(port, http::verb::get, "/sessions/" + id);
  EXPECT_EQ(ss, 200);
  EXPECT_EQ(described["demos"].size(), 1u);
  EXPECT_GT(described["t"].get<double>(), 0.0);

  ws.close(websocket::close_code::normal);

  asio::io_context ioc2;
  websocket::stream<tcp::socket> missing(ioc2);
  missing.next_layer().connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
  EXPECT_THROW(missing.handshake("127.0.0.1", "/sessions/nope/live"), beast::system_error);

  server.stop();
}
