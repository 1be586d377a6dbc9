#include <chrono>
#include <thread>

#include <gtest/gtest.h>

#include "mfcaas/steering_server.hpp"

using namespace mfcaas;

namespace {

struct HttpReply {
  unsigned status = 0;
  std::string body;
};

HttpReply http_get(std::uint16_t port, const std::string& target) {
  asio::io_context ioc;
  beast::tcp_stream stream(ioc);
  stream.connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
  http::request<http::empty_body> req{http::verb::get, target, 11};
  req.set(http::field::host, "127.0.0.1");
  http::write(stream, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(stream, buf, res);
  return {res.result_int(), res.body()};
}

class Client {
public:
  explicit Client(std::uint16_t port) : ws_(ioc_) {
    beast::get_lowest_layer(ws_).connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
    ws_.handshake("127.0.0.1", "/stream");
  }

  nlohmann::json next() {
    beast::flat_buffer buf;
    ws_.read(buf);
    return nlohmann::json::parse(beast::buffers_to_string(buf.data()));
  }

  // Skips telemetry until a message of the given type arrives.
  nlohmann::json until(const std::string& type, std::vector<nlohmann::json>* skipped = nullptr) {
    for (int i = 0; i < 10000; ++i) {
      auto j = next();
      if (j["type"] == type) return j;
      if (skipped) skipped->push_back(j);
    }
    throw std::runtime_error("no '" + type + "' message");
  }

  void send(const std::string& text) { ws_.write(asio::buffer(text)); }
  void close() { ws_.close(websocket::close_code::normal); }

private:
  asio::io_context ioc_;
  websocket::stream<beast::tcp_stream> ws_;
};

ScenarioSpec joystick_spec() {
  auto s = build_scenario("joy-5");
  s.duration = 1e6;
  return s;
}

}  // namespace

TEST(Service, HealthSpecAndNotFound) {
  SteeringSession session(joystick_spec(), 5, false);
  SteeringServer server(session, {.bind = "127.0.0.1", .port = 0});
  server.start();
  const auto health = http_get(server.port(), "/health");
  EXPECT_EQ(health.status, 200u);
  EXPECT_EQ(health.body, "ok\n");
  const auto spec = http_get(server.port(), "/spec");
  EXPECT_EQ(spec.status, 200u);
  EXPECT_NE(spec.body.find("name: joy-5"), std::string::npos);
  EXPECT_NE(spec.body.find("joystick_T: 2"), std::string::npos);
  EXPECT_EQ(http_get(server.port(), "/elsewhere").status, 404u);
  server.stop();
  server.check();
}

TEST(Service, BusyPortIsStartupError) {
  SteeringSession session(joystick_spec(), 5, false);
  SteeringServer first(session, {.bind = "127.0.0.1", .port = 0});
  ServerOptions clash;
  clash.port = first.port();
  EXPECT_THROW(SteeringServer(session, clash), ServiceError);
}

TEST(Service, RunsWithoutClientsAndLogs) {
  SteeringSession session(joystick_spec(), 5, false);
  std::mutex m;
  std::vector<std::string> lines;
  ServerOptions opts;
  opts.port = 0;
  opts.idle_log_interval = 0.05;
  opts.log = [&](const std::string& l) {
    std::lock_guard lock(m);
    lines.push_back(l);
  };
  SteeringServer server(session, opts);
  server.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  server.stop();
  EXPECT_GT(session.steps(), 10u);
  std::lock_guard lock(m);
  ASSERT_FALSE(lines.empty());
  EXPECT_NE(lines.front().find("loss1="), std::string::npos);
}

TEST(Service, SteeringRoundTripAndTokenExclusivity) {
  SteeringSession session(joystick_spec(), 5, false);
  SteeringServer server(session, {.bind = "127.0.0.1", .port = 0});
  server.start();

  Client a(server.port());
  auto hello = a.until("hello");
  EXPECT_TRUE(hello["steering"].get<bool>());
  Client b(server.port());
  EXPECT_FALSE(b.until("hello")["steering"].get<bool>());

  // telemetry schema and frame ordering
  auto t1 = a.until("telemetry");
  auto t2 = a.until("telemetry");
  EXPECT_GT(t2["frame"].get<std::uint64_t>(), t1["frame"].get<std::uint64_t>());
  EXPECT_TRUE(t1.contains("loss_realized_1"));
  EXPECT_TRUE(t1["v1"].is_number());

  const double before = t2["y_star"].get<double>();
  a.send(R"({"cmd":"set_setpoint","value":1.0})");
  EXPECT_EQ(a.until("ack")["cmd"], "set_setpoint");
  // the command lands at the next tick boundary, so y* moves within two frames
  auto f1 = a.until("telemetry");
  auto f2 = a.until("telemetry");
  EXPECT_GT(std::max(f1["y_star"].get<double>(), f2["y_star"].get<double>()), before + 1e-6);

  b.send(R"({"cmd":"set_axis","value":0.1})");
  auto denied = b.until("error");
  EXPECT_NE(denied["message"].get<std::string>().find("token"), std::string::npos);

  a.send(R"({"cmd":"set_axis","value":3})");
  EXPECT_NE(a.until("error")["message"].get<std::string>().find("[-1, 1]"), std::string::npos);
  a.send("not json");
  EXPECT_NE(a.until("error")["message"].get<std::string>().find("malformed"), std::string::npos);

  a.close();
  EXPECT_TRUE(b.until("token")["steering"].get<bool>());
  b.send(R"({"cmd":"set_loss","p_fault1":0.5,"p_fault2":0.5})");
  EXPECT_EQ(b.until("ack")["cmd"], "set_loss");

  server.stop();
  server.check();
  const auto& log = session.replay_log();
  ASSERT_EQ(log.size(), 2u);
  EXPECT_EQ(command_name(log[0].command), "set_setpoint");
  EXPECT_EQ(command_name(log[1].command), "set_loss");
}

TEST(Service, SlowClientDoesNotStallTicker) {
  SteeringSession session(joystick_spec(), 1, false);
  ServerOptions opts;
  opts.port = 0;
  opts.max_queued_frames = 4;
  SteeringServer server(session, opts);
  server.start();
  Client lazy(server.port());
  lazy.until("hello");
  const auto start = session.steps();
  std::this_thread::sleep_for(std::chrono::milliseconds(500));
  // at 10 ms per tick the ticker kept going while the client read nothing
  EXPECT_GT(session.steps() - start, 25u);
  server.stop();
}
