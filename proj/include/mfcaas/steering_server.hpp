#pragma once

// HTTP + WebSocket front end for a SteeringSession, on one port.
//   GET /health   -> "ok"
//   GET /spec     -> scenario description
//   /stream (ws)  -> telemetry frames out, JSON commands in
// All client bookkeeping runs on the io thread; the ticker thread only posts.

#include <atomic>
#include <chrono>
#include <deque>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "mfcaas/steering.hpp"

namespace mfcaas {

namespace beast = boost::beast;
namespace http = boost::beast::http;
namespace websocket = boost::beast::websocket;
namespace asio = boost::asio;
using tcp = boost::asio::ip::tcp;

class ServiceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct ServerOptions {
  std::string bind = "127.0.0.1";
  std::uint16_t port = 8080;
  std::size_t max_queued_frames = 64;       // per client; newer frames are dropped beyond this
  double idle_log_interval = 10.0;          // seconds between metric lines while nobody watches
  std::function<void(const std::string&)> log = [](const std::string&) {};
};

class SteeringServer;

namespace detail {

class WsClient : public std::enable_shared_from_this<WsClient> {
public:
  WsClient(tcp::socket socket, SteeringServer& server) : ws_(std::move(socket)), server_(server) {}

  void start(http::request<http::string_body> req);
  void send(std::shared_ptr<const std::string> msg);
  std::uint64_t dropped() const { return dropped_; }

private:
  void do_read();
  void do_write();

  websocket::stream<beast::tcp_stream> ws_;
  SteeringServer& server_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  bool writing_ = false;
  bool closed_ = false;
  std::uint64_t dropped_ = 0;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
public:
  HttpConnection(tcp::socket socket, SteeringServer& server) : stream_(std::move(socket)), server_(server) {}

  void start() { do_read(); }

private:
  void do_read();
  void respond(http::status status, std::string body, const char* type = "text/plain");

  beast::tcp_stream stream_;
  SteeringServer& server_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace detail

class SteeringServer {
public:
  /// Binds immediately; a busy port throws ServiceError.
  SteeringServer(SteeringSession& session, ServerOptions opts) : session_(session), opts_(std::move(opts)), acceptor_(ioc_) {
    try {
      const tcp::endpoint ep(asio::ip::make_address(opts_.bind), opts_.port);
      acceptor_.open(ep.protocol());
      acceptor_.set_option(asio::socket_base::reuse_address(true));
      acceptor_.bind(ep);
      acceptor_.listen();
    } catch (const boost::system::system_error& e) {
      throw ServiceError("cannot listen on " + opts_.bind + ":" + std::to_string(opts_.port) + ": " + e.what());
    }
  }

  SteeringServer(const SteeringServer&) = delete;
  SteeringServer& operator=(const SteeringServer&) = delete;
  ~SteeringServer() { stop(); }

  std::uint16_t port() const { return acceptor_.local_endpoint().port(); }

  /// Starts the io thread and the real-time ticker.
  void start() {
    if (running_.exchange(true)) return;
    do_accept();
    io_thread_ = std::thread([this] {
      try {
        ioc_.run();
      } catch (const std::exception& e) {
        opts_.log(std::string("io thread stopped: ") + e.what());
      }
    });
    ticker_thread_ = std::thread([this] { tick_loop(); });
  }

  void stop() {
    if (!running_.exchange(false)) return;
    if (ticker_thread_.joinable()) ticker_thread_.join();
    ioc_.stop();
    if (io_thread_.joinable()) io_thread_.join();
  }

  bool running() const { return running_; }

  /// Rethrows anything that stopped the ticker.
  void check() const {
    if (ticker_error_) std::rethrow_exception(ticker_error_);
  }

  std::size_t client_count() const { return client_count_; }

  // io-thread callbacks
  std::string spec_text() const { return session_.spec_text(); }

  void join(const std::shared_ptr<detail::WsClient>& c) {
    clients_.push_back(c);
    ++client_count_;
    const bool steering = !token_holder_;
    if (steering) token_holder_ = c.get();
    nlohmann::json hello{{"type", "hello"}, {"steering", steering}, {"scenario", session_.spec().name}};
    c->send(std::make_shared<const std::string>(hello.dump()));
  }

  void leave(const detail::WsClient* c) {
    std::erase_if(clients_, [&](const auto& p) { return p.get() == c; });
    client_count_ = clients_.size();
    if (token_holder_ == c) {
      token_holder_ = nullptr;
      if (!clients_.empty()) {
        // hand the token to the longest-connected remaining client
        token_holder_ = clients_.front().get();
        nlohmann::json msg{{"type", "token"}, {"steering", true}};
        clients_.front()->send(std::make_shared<const std::string>(msg.dump()));
      }
    }
  }

  void on_message(const std::shared_ptr<detail::WsClient>& c, const std::string& text) {
    nlohmann::json reply;
    try {
      if (token_holder_ != c.get()) throw CommandError("steering token is held by another client");
      const auto j = nlohmann::json::parse(text);
      const Command cmd = command_from_json(j);
      session_.submit(cmd);
      reply = {{"type", "ack"}, {"cmd", command_name(cmd)}};
    } catch (const nlohmann::json::exception& e) {
      reply = {{"type", "error"}, {"message", std::string("malformed JSON: ") + e.what()}};
    } catch (const std::exception& e) {
      reply = {{"type", "error"}, {"message", e.what()}};
    }
    c->send(std::make_shared<const std::string>(reply.dump()));
  }

  const ServerOptions& options() const { return opts_; }

private:
  void do_accept() {
    acceptor_.async_accept([this](boost::system::error_code ec, tcp::socket socket) {
      if (!ec) std::make_shared<detail::HttpConnection>(std::move(socket), *this)->start();
      if (acceptor_.is_open()) do_accept();
    });
  }

  void broadcast(std::string text) {
    auto msg = std::make_shared<const std::string>(std::move(text));
    asio::post(ioc_, [this, msg] {
      for (const auto& c : clients_) c->send(msg);
    });
  }

  void tick_loop() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(session_.period()));
    auto next = clock::now();
    auto last_log = clock::now();
    try {
      while (running_) {
        next += period;
        std::this_thread::sleep_until(next);
        const auto r = session_.tick();
        if (r.frame) broadcast(to_json(*r.frame).dump());
        const auto now = clock::now();
        if (client_count_ == 0 && std::chrono::duration<double>(now - last_log).count() >= opts_.idle_log_interval) {
          last_log = now;
          log_metrics(r);
        }
      }
    } catch (...) {
      ticker_error_ = std::current_exception();
      running_ = false;
      opts_.log("ticker stopped on error");
    }
  }

  void log_metrics(const SteeringSession::TickResult& r) {
    std::string line = "steps=" + std::to_string(session_.steps());
    if (r.record) {
      line += " t=" + format_g9(r.record->t) + " y=" + format_g9(r.record->y) + " y_star=" + format_g9(r.record->y_star) +
              " u=" + format_g9(r.record->u_sent);
    }
    line += " loss1=" + format_g9(100.0 * session_.gate(Direction::fault1).realized_loss()) +
            "% loss2=" + format_g9(100.0 * session_.gate(Direction::fault2).realized_loss()) + "%";
    opts_.log(line);
  }

  SteeringSession& session_;
  ServerOptions opts_;
  asio::io_context ioc_;
  tcp::acceptor acceptor_;
  std::thread io_thread_;
  std::thread ticker_thread_;
  std::atomic<bool> running_{false};
  std::atomic<std::size_t> client_count_{0};
  std::exception_ptr ticker_error_;

  std::vector<std::shared_ptr<detail::WsClient>> clients_;
  const detail::WsClient* token_holder_ = nullptr;
};

namespace detail {

inline void HttpConnection::do_read() {
  req_ = {};
  http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) return;
    auto& req = self->req_;
    if (websocket::is_upgrade(req)) {
      if (req.target() == "/stream") {
        std::make_shared<WsClient>(self->stream_.release_socket(), self->server_)->start(std::move(req));
      } else {
        self->respond(http::status::not_found, "no websocket at this path\n");
      }
      return;
    }
    if (req.method() != http::verb::get) {
      self->respond(http::status::method_not_allowed, "GET only\n");
    } else if (req.target() == "/health") {
      self->respond(http::status::ok, "ok\n");
    } else if (req.target() == "/spec") {
      self->respond(http::status::ok, self->server_.spec_text());
    } else {
      self->respond(http::status::not_found, "not found\n");
    }
  });
}

inline void HttpConnection::respond(http::status status, std::string body, const char* type) {
  auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
  res->set(http::field::content_type, type);
  res->keep_alive(false);
  res->body() = std::move(body);
  res->prepare_payload();
  http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
    beast::error_code ignored;
    self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
  });
}

inline void WsClient::start(http::request<http::string_body> req) {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  auto held = std::make_shared<http::request<http::string_body>>(std::move(req));
  ws_.async_accept(*held, [self = shared_from_this(), held](beast::error_code ec) {
    if (ec) return;
    self->server_.join(self);
    self->do_read();
  });
}

inline void WsClient::do_read() {
  ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->closed_ = true;
      self->server_.leave(self.get());
      return;
    }
    const std::string text = beast::buffers_to_string(self->buffer_.data());
    self->buffer_.consume(self->buffer_.size());
    self->server_.on_message(self, text);
    self->do_read();
  });
}

inline void WsClient::send(std::shared_ptr<const std::string> msg) {
  if (closed_) return;
  if (queue_.size() >= server_.options().max_queued_frames) {
    ++dropped_;
    return;
  }
  queue_.push_back(std::move(msg));
  if (!writing_) do_write();
}

inline void WsClient::do_write() {
  writing_ = true;
  ws_.text(true);
  ws_.async_write(asio::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->writing_ = false;
      self->queue_.clear();
      if (!self->closed_) {
        self->closed_ = true;
        self->server_.leave(self.get());
      }
      return;
    }
    self->queue_.pop_front();
    if (self->queue_.empty()) {
      self->writing_ = false;
    } else {
      self->do_write();
    }
  });
}

}  // namespace detail

}  // namespace mfcaas
