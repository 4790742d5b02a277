#include <chrono>
#include <condition_variable>
#include <deque>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "ergodic/service.hpp"

namespace ergodic::service
{
namespace
{
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using Clock = std::chrono::steady_clock;

constexpr std::size_t kMaxQueued = 8192;

/// One WebSocket client attached to a session's live channel.
class LiveConnection : public std::enable_shared_from_this<LiveConnection>
{
public:
  LiveConnection(tcp::socket&& socket, std::shared_ptr<Session> session)
    : ws_(std::move(socket)), session_(std::move(session))
  {
  }

  ~LiveConnection()
  {
    if (token_ != 0)
    {
      session_->unsubscribe(token_);
    }
  }

  void run(http::request<http::string_body> req)
  {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&LiveConnection::on_accept, shared_from_this()));
  }

private:
  void on_accept(beast::error_code ec)
  {
    if (ec)
    {
      return;
    }
    std::weak_ptr<LiveConnection> weak = shared_from_this();
    token_ = session_->subscribe([weak](const Json& msg) {
      if (auto self = weak.lock())
      {
        self->send(msg.dump());
      }
    });
    read();
  }

  void read()
  {
    ws_.async_read(buffer_, beast::bind_front_handler(&LiveConnection::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t)
  {
    if (ec)
    {
      detach();
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    for (const auto& reply : session_->handle_text(text))
    {
      send(reply.dump());
    }
    read();
  }

  void send(std::string text)
  {
    asio::post(ws_.get_executor(), [self = shared_from_this(), text = std::move(text)]() mutable {
      if (self->closed_)
      {
        return;
      }
      if (self->queue_.size() >= kMaxQueued)
      {
        // A client this far behind is not reading; let it go.
        self->detach();
        beast::get_lowest_layer(self->ws_).close();
        return;
      }
      self->queue_.push_back(std::move(text));
      if (self->queue_.size() == 1)
      {
        self->write();
      }
    });
  }

  void write()
  {
    ws_.text(true);
    ws_.async_write(asio::buffer(queue_.front()), beast::bind_front_handler(&LiveConnection::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t)
  {
    if (ec)
    {
      detach();
      return;
    }
    queue_.pop_front();
    if (!queue_.empty())
    {
      write();
    }
  }

  void detach()
  {
    closed_ = true;
    queue_.clear();
    if (token_ != 0)
    {
      session_->unsubscribe(token_);
      token_ = 0;
    }
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::shared_ptr<Session> session_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
  int token_ = 0;
  bool closed_ = false;
};

/// Plain HTTP connection; route handling runs on the worker pool so slow requests never stall ticking.
class HttpConnection : public std::enable_shared_from_this<HttpConnection>
{
public:
  HttpConnection(tcp::socket&& socket, std::shared_ptr<Service> service, asio::thread_pool& workers)
    : stream_(std::move(socket)), service_(std::move(service)), workers_(workers)
  {
  }

  void run()
  {
    asio::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpConnection::read, shared_from_this()));
  }

private:
  void read()
  {
    req_ = {};
    parser_.emplace();
    parser_->body_limit(64 * 1024 * 1024);
    stream_.expires_after(std::chrono::seconds(60));
    http::async_read(stream_, buffer_, *parser_, beast::bind_front_handler(&HttpConnection::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t)
  {
    if (ec == http::error::end_of_stream)
    {
      beast::error_code ignored;
      stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
      return;
    }
    if (ec)
    {
      return;
    }
    req_ = parser_->release();

    if (websocket::is_upgrade(req_))
    {
      const std::string path(req_.target().substr(0, req_.target().find('?')));
      const std::string prefix = "/sessions/";
      const std::string suffix = "/live";
      std::shared_ptr<Session> session;
      if (path.size() > prefix.size() + suffix.size() && path.starts_with(prefix) && path.ends_with(suffix))
      {
        session = service_->find_session(path.substr(prefix.size(), path.size() - prefix.size() - suffix.size()));
      }
      if (!session)
      {
        HttpResponse r;
        r.status = 404;
        r.body = Json{{"error", "no live channel at " + path}}.dump();
        respond(std::move(r));
        return;
      }
      stream_.expires_never();
      std::make_shared<LiveConnection>(stream_.release_socket(), std::move(session))->run(std::move(req_));
      return;
    }

    HttpRequest request;
    request.method = std::string(req_.method_string());
    request.target = std::string(req_.target());
    request.body = req_.body();
    if (auto it = req_.find(http::field::origin); it != req_.end())
    {
      request.origin = std::string(it->value());
    }
    asio::post(workers_, [self = shared_from_this(), request = std::move(request)] {
      HttpResponse r = self->service_->handle(request);
      asio::post(self->stream_.get_executor(), [self, r = std::move(r)]() mutable { self->respond(std::move(r)); });
    });
  }

  void respond(HttpResponse r)
  {
    auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(r.status), req_.version());
    res->set(http::field::server, std::string("ergo/") + kVersion);
    if (!r.content_type.empty())
    {
      res->set(http::field::content_type, r.content_type);
    }
    for (const auto& [name, value] : r.headers)
    {
      res->set(name, value);
    }
    res->keep_alive(req_.keep_alive());
    res->body() = std::move(r.body);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec)
      {
        return;
      }
      if (!res->keep_alive())
      {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read();
    });
  }

  beast::tcp_stream stream_;
  std::shared_ptr<Service> service_;
  asio::thread_pool& workers_;
  beast::flat_buffer buffer_;
  std::optional<http::request_parser<http::string_body>> parser_;
  http::request<http::string_body> req_;
};

/// Fixed-rate tick source for one session.
class Ticker : public std::enable_shared_from_this<Ticker>
{
public:
  Ticker(asio::io_context& ioc, std::weak_ptr<Session> session, double period)
    : timer_(asio::make_strand(ioc))
    , session_(std::move(session))
    , period_(std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(period)))
  {
  }

  void start()
  {
    deadline_ = Clock::now() + period_;
    arm();
  }

  void cancel()
  {
    asio::post(timer_.get_executor(), [self = shared_from_this()] { self->timer_.cancel(); });
  }

private:
  void arm()
  {
    timer_.expires_at(deadline_);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) { self->fire(ec); });
  }

  void fire(beast::error_code ec)
  {
    if (ec)
    {
      return;
    }
    auto session = session_.lock();
    if (!session)
    {
      return;
    }
    int dropped = 0;
    const auto late = Clock::now() - deadline_;
    if (late >= period_)
    {
      dropped = static_cast<int>(late / period_);
      deadline_ += dropped * period_;
    }
    session->tick(dropped);
    deadline_ += period_;
    arm();
  }

  asio::steady_timer timer_;
  std::weak_ptr<Session> session_;
  Clock::duration period_;
  Clock::time_point deadline_;
};
}  // namespace

struct Server::Impl
{
  asio::io_context ioc;
  asio::executor_work_guard<asio::io_context::executor_type> guard{ioc.get_executor()};
  std::shared_ptr<Service> service;
  asio::thread_pool workers;
  tcp::acceptor acceptor{ioc};
  std::vector<std::thread> threads;
  std::mutex mutex;
  std::condition_variable stopped_cv;
  bool stopped = false;
  bool signalled = false;
  std::vector<std::shared_ptr<Ticker>> tickers;

  Impl(std::shared_ptr<Service> s) : service(std::move(s)), workers(service->config().threads) {}

  void add_ticker(std::shared_ptr<Session> session)
  {
    auto t = std::make_shared<Ticker>(ioc, session, session->tick_period());
    {
      std::lock_guard lock(mutex);
      tickers.push_back(t);
    }
    t->start();
  }

  void accept()
  {
    acceptor.async_accept(asio::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec)
      {
        return;  // acceptor closed
      }
      std::make_shared<HttpConnection>(std::move(socket), service, workers)->run();
      accept();
    });
  }
};

Server::Server(std::shared_ptr<Service> service) : impl_(std::make_unique<Impl>(std::move(service))) {}

Server::~Server()
{
  stop();
}

unsigned short Server::start()
{
  const ServiceConfig& cfg = impl_->service->config();
  const tcp::endpoint endpoint(asio::ip::make_address(cfg.host), cfg.port);
  impl_->acceptor.open(endpoint.protocol());
  impl_->acceptor.set_option(asio::socket_base::reuse_address(true));
  impl_->acceptor.bind(endpoint);
  impl_->acceptor.listen(asio::socket_base::max_listen_connections);

  impl_->service->on_session_created([impl = impl_.get()](std::shared_ptr<Session> s) { impl->add_ticker(std::move(s)); });
  impl_->accept();
  const unsigned n = std::max(1u, cfg.threads);
  for (unsigned i = 0; i < n; ++i)
  {
    impl_->threads.emplace_back([this] { impl_->ioc.run(); });
  }
  return port();
}

unsigned short Server::port() const
{
  beast::error_code ec;
  const auto ep = impl_->acceptor.local_endpoint(ec);
  return ec ? 0 : ep.port();
}

void Server::wait()
{
  asio::signal_set signals(impl_->ioc, SIGINT, SIGTERM);
  signals.async_wait([impl = impl_.get()](beast::error_code ec, int) {
    if (!ec)
    {
      std::lock_guard lock(impl->mutex);
      impl->signalled = true;
      impl->stopped_cv.notify_all();
    }
  });
  {
    std::unique_lock lock(impl_->mutex);
    impl_->stopped_cv.wait(lock, [this] { return impl_->stopped || impl_->signalled; });
  }
  stop();
}

void Server::stop()
{
  {
    std::lock_guard lock(impl_->mutex);
    if (impl_->stopped)
    {
      return;
    }
    impl_->stopped = true;
    for (auto& t : impl_->tickers)
    {
      t->cancel();
    }
  }
  impl_->service->on_session_created(nullptr);
  impl_->guard.reset();
  impl_->ioc.stop();
  for (auto& t : impl_->threads)
  {
    if (t.joinable())
    {
      t.join();
    }
  }
  beast::error_code ignored;
  impl_->acceptor.close(ignored);
  impl_->workers.join();
  impl_->stopped_cv.notify_all();
}

}  // namespace ergodic::service
