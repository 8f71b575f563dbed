// SPDX-License-Identifier: Apache-2.0
#include "shapectl/live_server.hpp"

#include <chrono>
#include <deque>
#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "shapectl/errors.hpp"

namespace shapectl {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

// Clients that fall this far behind are disconnected rather than buffered.
constexpr std::size_t kMaxQueued = 256;

}  // namespace

struct LiveServer::Impl {
  struct Client;

  LiveSession& session;
  ServeOptions opt;
  net::io_context ioc;
  tcp::acceptor acceptor;
  std::set<std::shared_ptr<Client>> clients;  // io thread only
  std::atomic<bool> stopping{false};
  std::atomic<long> ticks{0};
  std::atomic<long> overruns{0};
  std::atomic<int> n_clients{0};
  std::atomic<double> now_ms{0.0};

  Impl(LiveSession& s, ServeOptions o)
      : session(s), opt(std::move(o)), acceptor(ioc) {
    tcp::endpoint ep(net::ip::make_address(opt.address), static_cast<unsigned short>(opt.port));
    beast::error_code ec;
    acceptor.open(ep.protocol(), ec);
    if (!ec) acceptor.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor.bind(ep, ec);
    if (!ec) acceptor.listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw ConfigError("cannot listen on " + opt.address + ":" + std::to_string(opt.port) +
                              ": " + ec.message());
  }

  void log(const std::string& line) {
    if (opt.log) *opt.log << line << std::endl;
  }

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      auto c = std::make_shared<Client>(std::move(socket), *this);
      c->start();
      accept();
    });
  }

  struct Client : std::enable_shared_from_this<Client> {
    websocket::stream<tcp::socket> ws;
    beast::flat_buffer buffer;
    std::deque<std::string> queue;
    long seq = 0;
    Impl& srv;

    Client(tcp::socket s, Impl& server) : ws(std::move(s)), srv(server) {}

    void start() {
      ws.text(true);
      ws.async_accept([self = shared_from_this()](beast::error_code ec) {
        if (ec) return;
        self->srv.clients.insert(self);
        self->srv.n_clients = static_cast<int>(self->srv.clients.size());
        self->send("hello", self->srv.session.hello_payload(), self->srv.now_ms.load());
        self->read();
      });
    }

    void read() {
      ws.async_read(buffer, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) {
          self->drop();
          return;
        }
        const std::string text = beast::buffers_to_string(self->buffer.data());
        self->buffer.consume(self->buffer.size());
        try {
          self->srv.session.submit(
              parse_client_message(text, self->srv.session.runner().plan_config()));
        } catch (const ProtocolError& e) {
          self->send("fault", fault_payload("protocol", e.what()), self->srv.now_ms.load());
        }
        self->read();
      });
    }

    void send(const std::string& kind, const std::string& payload, double t_ms) {
      if (queue.size() >= kMaxQueued) {
        srv.log("client too slow, disconnecting");
        beast::error_code ignored;
        ws.next_layer().close(ignored);
        drop();
        return;
      }
      queue.push_back(make_envelope(kind, seq++, t_ms, payload));
      if (queue.size() == 1) write();
    }

    void write() {
      ws.async_write(net::buffer(queue.front()),
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       if (ec) {
                         self->drop();
                         return;
                       }
                       self->queue.pop_front();
                       if (!self->queue.empty()) self->write();
                     });
    }

    void drop() {
      srv.clients.erase(shared_from_this());
      srv.n_clients = static_cast<int>(srv.clients.size());
    }
  };
};

LiveServer::LiveServer(LiveSession& session, ServeOptions options)
    : impl_(std::make_unique<Impl>(session, std::move(options))) {}

LiveServer::~LiveServer() { stop(); }

int LiveServer::port() const { return impl_->acceptor.local_endpoint().port(); }
long LiveServer::ticks() const { return impl_->ticks; }
long LiveServer::overruns() const { return impl_->overruns; }
int LiveServer::clients() const { return impl_->n_clients; }

void LiveServer::stop() { impl_->stopping = true; }

void LiveServer::run() {
  Impl& s = *impl_;
  auto guard = net::make_work_guard(s.ioc);
  s.accept();
  std::thread io([&] { s.ioc.run(); });

  std::optional<SessionRecorder> recorder;
  if (s.opt.record) recorder.emplace(*s.opt.record);
  long state_seq = 0;
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(
      std::chrono::duration<double>(1.0 / s.session.config().tick_hz));
  auto next = clock::now();
  while (!s.stopping) {
    const auto start = clock::now();
    LiveSession::Tick t = s.session.tick();
    s.now_ms = t.t_ms;
    if (recorder) recorder->record(t, state_seq);
    if (t.broadcast) {
      ++state_seq;
      net::post(s.ioc, [&s, payload = std::move(t.state_payload), ms = t.t_ms] {
        // Copy: a failing send erases from the set.
        const auto snapshot = s.clients;
        for (const auto& c : snapshot) c->send("state", payload, ms);
      });
    }
    ++s.ticks;
    if (s.opt.max_ticks > 0 && s.ticks >= s.opt.max_ticks) break;
    const auto end = clock::now();
    if (end - start > period) {
      ++s.overruns;
      s.log("tick overrun at tick " + std::to_string(t.index) + ": " +
            std::to_string(std::chrono::duration<double, std::milli>(end - start).count()) + " ms");
    }
    next += period;
    if (next < end)
      next = end;
    else
      std::this_thread::sleep_until(next);
  }

  net::post(s.ioc, [&s] {
    beast::error_code ignored;
    s.acceptor.close(ignored);
    for (const auto& c : s.clients) c->ws.next_layer().close(ignored);
    s.clients.clear();
    s.n_clients = 0;
  });
  guard.reset();
  io.join();
  s.ioc.restart();
}

}  // namespace shapectl
