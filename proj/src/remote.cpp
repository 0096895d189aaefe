#include "idpose/remote.hpp"

#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <istream>
#include <ostream>

#include <boost/asio.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "idpose/errors.hpp"
#include "idpose/wire.hpp"

namespace idpose {

namespace asio = boost::asio;
using asio::ip::tcp;

namespace {

[[noreturn]] void unavailable(const std::string& what) {
  throw Error(ErrorCode::kBackendUnavailable, what);
}

class TcpChannel : public LineChannel {
 public:
  TcpChannel(const std::string& host, std::uint16_t port)
      : stream_(host, std::to_string(port)) {
    if (!stream_) {
      unavailable(fmt::format("cannot connect to {}:{}: {}", host, port,
                              stream_.error().message()));
    }
    // One small request per round trip: Nagle would stall every exchange.
    boost::system::error_code ec;
    stream_.socket().set_option(tcp::no_delay(true), ec);
  }
  void write_line(std::string_view line) override {
    StreamChannel(stream_, stream_).write_line(line);
  }
  std::string read_line() override {
    return StreamChannel(stream_, stream_).read_line();
  }

 private:
  tcp::iostream stream_;
};

// One end of a socketpair whose other end is a child's stdin/stdout.
class ProcessChannel : public LineChannel {
 public:
  explicit ProcessChannel(const std::string& command) {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
      unavailable(fmt::format("socketpair: {}", std::strerror(errno)));
    }
    pid_ = ::fork();
    if (pid_ < 0) {
      ::close(fds[0]);
      ::close(fds[1]);
      unavailable(fmt::format("fork: {}", std::strerror(errno)));
    }
    if (pid_ == 0) {
      ::dup2(fds[1], STDIN_FILENO);
      ::dup2(fds[1], STDOUT_FILENO);
      ::close(fds[0]);
      ::close(fds[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(fds[1]);
    fd_ = fds[0];
  }

  ~ProcessChannel() override {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }

  void write_line(std::string_view line) override {
    std::string buf(line);
    buf += '\n';
    std::size_t sent = 0;
    while (sent < buf.size()) {
      const ssize_t n =
          ::send(fd_, buf.data() + sent, buf.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        unavailable(fmt::format("write to child failed: {}", std::strerror(errno)));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() override {
    for (;;) {
      if (const auto nl = pending_.find('\n'); nl != std::string::npos) {
        std::string line = pending_.substr(0, nl);
        pending_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) unavailable("child process closed its output");
      pending_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_ = -1;
  pid_t pid_ = -1;
  std::string pending_;
};

}  // namespace

void StreamChannel::write_line(std::string_view line) {
  out_ << line << '\n';
  out_.flush();
  if (!out_) unavailable("write failed: stream closed");
}

std::string StreamChannel::read_line() {
  std::string line;
  if (!std::getline(in_, line)) unavailable("read failed: peer closed");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::unique_ptr<LineChannel> connect_tcp(const std::string& host,
                                         std::uint16_t port) {
  return std::make_unique<TcpChannel>(host, port);
}

std::unique_ptr<LineChannel> spawn_process(const std::string& command) {
  return std::make_unique<ProcessChannel>(command);
}

ChannelFactory endpoint_factory(const std::string& endpoint) {
  constexpr std::string_view kTcp = "tcp://";
  constexpr std::string_view kExec = "exec:";
  if (endpoint.starts_with(kTcp)) {
    const std::string rest = endpoint.substr(kTcp.size());
    const auto colon = rest.rfind(':');
    unsigned port = 0;
    const char* first = rest.data() + colon + 1;
    const char* last = rest.data() + rest.size();
    if (colon == std::string::npos || colon == 0 ||
        std::from_chars(first, last, port).ptr != last || port == 0 ||
        port > 65535) {
      throw ValidationError({"endpoint"});
    }
    const std::string host = rest.substr(0, colon);
    return [host, port] {
      return connect_tcp(host, static_cast<std::uint16_t>(port));
    };
  }
  if (endpoint.starts_with(kExec) && endpoint.size() > kExec.size()) {
    const std::string command = endpoint.substr(kExec.size());
    return [command] { return spawn_process(command); };
  }
  throw ValidationError({"endpoint"});
}

// ---------------------------------------------------------------- server

ProtocolServer::ProtocolServer(Backend& backend, ServerOptions options)
    : backend_(backend), options_(std::move(options)) {}

std::string ProtocolServer::handle(std::string_view line) {
  try {
    const nlohmann::json msg = wire::parse_message(line);
    const std::string op = msg.at("op").get<std::string>();
    if (op == "hello") {
      BackendCapabilities caps = backend_.capabilities();
      caps.has_gradient = caps.has_gradient && options_.advertise_gradient;
      return wire::encode_hello_reply(caps);
    }
    if (op == "register_view") {
      if (!msg.contains("id") || !msg.at("id").is_string() ||
          !msg.contains("image_b64") || !msg.at("image_b64").is_string()) {
        throw Error(ErrorCode::kProtocol,
                    "register_view needs string fields 'id' and 'image_b64'");
      }
      const std::string id = msg.at("id").get<std::string>();
      const std::string image =
          wire::base64_decode(msg.at("image_b64").get<std::string>());
      if (options_.on_register) {
        std::lock_guard lock(register_mutex_);
        options_.on_register(id, image);
      }
      return wire::encode_ok(id);
    }
    if (op == "evaluate") {
      EvalRequest req = wire::decode_evaluate(msg);
      req.want_gradient = req.want_gradient && options_.advertise_gradient;
      EvalResult res = backend_.evaluate(req);
      if (!options_.advertise_gradient) res.gradient.reset();
      return wire::encode_result(res);
    }
    return wire::encode_error(fmt::format("unknown op '{}'", op));
  } catch (const std::exception& e) {
    return wire::encode_error(e.what());
  }
}

void ProtocolServer::serve(LineChannel& channel) {
  try {
    for (;;) {
      const std::string line = channel.read_line();
      if (line.empty()) continue;
      channel.write_line(handle(line));
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kBackendUnavailable) throw;
  }
}

void LoopbackChannel::write_line(std::string_view line) {
  replies_.push_back(server_.handle(line));
}

std::string LoopbackChannel::read_line() {
  if (replies_.empty()) unavailable("loopback: no pending reply");
  std::string line = std::move(replies_.front());
  replies_.pop_front();
  return line;
}

struct TcpServer::Impl {
  asio::io_context io;
  tcp::acceptor acceptor{io};
  std::mutex mutex;
  std::vector<std::shared_ptr<tcp::iostream>> streams;
  std::vector<std::thread> workers;
};

TcpServer::TcpServer(ProtocolServer& server, std::uint16_t port)
    : impl_(std::make_unique<Impl>()), server_(server) {
  const tcp::endpoint ep(asio::ip::address_v4::loopback(), port);
  boost::system::error_code ec;
  impl_->acceptor.open(ep.protocol(), ec);
  if (!ec) impl_->acceptor.set_option(tcp::acceptor::reuse_address(true), ec);
  if (!ec) impl_->acceptor.bind(ep, ec);
  if (!ec) impl_->acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) unavailable(fmt::format("cannot listen on port {}: {}", port, ec.message()));
  port_ = impl_->acceptor.local_endpoint().port();
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::start() {
  acceptor_thread_ = std::thread([this] { run(); });
}

void TcpServer::run() {
  while (!stopping_) {
    auto stream = std::make_shared<tcp::iostream>();
    boost::system::error_code ec;
    impl_->acceptor.accept(stream->socket(), ec);
    if (stopping_) break;
    if (ec) continue;
    stream->socket().set_option(tcp::no_delay(true), ec);
    std::lock_guard lock(impl_->mutex);
    impl_->streams.push_back(stream);
    impl_->workers.emplace_back([this, stream] {
      StreamChannel channel(*stream, *stream);
      server_.serve(channel);
    });
  }
}

void TcpServer::stop() {
  if (stopping_.exchange(true)) return;
  {
    // Wake a blocking accept().
    tcp::iostream wake("127.0.0.1", std::to_string(port_));
  }
  if (acceptor_thread_.joinable()) acceptor_thread_.join();
  boost::system::error_code ec;
  impl_->acceptor.close(ec);
  std::lock_guard lock(impl_->mutex);
  for (auto& s : impl_->streams) {
    s->socket().shutdown(tcp::socket::shutdown_both, ec);
  }
  for (auto& w : impl_->workers) w.join();
  impl_->workers.clear();
  impl_->streams.clear();
}

// ---------------------------------------------------------------- client

RemoteBackend::RemoteBackend(ChannelFactory factory, RemoteOptions options)
    : factory_(std::move(factory)), options_(options) {
  if (options_.retries < 0 || options_.window < 1) {
    std::vector<std::string> bad;
    if (options_.retries < 0) bad.emplace_back("retries");
    if (options_.window < 1) bad.emplace_back("window");
    throw ValidationError(std::move(bad));
  }
  std::string last_failure;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    try {
      auto conn = open_connection();
      ++open_;
      release(std::move(conn));
      return;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kBackendUnavailable) throw;
      last_failure = e.what();
    }
  }
  unavailable(fmt::format("handshake failed after {} attempts: {}",
                          options_.retries + 1, last_failure));
}

RemoteBackend::~RemoteBackend() = default;

std::unique_ptr<RemoteBackend::Connection> RemoteBackend::open_connection() {
  auto conn = std::make_unique<Connection>();
  conn->channel = factory_();
  conn->channel->write_line(wire::encode_hello());
  server_caps_ =
      wire::decode_hello_reply(wire::parse_message(conn->channel->read_line()));
  return conn;
}

std::unique_ptr<RemoteBackend::Connection> RemoteBackend::acquire() {
  std::unique_lock lock(mutex_);
  available_.wait(lock, [&] { return !idle_.empty() || open_ < options_.window; });
  if (!idle_.empty()) {
    auto conn = std::move(idle_.back());
    idle_.pop_back();
    return conn;
  }
  ++open_;
  lock.unlock();
  try {
    return open_connection();
  } catch (...) {
    discard();
    throw;
  }
}

void RemoteBackend::release(std::unique_ptr<Connection> conn) {
  {
    std::lock_guard lock(mutex_);
    idle_.push_back(std::move(conn));
  }
  available_.notify_one();
}

void RemoteBackend::discard() {
  {
    std::lock_guard lock(mutex_);
    --open_;
  }
  available_.notify_one();
}

void RemoteBackend::sync_registrations(Connection& conn) {
  for (;;) {
    std::pair<std::string, std::string> next;
    {
      std::lock_guard lock(mutex_);
      if (conn.registered >= registrations_.size()) return;
      next = registrations_[conn.registered];
    }
    conn.channel->write_line(wire::encode_register_view(next.first, next.second));
    const nlohmann::json reply = wire::parse_message(conn.channel->read_line());
    if (reply.value("op", "") == "error") {
      throw Error(ErrorCode::kRemoteEval,
                  fmt::format("register_view '{}': {}", next.first,
                              reply.value("message", "server error")));
    }
    if (reply.value("op", "") != "ok") {
      throw Error(ErrorCode::kProtocol, "expected ok for register_view");
    }
    ++conn.registered;
  }
}

void RemoteBackend::register_view(const std::string& id,
                                  const std::string& png_bytes) {
  {
    std::lock_guard lock(mutex_);
    registrations_.emplace_back(id, wire::base64_encode(png_bytes));
  }
  // Surface rejections now rather than on the first evaluate.
  auto conn = acquire();
  try {
    sync_registrations(*conn);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kBackendUnavailable) {
      discard();
      return;  // replayed on the next connection
    }
    release(std::move(conn));
    std::lock_guard lock(mutex_);
    registrations_.pop_back();
    throw;
  }
  release(std::move(conn));
}

BackendCapabilities RemoteBackend::capabilities() const {
  BackendCapabilities caps = server_caps_;
  caps.max_concurrency = std::min(caps.max_concurrency, options_.window);
  return caps;
}

EvalResult RemoteBackend::evaluate(const EvalRequest& request) {
  const std::string line = wire::encode_evaluate(request);
  std::string last_failure;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    std::unique_ptr<Connection> conn;
    try {
      conn = acquire();
      sync_registrations(*conn);
      conn->channel->write_line(line);
      const nlohmann::json reply = wire::parse_message(conn->channel->read_line());
      release(std::move(conn));
      EvalResult res = wire::decode_result(reply);
      if (!request.want_gradient) res.gradient.reset();
      return res;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kBackendUnavailable) {
        if (conn) release(std::move(conn));
        throw;
      }
      if (conn) discard();
      last_failure = e.what();
    }
  }
  unavailable(fmt::format("evaluate failed after {} attempts: {}",
                          options_.retries + 1, last_failure));
}

}  // namespace idpose
