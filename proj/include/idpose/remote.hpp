#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "idpose/backend.hpp"

namespace idpose {

// A bidirectional stream of text lines. Transport failures (closed peer,
// refused connection, broken pipe) surface as Error(kBackendUnavailable).
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual void write_line(std::string_view line) = 0;
  virtual std::string read_line() = 0;
};

using ChannelFactory = std::function<std::unique_ptr<LineChannel>()>;

// Wraps borrowed iostreams, e.g. std::cin / std::cout for a stdio server.
class StreamChannel : public LineChannel {
 public:
  StreamChannel(std::istream& in, std::ostream& out) : in_(in), out_(out) {}
  void write_line(std::string_view line) override;
  std::string read_line() override;

 private:
  std::istream& in_;
  std::ostream& out_;
};

std::unique_ptr<LineChannel> connect_tcp(const std::string& host,
                                         std::uint16_t port);

// Runs `command` through /bin/sh with its stdin/stdout attached to the channel.
std::unique_ptr<LineChannel> spawn_process(const std::string& command);

// "tcp://host:port" or "exec:<shell command>".
ChannelFactory endpoint_factory(const std::string& endpoint);

struct ServerOptions {
  // When false the server reports has_gradient = false and never returns one.
  bool advertise_gradient = true;
  // Called for register_view with the decoded image bytes; throw to reject.
  std::function<void(const std::string& id, const std::string& image)>
      on_register;
};

// Answers protocol messages with a Backend. handle() is safe to call from
// several connections at once when the backend is.
class ProtocolServer {
 public:
  explicit ProtocolServer(Backend& backend, ServerOptions options = {});

  std::string handle(std::string_view line);
  // Serves until the peer closes the channel.
  void serve(LineChannel& channel);

 private:
  Backend& backend_;
  ServerOptions options_;
  std::mutex register_mutex_;
};

// In-process channel: every written line is answered synchronously.
class LoopbackChannel : public LineChannel {
 public:
  explicit LoopbackChannel(ProtocolServer& server) : server_(server) {}
  void write_line(std::string_view line) override;
  std::string read_line() override;

 private:
  ProtocolServer& server_;
  std::deque<std::string> replies_;
};

// Accepts TCP connections on 127.0.0.1 and serves each on its own thread.
class TcpServer {
 public:
  // port 0 picks an ephemeral port; see port().
  TcpServer(ProtocolServer& server, std::uint16_t port);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const { return port_; }
  void start();
  // Blocks the calling thread; returns after stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  ProtocolServer& server_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_thread_;
};

struct RemoteOptions {
  // Extra attempts after a transport failure; each one reconnects.
  int retries = 3;
  // Upper bound on simultaneously open connections (in-flight requests).
  int window = 4;
};

// Client side of the protocol. Registered views are replayed on every new
// connection, so a reconnect after a fault is invisible to the caller.
class RemoteBackend : public Backend {
 public:
  RemoteBackend(ChannelFactory factory, RemoteOptions options = {});
  ~RemoteBackend() override;

  void register_view(const std::string& id, const std::string& png_bytes);

  BackendCapabilities capabilities() const override;
  EvalResult evaluate(const EvalRequest& request) override;

 private:
  struct Connection {
    std::unique_ptr<LineChannel> channel;
    std::size_t registered = 0;  // prefix of registrations_ sent so far
  };
  std::unique_ptr<Connection> open_connection();
  std::unique_ptr<Connection> acquire();
  void release(std::unique_ptr<Connection> conn);
  void discard();
  void sync_registrations(Connection& conn);

  ChannelFactory factory_;
  RemoteOptions options_;
  BackendCapabilities server_caps_;

  std::mutex mutex_;
  std::condition_variable available_;
  std::vector<std::unique_ptr<Connection>> idle_;
  int open_ = 0;
  std::vector<std::pair<std::string, std::string>> registrations_;  // id, b64
};

}  // namespace idpose
