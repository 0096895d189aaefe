#include <cmath>
#include <cstdlib>
#include <limits>
#include <memory>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "idpose/errors.hpp"
#include "idpose/estimator.hpp"
#include "idpose/remote.hpp"
#include "idpose/synthetic.hpp"
#include "idpose/wire.hpp"

using namespace idpose;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

SyntheticBackend make_backend() {
  SyntheticBackend b(make_scene({}, 21));
  b.add_view("a", {1.2, 0.3, 3.0});
  b.add_view("b", {1.6, 2.1, 3.0});
  return b;
}

ChannelFactory loopback(ProtocolServer& server) {
  return [&server] { return std::make_unique<LoopbackChannel>(server); };
}

// Loopback whose first `faults` evaluate exchanges fail like a dropped socket.
struct FaultState {
  int faults = 0;
  int connections = 0;
};

class FlakyChannel : public LineChannel {
 public:
  FlakyChannel(ProtocolServer& server, FaultState& state)
      : inner_(server), state_(state) {}
  void write_line(std::string_view line) override {
    if (line.find("\"evaluate\"") != std::string_view::npos && state_.faults > 0) {
      --state_.faults;
      broken_ = true;
    }
    if (broken_) throw Error(ErrorCode::kBackendUnavailable, "connection reset");
    inner_.write_line(line);
  }
  std::string read_line() override {
    if (broken_) throw Error(ErrorCode::kBackendUnavailable, "connection reset");
    return inner_.read_line();
  }

 private:
  LoopbackChannel inner_;
  FaultState& state_;
  bool broken_ = false;
};

}  // namespace

TEST_CASE("reals survive the text round trip bit-exactly") {
  for (double v : {0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, -0.0,
                   std::numeric_limits<double>::denorm_min()}) {
    CHECK(std::strtod(wire::format_real(v).c_str(), nullptr) == v);
  }
  CHECK(code_of([] { wire::format_real(NAN); }) == ErrorCode::kProtocol);
}

TEST_CASE("evaluate and result frames round-trip") {
  const EvalRequest req{"ref view", "tgt\"x", {0.1, -2.7, 1.0 / 7.0},
                        {0xffffffffffffffffULL, 0.3}, true};
  const std::string line = wire::encode_evaluate(req);
  CHECK(line.find('\n') == std::string::npos);
  const EvalRequest back = wire::decode_evaluate(wire::parse_message(line));
  CHECK(back.reference_id == req.reference_id);
  CHECK(back.target_id == req.target_id);
  CHECK(back.pose == req.pose);
  CHECK(back.noise.seed == req.noise.seed);
  CHECK(back.noise.t_frac == req.noise.t_frac);
  CHECK(back.want_gradient);

  const EvalResult res{0.123456789012345678, Eigen::Vector3d(1e-17, -3.5, 2.0 / 3.0)};
  const EvalResult r2 = wire::decode_result(wire::parse_message(wire::encode_result(res)));
  CHECK(r2.error == res.error);
  CHECK(*r2.gradient == *res.gradient);
  const EvalResult r3 =
      wire::decode_result(wire::parse_message(wire::encode_result({2.0, std::nullopt})));
  CHECK_FALSE(r3.gradient.has_value());

  const BackendCapabilities caps{{4, 32, 32}, false, 7};
  const auto c = wire::decode_hello_reply(wire::parse_message(wire::encode_hello_reply(caps)));
  CHECK(c.latent_shape == caps.latent_shape);
  CHECK_FALSE(c.has_gradient);
  CHECK(c.max_concurrency == 7);
}

TEST_CASE("malformed frames are protocol errors") {
  CHECK(code_of([] { wire::parse_message("{not json"); }) == ErrorCode::kProtocol);
  CHECK(code_of([] { wire::parse_message("{\"x\":1}"); }) == ErrorCode::kProtocol);
  CHECK(code_of([] {
          wire::decode_evaluate(wire::parse_message("{\"op\":\"evaluate\",\"ref\":\"a\"}"));
        }) == ErrorCode::kProtocol);
  CHECK(code_of([] {
          wire::decode_result(wire::parse_message(wire::encode_error("boom")));
        }) == ErrorCode::kRemoteEval);
}

TEST_CASE("base64") {
  CHECK(wire::base64_encode("") == "");
  CHECK(wire::base64_encode("f") == "Zg==");
  CHECK(wire::base64_encode("fo") == "Zm8=");
  CHECK(wire::base64_encode("foobar") == "Zm9vYmFy");
  std::string bytes;
  for (int i = 0; i < 256; ++i) bytes.push_back(static_cast<char>(i));
  CHECK(wire::base64_decode(wire::base64_encode(bytes)) == bytes);
  CHECK_THROWS_AS(wire::base64_decode("Zm9v!"), Error);
}

TEST_CASE("server answers every message with one line") {
  SyntheticBackend b = make_backend();
  ProtocolServer server(b);
  const auto hello = wire::parse_message(server.handle(wire::encode_hello()));
  CHECK(hello["op"] == "hello");
  CHECK(wire::decode_hello_reply(hello).has_gradient);

  const auto err = wire::parse_message(server.handle("garbage"));
  CHECK(err["op"] == "error");
  const auto unknown = wire::parse_message(
      server.handle(wire::encode_evaluate({"a", "nope", {}, {1, 0.2}, false})));
  CHECK(unknown["op"] == "error");
}

TEST_CASE("remote evaluation matches in-process evaluation") {
  SyntheticBackend b = make_backend();
  ProtocolServer server(b);
  RemoteBackend remote(loopback(server));
  CHECK(remote.capabilities().latent_shape == b.capabilities().latent_shape);
  for (int k = 0; k < 5; ++k) {
    const EvalRequest req{"a", "b", {0.05 * k, 1.0 + 0.3 * k, 0.01 * k}, {99u + k, 0.2 + 0.1 * k}, true};
    const EvalResult local = b.evaluate(req);
    const EvalResult far = remote.evaluate(req);
    CHECK(std::abs(far.error - local.error) <= 1e-6 * std::abs(local.error));
    CHECK((*far.gradient - *local.gradient).norm() <= 1e-6 * local.gradient->norm());
  }
  CHECK(code_of([&] { remote.evaluate({"a", "zzz", {}, {1, 0.2}, false}); }) ==
        ErrorCode::kRemoteEval);
}

TEST_CASE("gradient-free servers fall back to finite differences") {
  SyntheticBackend b = make_backend();
  ServerOptions opts;
  opts.advertise_gradient = false;
  ProtocolServer server(b, opts);
  RemoteBackend remote(loopback(server));
  CHECK_FALSE(remote.capabilities().has_gradient);
  const EvalResult raw = remote.evaluate({"a", "b", {0.1, 1.5, 0}, {3, 0.4}, true});
  CHECK_FALSE(raw.gradient.has_value());

  const SphericalPose p{0.1, 1.5, 0.0};
  const auto fd = directional_error(remote, "a", "b", p, {3, 0.4}, true);
  const auto exact = directional_error(b, "a", "b", p, {3, 0.4}, true);
  CHECK((*fd.gradient - *exact.gradient).norm() < 1e-3 * exact.gradient->norm());
}

TEST_CASE("transport faults are retried transparently") {
  SyntheticBackend b = make_backend();
  int registered = 0;
  ServerOptions opts;
  opts.on_register = [&](const std::string&, const std::string& bytes) {
    CHECK(bytes == "png-bytes");
    ++registered;
  };
  ProtocolServer server(b, opts);
  FaultState state;
  ChannelFactory flaky = [&] {
    ++state.connections;
    return std::make_unique<FlakyChannel>(server, state);
  };

  EstimationConfig cfg;
  cfg.m_candidates = 2;
  cfg.probe_batch = 2;
  cfg.explore_iters_per_candidate = 3;
  cfg.refine_iters_per_pose = 10;
  RemoteBackend clean(loopback(server));
  const PairEstimate want = estimate_pair("a", "b", cfg, clean);

  RemoteBackend remote(flaky, {3, 1});
  remote.register_view("a", "png-bytes");
  CHECK(registered == 1);
  state.faults = 3;
  const PairEstimate got = estimate_pair("a", "b", cfg, remote);
  CHECK(got.pose == want.pose);
  CHECK(state.faults == 0);
  // Every reconnect replays the registration.
  CHECK(registered == state.connections);

  state.faults = 4;
  CHECK(code_of([&] { remote.evaluate({"a", "b", {}, {1, 0.2}, false}); }) ==
        ErrorCode::kBackendUnavailable);
}

TEST_CASE("unreachable endpoints") {
  CHECK(code_of([] { RemoteBackend r(endpoint_factory("tcp://127.0.0.1:1"), {1, 1}); }) ==
        ErrorCode::kBackendUnavailable);
  CHECK_THROWS_AS(endpoint_factory("udp://x"), ValidationError);
}

TEST_CASE("tcp server") {
  SyntheticBackend b = make_backend();
  ProtocolServer server(b);
  TcpServer tcp(server, 0);
  tcp.start();
  REQUIRE(tcp.port() != 0);
  {
    RemoteBackend remote(endpoint_factory("tcp://127.0.0.1:" + std::to_string(tcp.port())),
                         {3, 2});
    const EvalRequest req{"a", "b", {0.1, 2.0, 0.0}, {5, 0.3}, true};
    CHECK(remote.evaluate(req).error == doctest::Approx(b.evaluate(req).error).epsilon(1e-12));
  }
  tcp.stop();
}

TEST_CASE("process channel") {
  auto ch = spawn_process("cat");
  ch->write_line("{\"op\":\"hello\"}");
  CHECK(ch->read_line() == "{\"op\":\"hello\"}");
  auto dead = spawn_process("true");
  CHECK(code_of([&] {
          dead->write_line("x");
          dead->read_line();
        }) == ErrorCode::kBackendUnavailable);
}
