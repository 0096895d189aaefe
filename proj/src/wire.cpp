#include "idpose/wire.hpp"

#include <array>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "idpose/errors.hpp"

namespace idpose::wire {

namespace {

std::string json_string(std::string_view s) { return nlohmann::json(s).dump(); }

std::string encode_triple(const Eigen::Vector3d& v) {
  return fmt::format("[{},{},{}]", format_real(v.x()), format_real(v.y()),
                     format_real(v.z()));
}

[[noreturn]] void protocol_error(const std::string& what) {
  throw Error(ErrorCode::kProtocol, what);
}

double real_field(const nlohmann::json& msg, const char* key) {
  if (!msg.contains(key) || !msg.at(key).is_number()) {
    protocol_error(fmt::format("field '{}' must be a number", key));
  }
  return msg.at(key).get<double>();
}

Eigen::Vector3d triple_field(const nlohmann::json& msg, const char* key) {
  if (!msg.contains(key) || !msg.at(key).is_array() || msg.at(key).size() != 3) {
    protocol_error(fmt::format("field '{}' must be an array of 3 numbers", key));
  }
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!msg.at(key)[i].is_number()) {
      protocol_error(fmt::format("field '{}' must hold numbers", key));
    }
    v[i] = msg.at(key)[i].get<double>();
  }
  return v;
}

std::string string_field(const nlohmann::json& msg, const char* key) {
  if (!msg.contains(key) || !msg.at(key).is_string()) {
    protocol_error(fmt::format("field '{}' must be a string", key));
  }
  return msg.at(key).get<std::string>();
}

constexpr std::string_view kAlphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

std::string format_real(double v) {
  if (!std::isfinite(v)) {
    throw Error(ErrorCode::kProtocol, "non-finite real cannot be serialized");
  }
  return fmt::format("{:.17g}", v);
}

std::string encode_hello() { return R"({"op":"hello"})"; }

std::string encode_hello_reply(const BackendCapabilities& caps) {
  return fmt::format(
      R"({{"op":"hello","latent_shape":[{},{},{}],"has_gradient":{},"max_concurrency":{}}})",
      caps.latent_shape.channels, caps.latent_shape.height,
      caps.latent_shape.width, caps.has_gradient ? "true" : "false",
      caps.max_concurrency);
}

std::string encode_register_view(std::string_view id,
                                 std::string_view image_b64) {
  return fmt::format(R"({{"op":"register_view","id":{},"image_b64":{}}})",
                     json_string(id), json_string(image_b64));
}

std::string encode_ok(std::string_view id) {
  return fmt::format(R"({{"op":"ok","id":{}}})", json_string(id));
}

std::string encode_evaluate(const EvalRequest& req) {
  return fmt::format(
      R"({{"op":"evaluate","ref":{},"tgt":{},"pose":{},"t_frac":{},"seed":{},"want_gradient":{}}})",
      json_string(req.reference_id), json_string(req.target_id),
      encode_triple(req.pose.as_vector()), format_real(req.noise.t_frac),
      req.noise.seed, req.want_gradient ? "true" : "false");
}

std::string encode_result(const EvalResult& res) {
  return fmt::format(R"({{"op":"result","error":{},"gradient":{}}})",
                     format_real(res.error),
                     res.gradient ? encode_triple(*res.gradient) : "null");
}

std::string encode_error(std::string_view message) {
  return fmt::format(R"({{"op":"error","message":{}}})", json_string(message));
}

nlohmann::json parse_message(std::string_view line) {
  nlohmann::json msg = nlohmann::json::parse(line, nullptr, false);
  if (msg.is_discarded() || !msg.is_object()) {
    protocol_error("message is not a JSON object");
  }
  if (!msg.contains("op") || !msg.at("op").is_string()) {
    protocol_error("message lacks an 'op' string");
  }
  return msg;
}

BackendCapabilities decode_hello_reply(const nlohmann::json& msg) {
  if (msg.value("op", "") == "error") {
    throw Error(ErrorCode::kRemoteEval, msg.value("message", "server error"));
  }
  if (msg.value("op", "") != "hello") protocol_error("expected a hello reply");
  const auto& shape = msg.at("latent_shape");
  if (!shape.is_array() || shape.size() != 3) {
    protocol_error("latent_shape must be [c,h,w]");
  }
  BackendCapabilities caps;
  caps.latent_shape = {shape[0].get<int>(), shape[1].get<int>(),
                       shape[2].get<int>()};
  caps.has_gradient = msg.at("has_gradient").get<bool>();
  caps.max_concurrency = msg.at("max_concurrency").get<int>();
  if (!caps.latent_shape.valid() || caps.max_concurrency < 1) {
    protocol_error("invalid capability report");
  }
  return caps;
}

EvalRequest decode_evaluate(const nlohmann::json& msg) {
  if (msg.value("op", "") != "evaluate") protocol_error("expected evaluate");
  EvalRequest req;
  req.reference_id = string_field(msg, "ref");
  req.target_id = string_field(msg, "tgt");
  req.pose = SphericalPose::from_vector(triple_field(msg, "pose"));
  req.noise.t_frac = real_field(msg, "t_frac");
  if (!msg.contains("seed") || !msg.at("seed").is_number_integer()) {
    protocol_error("field 'seed' must be an unsigned integer");
  }
  req.noise.seed = msg.at("seed").get<std::uint64_t>();
  req.want_gradient = msg.value("want_gradient", false);
  return req;
}

EvalResult decode_result(const nlohmann::json& msg) {
  const std::string op = msg.value("op", "");
  if (op == "error") {
    throw Error(ErrorCode::kRemoteEval, msg.value("message", "server error"));
  }
  if (op != "result") protocol_error("expected a result message");
  EvalResult res;
  res.error = real_field(msg, "error");
  if (msg.contains("gradient") && !msg.at("gradient").is_null()) {
    res.gradient = triple_field(msg, "gradient");
  }
  return res;
}

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    if (rest == 2) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  std::array<int, 256> lookup;
  lookup.fill(-1);
  for (std::size_t i = 0; i < kAlphabet.size(); ++i) {
    lookup[static_cast<unsigned char>(kAlphabet[i])] = static_cast<int>(i);
  }
  std::string out;
  unsigned acc = 0;
  int bits = 0;
  for (char ch : text) {
    if (ch == '=') break;
    const int v = lookup[static_cast<unsigned char>(ch)];
    if (v < 0) protocol_error("invalid base64 payload");
    acc = (acc << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((acc >> bits) & 0xFF);
    }
  }
  return out;
}

}  // namespace idpose::wire
