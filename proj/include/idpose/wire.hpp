#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "idpose/backend.hpp"

// Line-delimited JSON messages of the predictor protocol. Encoders return a
// single line without the trailing newline; every real is written with 17
// significant digits so doubles survive the round trip bit-exactly.
namespace idpose::wire {

std::string format_real(double v);

std::string encode_hello();
std::string encode_hello_reply(const BackendCapabilities& caps);
std::string encode_register_view(std::string_view id, std::string_view image_b64);
std::string encode_ok(std::string_view id);
std::string encode_evaluate(const EvalRequest& req);
std::string encode_result(const EvalResult& res);
std::string encode_error(std::string_view message);

// Parses one line; throws Error(kProtocol) on malformed JSON or a missing op.
nlohmann::json parse_message(std::string_view line);

BackendCapabilities decode_hello_reply(const nlohmann::json& msg);
EvalRequest decode_evaluate(const nlohmann::json& msg);
// Throws Error(kRemoteEval) carrying the server message for error frames.
EvalResult decode_result(const nlohmann::json& msg);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace idpose::wire
