#pragma once

// Child-process adapters speaking newline-delimited JSON over stdin/stdout.
//
//   -> {"cmd":"hello","protocol":1}
//   <- {"ok":true,"name":"<adapter>","caps":["classify","reduce"]}
//   -> {"cmd":"fit_predict","seed":S,"x_train":[[...]],"y_train":[...],"x_eval":[[...]]}
//   <- {"ok":true,"probs":[...]}
//   -> {"cmd":"reduce","seed":S,"k":K,"x_train":[[...]],"x_apply":[[...]]}
//   <- {"ok":true,"train":[[...]],"apply":[[...]]}
//   errors: {"ok":false,"error":"<message>"}
//
// One process per session; the session is torn down when it goes out of
// scope.

#include <sys/types.h>

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

namespace halodet {

inline constexpr int kAdapterProtocol = 1;
inline constexpr double kDefaultAdapterTimeoutSeconds = 300.0;
inline constexpr const char* kAdapterEnvVar = "HALODET_ADAPTER";

struct AdapterHandle {
  std::vector<std::string> command;  // argv[0] is looked up on PATH
  int protocol_version = kAdapterProtocol;
  double timeout_seconds = kDefaultAdapterTimeoutSeconds;
  std::uint64_t seed = 0;
};

// Splits a command line on whitespace. Single and double quotes group words.
std::vector<std::string> split_command_line(std::string_view line);

AdapterHandle adapter_from_command_line(std::string_view line, double timeout_seconds = kDefaultAdapterTimeoutSeconds,
                                        std::uint64_t seed = 0);

struct AdapterHello {
  std::string name;
  std::vector<std::string> caps;
  bool has_cap(std::string_view cap) const;
};

class AdapterSession {
 public:
  // Launches the process and performs the handshake.
  explicit AdapterSession(const AdapterHandle& handle);
  ~AdapterSession();
  AdapterSession(const AdapterSession&) = delete;
  AdapterSession& operator=(const AdapterSession&) = delete;

  const AdapterHello& hello() const { return hello_; }

  // Sends one request and returns the reply object. Replies with ok:false
  // become Error(AdapterRejected).
  nlohmann::json request(const nlohmann::json& message);

 private:
  void send_line(const std::string& line, std::chrono::steady_clock::time_point deadline);
  std::string read_line(std::chrono::steady_clock::time_point deadline);
  std::string exit_description();
  void terminate();

  AdapterHandle handle_;
  AdapterHello hello_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  bool reaped_ = false;
  int wait_status_ = 0;
};

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
// Throws Error(AdapterMalformed) on ragged rows or non-numbers.
Eigen::MatrixXd matrix_from_json(const nlohmann::json& rows, std::string_view what);

}  // namespace halodet
