#pragma once

// Adapter for simulators running as child processes. Protocol (one JSON
// object per line, UTF-8):
//
//   child -> parent, once at startup:
//     {"protocol": "bae-model/1", "input_dim": d, "output_dim": m}
//   parent -> child:   {"id": <int>, "k": [<float>...]}
//   child -> parent:   {"id": <int>, "y": [<float>...]}
//                   or {"id": <int>, "error": "<string>"}
//
// One request is in flight per process; concurrency comes from a pool of
// processes.

#include <chrono>
#include <memory>
#include <string>
#include <vector>

#include "bae/forward.hpp"

namespace bae {

inline constexpr const char* kExternalProtocol = "bae-model/1";

struct ExternalModelSpec {
  std::vector<std::string> command;  // argv; command[0] is resolved via PATH
  std::chrono::milliseconds timeout{300'000};
  int processes = 1;
};

/// Failure reasons are prefixed with one of: "simulator-error", "timeout",
/// "process-died", "protocol-violation". A child that timed out, died or broke
/// the protocol is restarted before its next request.
class ExternalModel final : public ForwardModel {
 public:
  /// Launches the pool and completes the handshake; throws Error on failure.
  explicit ExternalModel(ExternalModelSpec spec);
  ~ExternalModel() override;
  ExternalModel(const ExternalModel&) = delete;
  ExternalModel& operator=(const ExternalModel&) = delete;

  Eigen::Index input_dim() const override;
  Eigen::Index output_dim() const override;
  EvalResult evaluate(const Eigen::VectorXd& k) const override;

  const ExternalModelSpec& spec() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace bae
