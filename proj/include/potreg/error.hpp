#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace potreg {

// Input or configuration error raised by a named pipeline stage
// (ingest, config, threshold, extract, design, fit, care, predict, simulate).
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error(message), stage_(std::move(stage)) {}

  [[nodiscard]] const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace potreg
