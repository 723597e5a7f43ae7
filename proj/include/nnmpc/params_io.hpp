#pragma once

// Network parameter container format: a single-line JSON header carrying the
// architecture digest, dtype and per-layer shape list, terminated by '\n',
// followed by raw little-endian float64 payload, one layer after another in
// declaration order (weights row-major, then bias). Loading verifies the
// digest against the caller's spec and the exact payload length, so a file
// trained for one architecture cannot be wired into another.

#include <stdexcept>
#include <string>

#include "nnmpc/nn.hpp"

namespace nnmpc {

class ParamsIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_params(const std::string& path, const NetworkSpec& spec, const NetworkParams& params);
NetworkParams load_params(const std::string& path, const NetworkSpec& spec);

}  // namespace nnmpc
