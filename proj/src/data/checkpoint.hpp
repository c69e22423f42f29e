#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include "flow/adam.hpp"
#include "flow/model.hpp"

namespace invflow {

enum class CheckpointErrorKind { Io, BadMagic, BadVersion, Truncated, ShapeMismatch, MissingRecord };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

struct Checkpoint {
  FlowModel model;
  AdamState adam;
  int64_t step = 0;
  std::mt19937_64 rng;
};

/// Binary format: magic "IVFL", u32 version, u32 record count, then records of
/// (u32 name length, name, u8 dtype, u32 ndim, u64 dims..., payload), all
/// little-endian. Records cover config, parameters, Adam moments, step counter,
/// actnorm init flags, and the training RNG stream.
void save_checkpoint(const std::string& path, FlowModel& model, AdamState& adam, int64_t step,
                     const std::mt19937_64& rng);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace invflow
