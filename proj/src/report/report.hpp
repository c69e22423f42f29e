#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace invflow {

/// Monotonic wall-clock milliseconds.
double now_ms();

/// UTC timestamp like 2026-08-17T12:34:56Z.
std::string utc_timestamp();

/// Peak resident set size of this process in bytes (VmHWM), or -1 when the
/// proc interface is unavailable. Note this is a process-lifetime high-water
/// mark: it never decreases between measurements.
int64_t peak_memory_bytes();

struct RepeatStats {
  std::vector<double> ms;
  double mean = 0.0;
  double sd = 0.0;
};

/// Runs fn `warmup` times unrecorded, then `repeats` recorded times.
RepeatStats time_repeated(int warmup, int repeats, const std::function<void()>& fn);

/// Structured result document shared by every command: the command name, an
/// echo of its effective configuration, named metrics with repeat statistics,
/// environment facts, and start/end timestamps.
class RunReport {
 public:
  explicit RunReport(const std::string& command);

  void set_config(nlohmann::json cfg) { j_["config"] = std::move(cfg); }
  void add_metric(const std::string& name, const std::string& unit, const RepeatStats& stats);
  void add_scalar(const std::string& name, const std::string& unit, double value);
  nlohmann::json& root() { return j_; }

  /// Stamps the end timestamp and peak memory, then serialises.
  std::string finish(int indent = 2);

 private:
  nlohmann::json j_;
};

}  // namespace invflow
