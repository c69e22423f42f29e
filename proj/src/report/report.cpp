#include "report/report.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

namespace invflow {

double now_ms() {
  auto t = std::chrono::steady_clock::now().time_since_epoch();
  return std::chrono::duration<double, std::milli>(t).count();
}

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int64_t peak_memory_bytes() {
  std::ifstream status("/proc/self/status");
  std::string line;
  while (std::getline(status, line)) {
    if (line.rfind("VmHWM:", 0) != 0) continue;
    std::istringstream fields(line.substr(6));
    int64_t kb = 0;
    fields >> kb;
    if (fields) return kb * 1024;
  }
  return -1;
}

RepeatStats time_repeated(int warmup, int repeats, const std::function<void()>& fn) {
  for (int i = 0; i < warmup; ++i) fn();
  RepeatStats stats;
  stats.ms.reserve(static_cast<size_t>(repeats));
  for (int i = 0; i < repeats; ++i) {
    double t0 = now_ms();
    fn();
    stats.ms.push_back(now_ms() - t0);
  }
  double sum = 0.0;
  for (double v : stats.ms) sum += v;
  stats.mean = sum / static_cast<double>(stats.ms.size());
  double acc = 0.0;
  for (double v : stats.ms) acc += (v - stats.mean) * (v - stats.mean);
  stats.sd = stats.ms.size() > 1 ? std::sqrt(acc / static_cast<double>(stats.ms.size() - 1)) : 0.0;
  return stats;
}

RunReport::RunReport(const std::string& command) {
  j_["command"] = command;
  j_["started_at"] = utc_timestamp();
  j_["environment"] = {
      {"hardware_threads", static_cast<int>(std::thread::hardware_concurrency())},
      {"pointer_bits", static_cast<int>(sizeof(void*) * 8)},
  };
  j_["metrics"] = nlohmann::json::array();
}

void RunReport::add_metric(const std::string& name, const std::string& unit,
                           const RepeatStats& stats) {
  j_["metrics"].push_back({{"name", name},
                           {"unit", unit},
                           {"repeats", stats.ms.size()},
                           {"mean", stats.mean},
                           {"sd", stats.sd},
                           {"values", stats.ms}});
}

void RunReport::add_scalar(const std::string& name, const std::string& unit, double value) {
  j_["metrics"].push_back(
      {{"name", name}, {"unit", unit}, {"repeats", 1}, {"mean", value}, {"sd", 0.0}});
}

std::string RunReport::finish(int indent) {
  j_["finished_at"] = utc_timestamp();
  j_["peak_mem_bytes"] = peak_memory_bytes();
  return j_.dump(indent);
}

}  // namespace invflow
