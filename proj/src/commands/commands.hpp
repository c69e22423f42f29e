#pragma once

#include <cstdint>
#include <string>

namespace invflow {

/// Trains a model per the JSON config and writes a checkpoint; returns the
/// run report. Throws std::invalid_argument listing every config problem.
std::string cmd_train(const std::string& config_json, const std::string& out_checkpoint,
                      int threads);

/// Loads a checkpoint, draws n samples at the given temperature, writes a
/// tiled PGM/PPM image; returns the run report.
std::string cmd_sample(const std::string& checkpoint_path, const std::string& out_image, int n,
                       double temperature, uint64_t seed, int threads);

/// Runs the numerical property battery. Every property lands in the report
/// with its measured error and tolerance, pass or fail; `passed` is the
/// conjunction. When inject_mask_violation is set, the kernels under test are
/// corrupted on the pinned tap first, so the battery must report failures.
std::string cmd_verify(int threads, bool inject_mask_violation, bool& passed);

/// Sweeps model sizes, kernel sizes, batch sizes and thread counts; writes a
/// CSV of timings (with a dense-elimination baseline column where the dense
/// system is small enough) and returns the run report.
std::string cmd_bench(const std::string& sizes, const std::string& kernels,
                      const std::string& batches, const std::string& thread_counts,
                      const std::string& out_csv);

}  // namespace invflow
