// Command-line front end. Talks to the library exclusively through the C API.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include <invflow/invflow.h>

namespace {

// 0 ok, 1 verify/numeric failure, 2 usage or config, 3 io
int exit_code_for(ivf_status status) {
  switch (status) {
    case IVF_OK:
      return 0;
    case IVF_ERR_INVALID_ARGUMENT:
      return 2;
    case IVF_ERR_IO:
      return 3;
    case IVF_ERR_VERIFY_FAILED:
    case IVF_ERR_NUMERIC:
    case IVF_ERR_INTERNAL:
    default:
      return 1;
  }
}

int finish(ivf_status status, char* report, const std::string& report_path) {
  if (report) {
    if (!report_path.empty()) {
      std::ofstream out(report_path, std::ios::binary);
      if (out) out << report << '\n';
      if (!out) std::cerr << "warning: could not write report to " << report_path << "\n";
    }
    std::cout << report << "\n";
    ivf_string_free(report);
  }
  if (status != IVF_OK) std::cerr << "error: " << ivf_last_error() << "\n";
  return exit_code_for(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"invflow: invertible masked convolution flow"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ivf_version()));

  std::string report_path;
  app.add_option("--report", report_path, "Also write the JSON run report to this file");

  // train
  auto* train = app.add_subcommand("train", "Train a model from a JSON config");
  std::string train_config;
  std::string train_out = "model.ckpt";
  int train_threads = 1;
  // no ExistingFile check: a missing config is an I/O error (exit 3), not usage
  train->add_option("--config", train_config, "Path to the train config JSON")->required();
  train->add_option("--out", train_out, "Checkpoint output path");
  train->add_option("--threads", train_threads, "Worker threads")->check(CLI::PositiveNumber);

  // sample
  auto* sample = app.add_subcommand("sample", "Sample images from a checkpoint");
  std::string sample_ckpt;
  std::string sample_out = "samples.pgm";
  int sample_n = 16;
  double sample_temp = 0.7;
  uint64_t sample_seed = 1;
  int sample_threads = 1;
  sample->add_option("--checkpoint", sample_ckpt, "Checkpoint to sample from")->required();
  sample->add_option("--out", sample_out, "Output image path (PGM or PPM)");
  sample->add_option("--n", sample_n, "Number of samples")->check(CLI::PositiveNumber);
  sample->add_option("--temperature", sample_temp, "Latent temperature (>= 0)");
  sample->add_option("--seed", sample_seed, "Sampling seed");
  sample->add_option("--threads", sample_threads, "Worker threads")->check(CLI::PositiveNumber);

  // verify
  auto* verify = app.add_subcommand("verify", "Run the numerical property battery");
  int verify_threads = 1;
  bool inject = false;
  verify->add_option("--threads", verify_threads, "Worker threads")->check(CLI::PositiveNumber);
  verify->add_flag("--inject-mask-violation", inject,
                   "Corrupt the pinned kernel tap first; the battery must then fail");

  // bench
  auto* bench = app.add_subcommand("bench", "Benchmark sweep; writes a CSV");
  std::string bench_sizes = "16,32";
  std::string bench_kernels = "3";
  std::string bench_batches = "1,4";
  std::string bench_threads = "1,2";
  std::string bench_out = "bench.csv";
  bench->add_option("--sizes", bench_sizes, "Comma-separated image sizes (divisible by 4)");
  bench->add_option("--kernels", bench_kernels, "Comma-separated kernel sizes");
  bench->add_option("--batches", bench_batches, "Comma-separated batch sizes");
  bench->add_option("--threads", bench_threads, "Comma-separated thread counts");
  bench->add_option("--out", bench_out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  char* report = nullptr;
  ivf_status status = IVF_OK;

  if (train->parsed()) {
    std::ifstream in(train_config, std::ios::binary);
    if (!in) {
      std::cerr << "error: cannot read config " << train_config << "\n";
      return 3;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    status = ivf_cmd_train(ss.str().c_str(), train_out.c_str(), train_threads, &report);
  } else if (sample->parsed()) {
    status = ivf_cmd_sample(sample_ckpt.c_str(), sample_out.c_str(), sample_n, sample_temp,
                            sample_seed, sample_threads, &report);
  } else if (verify->parsed()) {
    status = ivf_cmd_verify(verify_threads, inject ? 1 : 0, &report);
  } else if (bench->parsed()) {
    status = ivf_cmd_bench(bench_sizes.c_str(), bench_kernels.c_str(), bench_batches.c_str(),
                           bench_threads.c_str(), bench_out.c_str(), &report);
  }

  return finish(status, report, report_path);
}
