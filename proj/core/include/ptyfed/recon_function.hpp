#pragma once

#include <filesystem>
#include <stop_token>
#include <string>

#include "ptyfed/compute_endpoint.hpp"
#include "ptyfed/ptycho.hpp"

namespace ptyfed::compute {

inline constexpr const char* kReconFunctionName = "ptycho.reconstruct";
inline constexpr const char* kReconCodeRef = "ptyfed.reconstruct/v1";

struct ReconJobOptions {
  std::size_t iterations = 100;
  ptycho::Solver solver = ptycho::Solver::gradient_descent;
  double step_size = 0.5;
  bool recover_probe = false;
  std::size_t partitions = 1;
  std::uint64_t seed = 0;
  std::stop_token stop;
};

// Reads the dataset container in dataset_dir, reconstructs it and writes object.bin,
// probe.bin and residuals.json to out_dir. Starts from an object of ones and, unless the
// probe is recovered, from the probe stored with the dataset. Partitions are clamped to
// the number of scan positions; ePIE always runs with one.
ptycho::ReconResult run_reconstruction_job(const std::filesystem::path& dataset_dir,
                                           const std::filesystem::path& out_dir, const ReconJobOptions& options);

// Function body for the endpoint. Args:
//   input_dir, recon_dir   dataset and output directories, relative to the work root
//   iterations, solver, step_size, recover_probe, seed   solver settings (optional)
//   device_time_s          minimum seconds the task keeps its slots busy, standing in
//                          for accelerator run time (optional, default 0)
// The partition count is the number of slots the task holds.
FunctionBody make_recon_function();

std::string register_recon_function(FunctionRegistry& registry);

}  // namespace ptyfed::compute
