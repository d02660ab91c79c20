#include "ptyfed/recon_function.hpp"

#include <algorithm>

#include "ptyfed/clock.hpp"
#include "ptyfed/dataset_io.hpp"
#include "ptyfed/log.hpp"

namespace ptyfed::compute {
namespace fs = std::filesystem;
using json = nlohmann::json;

ptycho::ReconResult run_reconstruction_job(const fs::path& dataset_dir, const fs::path& out_dir,
                                           const ReconJobOptions& options) {
  const auto stored = io::read_dataset(dataset_dir);
  const auto dataset = io::normalized_intensities(stored);

  ptycho::ReconConfig config;
  config.iterations = options.iterations;
  config.solver = options.solver;
  config.step_size = options.step_size;
  config.recover_probe = options.recover_probe;
  config.seed = options.seed;
  config.stop = options.stop;
  config.partitions = std::clamp<std::size_t>(options.partitions, 1, dataset.positions.count());
  if (config.solver == ptycho::Solver::epie) config.partitions = 1;

  const auto object = ptycho::default_initial_object(dataset.object_shape);
  const bool known_probe = dataset.probe.has_value() && !options.recover_probe;
  const auto probe = known_probe ? *dataset.probe : ptycho::default_initial_probe(dataset.probe_shape, options.seed);

  auto result = ptycho::reconstruct(dataset, object, probe, config);
  io::write_reconstruction(result, out_dir);
  return result;
}

namespace {

fs::path resolve(const fs::path& root, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || root.empty() ? path : root / path;
}

}  // namespace

FunctionBody make_recon_function() {
  return [](const json& args, const TaskContext& ctx) -> json {
    if (!args.is_object()) throw ConfigError("reconstruction args must be an object");
    const auto input_dir = resolve(ctx.work_root, args.at("input_dir").get<std::string>());
    const auto recon_dir = resolve(ctx.work_root, args.at("recon_dir").get<std::string>());

    ReconJobOptions options;
    options.iterations = args.value("iterations", options.iterations);
    if (args.contains("solver")) options.solver = ptycho::solver_from_string(args.at("solver").get<std::string>());
    options.step_size = args.value("step_size", options.step_size);
    options.recover_probe = args.value("recover_probe", options.recover_probe);
    options.seed = args.value("seed", options.seed);
    options.partitions = std::max<std::size_t>(ctx.partitions(), 1);
    options.stop = ctx.stop;
    const double device_time = args.value("device_time_s", 0.0);

    const auto started = std::chrono::steady_clock::now();
    auto result = run_reconstruction_job(input_dir, recon_dir, options);
    const auto deadline = started + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                        std::chrono::duration<double>(std::max(device_time, 0.0)));
    if (!sleep_until(deadline, ctx.stop)) throw CancelledError("reconstruction cancelled");

    log::debug(ctx.task_id + ": reconstructed " + input_dir.string() + " -> " + recon_dir.string());
    return {{"recon_dir", args.at("recon_dir")},
            {"iterations_run", result.iterations_run},
            {"initial_residual", result.residual_history.empty() ? result.final_residual : result.residual_history.front()},
            {"final_residual", result.final_residual},
            {"partitions", options.partitions}};
  };
}

std::string register_recon_function(FunctionRegistry& registry) {
  return registry.register_function(kReconFunctionName, kReconCodeRef, make_recon_function());
}

}  // namespace ptyfed::compute
