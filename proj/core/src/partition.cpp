#include "ptyfed/partition.hpp"

#include <algorithm>
#include <barrier>
#include <cmath>
#include <exception>
#include <thread>

#include "ptyfed/errors.hpp"

namespace ptyfed::ptycho {
namespace {

std::vector<std::size_t> split_bounds(std::size_t extent, std::size_t parts) {
  std::vector<std::size_t> bounds(parts + 1);
  for (std::size_t k = 0; k <= parts; ++k) bounds[k] = k * extent / parts;
  return bounds;
}

std::size_t cell_index(const std::vector<std::size_t>& bounds, std::size_t coord) {
  // bounds[k] <= coord < bounds[k + 1]
  const auto it = std::upper_bound(bounds.begin() + 1, bounds.end() - 1, coord);
  return static_cast<std::size_t>(it - (bounds.begin() + 1));
}

}  // namespace

PartitionPlan partition_positions(const ScanPositions& positions, Shape object_shape, Shape probe_shape,
                                  std::size_t partitions) {
  if (partitions < 1) throw ConfigError("partitions must be >= 1");
  if (partitions > positions.count()) {
    throw ConfigError("cannot split " + std::to_string(positions.count()) + " positions across " +
                      std::to_string(partitions) + " partitions");
  }
  positions.validate(object_shape, probe_shape);

  PartitionPlan plan;
  for (std::size_t d = 1; d * d <= partitions; ++d) {
    if (partitions % d == 0) plan.rows = d;
  }
  plan.cols = partitions / plan.rows;
  if (plan.rows > object_shape.height || plan.cols > object_shape.width) {
    throw ConfigError("object is too small for a " + std::to_string(plan.rows) + "x" + std::to_string(plan.cols) +
                      " partition grid");
  }

  const auto ys = split_bounds(object_shape.height, plan.rows);
  const auto xs = split_bounds(object_shape.width, plan.cols);
  const std::size_t halo_y = probe_shape.height > 0 ? probe_shape.height - 1 : 0;
  const std::size_t halo_x = probe_shape.width > 0 ? probe_shape.width - 1 : 0;

  plan.cells.resize(partitions);
  for (std::size_t r = 0; r < plan.rows; ++r) {
    for (std::size_t c = 0; c < plan.cols; ++c) {
      auto& cell = plan.cells[r * plan.cols + c];
      cell.owned = {ys[r], xs[c], ys[r + 1], xs[c + 1]};
      cell.halo = {cell.owned.y0 > halo_y ? cell.owned.y0 - halo_y : 0,
                   cell.owned.x0 > halo_x ? cell.owned.x0 - halo_x : 0,
                   std::min(object_shape.height, cell.owned.y1 + halo_y),
                   std::min(object_shape.width, cell.owned.x1 + halo_x)};
    }
  }

  for (std::size_t j = 0; j < positions.count(); ++j) {
    const auto center_y = static_cast<std::size_t>(positions[j].y) + probe_shape.height / 2;
    const auto center_x = static_cast<std::size_t>(positions[j].x) + probe_shape.width / 2;
    const auto r = cell_index(ys, center_y);
    const auto c = cell_index(xs, center_x);
    plan.cells[r * plan.cols + c].positions.push_back(j);
  }
  return plan;
}

PartialContribution partial_contribution(const ScanDataset& dataset, const ComplexField2D& object,
                                         const ComplexField2D& probe, const PartitionCell& cell, bool with_probe) {
  detail::CorrectionBuffers buffers{ComplexField2D(cell.halo.height(), cell.halo.width()), cell.halo.y0,
                                    cell.halo.x0, ComplexField2D(probe.shape())};
  double r = 0.0;
  for (const auto j : cell.positions) {
    if (!cell.halo.contains(dataset.positions.footprint(j, dataset.probe_shape))) {
      throw BoundsError("scan position " + std::to_string(j) + " leaves the halo of its cell");
    }
    r += detail::accumulate_position(dataset, j, object, probe, with_probe, buffers);
  }
  return {cell.halo, std::move(buffers.object), std::move(buffers.probe), r};
}

ReconResult partitioned_reconstruct(const ScanDataset& dataset, const ComplexField2D& initial_object,
                                    const ComplexField2D& initial_probe, const ReconConfig& config) {
  config.validate();
  if (config.solver != Solver::gradient_descent) {
    throw ConfigError("partitioned reconstruction requires the gradient-descent solver");
  }
  if (initial_object.shape() != dataset.object_shape || initial_probe.shape() != dataset.probe_shape) {
    throw ShapeError("partitioned_reconstruct: initial iterate does not match the dataset geometry");
  }

  const auto plan = partition_positions(dataset.positions, dataset.object_shape, dataset.probe_shape,
                                        config.partitions);
  const auto steps = normalized_steps(dataset, initial_object, initial_probe, config.step_size);
  const std::size_t workers = plan.cells.size();

  ReconResult result{initial_object, initial_probe, {}, 0, 0.0};
  result.residual_history.reserve(config.iterations);

  ComplexField2D object_sum(initial_object.shape());
  ComplexField2D probe_sum(initial_probe.shape());
  std::vector<PartialContribution> partials(workers);
  std::vector<std::exception_ptr> worker_errors(workers);
  std::exception_ptr failure;
  bool done = false;

  // Runs on exactly one thread once every worker has arrived; all reads of the shared
  // iterate in the next phase happen after it returns.
  auto synchronize = [&]() noexcept {
    try {
      for (auto& e : worker_errors) {
        if (e && !failure) failure = e;
      }
      if (failure) {
        done = true;
        return;
      }
      const std::size_t it = result.iterations_run;
      object_sum.fill({});
      probe_sum.fill({});
      double r = 0.0;
      // Halo reduction: each cell's window overlaps its neighbours by up to probe - 1
      // pixels; adding the windows in cell order sums the border contributions.
      for (const auto& part : partials) {
        for (std::size_t y = 0; y < part.window.height(); ++y) {
          auto dst = object_sum.row(part.window.y0 + y).subspan(part.window.x0, part.window.width());
          const auto src = part.object.row(y);
          for (std::size_t x = 0; x < dst.size(); ++x) dst[x] += src[x];
        }
        for (std::size_t i = 0; i < probe_sum.size(); ++i) probe_sum.data()[i] += part.probe.data()[i];
        r += part.residual;
      }
      if (!std::isfinite(r)) {
        throw DivergenceError(it, "reconstruction diverged at iteration " + std::to_string(it) +
                                      " (residual is not finite)");
      }
      result.residual_history.push_back(r);
      detail::apply_corrections(result.object, result.probe, object_sum, probe_sum, steps, config.recover_probe);
      if (!result.object.all_finite() || !result.probe.all_finite()) {
        throw DivergenceError(it, "reconstruction diverged at iteration " + std::to_string(it) +
                                      " (non-finite iterate)");
      }
      ++result.iterations_run;
      if (result.iterations_run >= config.iterations) done = true;
      if (!done && config.stop.stop_requested()) {
        throw CancelledError("reconstruction cancelled at iteration " + std::to_string(result.iterations_run));
      }
    } catch (...) {
      failure = std::current_exception();
      done = true;
    }
  };

  std::barrier sync(static_cast<std::ptrdiff_t>(workers), synchronize);
  {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        while (!done) {
          try {
            partials[w] = partial_contribution(dataset, result.object, result.probe, plan.cells[w],
                                               config.recover_probe);
          } catch (...) {
            worker_errors[w] = std::current_exception();
          }
          sync.arrive_and_wait();
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);

  result.final_residual = residual(dataset, result.object, result.probe);
  return result;
}

}  // namespace ptyfed::ptycho
