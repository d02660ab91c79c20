#include <doctest.h>

#include "oracles.hpp"
#include "ptyfed/errors.hpp"
#include "ptyfed/partition.hpp"
#include "ptyfed/phantoms.hpp"

using namespace ptyfed;
using namespace ptyfed::ptycho;

namespace {

ScanDataset star_view(Shape object = {64, 64}, Shape probe = {16, 16}, std::size_t step = 8) {
  phantoms::PhantomSpec spec;
  spec.object_shape = object;
  spec.probe_shape = probe;
  spec.step = step;
  return phantoms::make_view(spec, 1);
}

}  // namespace

TEST_CASE("grid shapes") {
  const auto view = star_view();
  CHECK(partition_positions(view.positions, view.object_shape, view.probe_shape, 1).cols == 1);
  auto two = partition_positions(view.positions, view.object_shape, view.probe_shape, 2);
  CHECK(two.rows == 1);
  CHECK(two.cols == 2);
  auto four = partition_positions(view.positions, view.object_shape, view.probe_shape, 4);
  CHECK(four.rows == 2);
  CHECK(four.cols == 2);
  auto six = partition_positions(view.positions, view.object_shape, view.probe_shape, 6);
  CHECK(six.rows == 2);
  CHECK(six.cols == 3);
}

TEST_CASE("every position lands in exactly one cell whose halo holds its footprint") {
  const auto view = star_view();
  for (std::size_t n : {1, 2, 3, 4, 6, 8, 9}) {
    const auto plan = partition_positions(view.positions, view.object_shape, view.probe_shape, n);
    REQUIRE(plan.cells.size() == n);
    std::vector<int> seen(view.count(), 0);
    for (const auto& cell : plan.cells) {
      CHECK(cell.halo.contains(cell.owned));
      for (auto j : cell.positions) {
        ++seen[j];
        CHECK(cell.halo.contains(view.positions.footprint(j, view.probe_shape)));
        const auto fp = view.positions.footprint(j, view.probe_shape);
        const std::size_t cy = fp.y0 + view.probe_shape.height / 2, cx = fp.x0 + view.probe_shape.width / 2;
        CHECK(cy >= cell.owned.y0);
        CHECK(cy < cell.owned.y1);
        CHECK(cx >= cell.owned.x0);
        CHECK(cx < cell.owned.x1);
      }
    }
    for (int s : seen) CHECK(s == 1);
    // Owned rectangles tile the object.
    std::size_t area = 0;
    for (const auto& cell : plan.cells) area += cell.owned.height() * cell.owned.width();
    CHECK(area == view.object_shape.pixels());
  }
}

TEST_CASE("more partitions than positions is rejected") {
  const auto view = star_view({16, 16}, {8, 8}, 8);  // 2x2 positions
  CHECK_THROWS_AS(partition_positions(view.positions, view.object_shape, view.probe_shape, 5), ConfigError);
  CHECK_NOTHROW(partition_positions(view.positions, view.object_shape, view.probe_shape, 4));
}

TEST_CASE("partitioned solver reproduces the monolithic iterate") {
  const auto view = star_view({48, 48}, {16, 16}, 8);
  const auto obj0 = default_initial_object(view.object_shape);
  const auto probe0 = default_initial_probe(view.probe_shape, 4);
  for (bool recover : {false, true}) {
    ReconConfig config;
    config.iterations = 6;
    config.recover_probe = recover;
    const auto mono = reconstruct(view, obj0, probe0, config);
    for (std::size_t n : {2, 3, 4}) {
      config.partitions = n;
      const auto part = reconstruct(view, obj0, probe0, config);
      CHECK(max_relative_difference(part.object, mono.object) < 1e-10);
      CHECK(max_relative_difference(part.probe, mono.probe) < 1e-10);
      REQUIRE(part.residual_history.size() == mono.residual_history.size());
      for (std::size_t i = 0; i < mono.residual_history.size(); ++i) {
        CHECK(part.residual_history[i] == doctest::Approx(mono.residual_history[i]).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("partial contributions sum to the full correction") {
  const auto view = star_view({32, 32}, {8, 8}, 4);
  const auto obj = default_initial_object(view.object_shape);
  const auto& probe = *view.probe;
  const auto plan = partition_positions(view.positions, view.object_shape, view.probe_shape, 4);
  ComplexField2D object_sum(view.object_shape);
  double residual_sum = 0.0;
  for (const auto& cell : plan.cells) {
    const auto part = partial_contribution(view, obj, probe, cell, false);
    residual_sum += part.residual;
    for (std::size_t y = 0; y < part.window.height(); ++y) {
      for (std::size_t x = 0; x < part.window.width(); ++x) {
        object_sum(part.window.y0 + y, part.window.x0 + x) += part.object(y, x);
      }
    }
  }
  CHECK(residual_sum == doctest::Approx(residual(view, obj, probe)).epsilon(1e-12));
  // The summed correction is -gradient / 2N.
  const auto g = residual_gradient(view, obj, probe);
  ComplexField2D expected(view.object_shape);
  for (std::size_t i = 0; i < expected.size(); ++i) expected.data()[i] = -g.object.data()[i] / (2.0 * 64.0);
  CHECK(oracle::relative_l2(object_sum, expected) < 1e-12);
}

TEST_CASE("partitioned solver honours cancellation") {
  const auto view = star_view({32, 32}, {8, 8}, 4);
  ReconConfig config;
  config.partitions = 4;
  std::stop_source stop;
  stop.request_stop();
  config.stop = stop.get_token();
  CHECK_THROWS_AS(reconstruct(view, default_initial_object(view.object_shape), *view.probe, config), CancelledError);
}
