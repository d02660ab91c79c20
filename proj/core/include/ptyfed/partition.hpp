#pragma once

#include <vector>

#include "ptyfed/ptycho.hpp"

namespace ptyfed::ptycho {

// One grid cell of the partitioned object.
struct PartitionCell {
  Rect owned;
  // owned expanded by (probe - 1) on every side, clipped to the object. Every footprint of
  // an assigned position lies inside it.
  Rect halo;
  std::vector<std::size_t> positions;
};

struct PartitionPlan {
  std::size_t rows = 1;
  std::size_t cols = 1;
  std::vector<PartitionCell> cells;
};

// Splits the object into a rows x cols grid (rows <= cols, rows the largest divisor of
// `partitions` not above its square root) and assigns each position to the cell that
// contains its patch center.
PartitionPlan partition_positions(const ScanPositions& positions, Shape object_shape, Shape probe_shape,
                                  std::size_t partitions);

// Corrections computed by one worker from its own positions, before synchronization.
struct PartialContribution {
  Rect window;
  ComplexField2D object;
  ComplexField2D probe;
  double residual = 0.0;
};

PartialContribution partial_contribution(const ScanDataset& dataset, const ComplexField2D& object,
                                         const ComplexField2D& probe, const PartitionCell& cell,
                                         bool with_probe);

// Grid-partitioned full-batch solver. Each worker owns one cell; at the end of every
// iteration the halo sums and probe partials are combined so the applied update equals
// the monolithic one.
ReconResult partitioned_reconstruct(const ScanDataset& dataset, const ComplexField2D& initial_object,
                                    const ComplexField2D& initial_probe, const ReconConfig& config);

}  // namespace ptyfed::ptycho
