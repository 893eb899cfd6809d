#pragma once

// Small hand-built rail layouts shared by the unit and acceptance tests.

#include <memory>
#include <vector>

#include "railmapf/rail_core.hpp"
#include "railmapf/sim_engine.hpp"

namespace railmapf::fixtures {

/// Open straight E-W track of `length` cells in a 1-row grid (has dead ends).
inline RailGrid straight_corridor(int length) {
  RailBuilder b(length, 1);
  for (int c = 0; c < length; ++c) b.link({0, c}, Direction::W, Direction::E);
  return b.build();
}

/// Rectangular ring along the border of a width x height grid.
inline RailGrid ring(int width, int height) {
  RailBuilder b(width, height);
  b.ring(0, 0, height - 1, width - 1);
  return b.build();
}

/// Ring whose top side (row 1) has a passing siding on row 0 between columns
/// `a` and `b`. Grid is width x height; the ring spans rows 1..height-1.
inline RailGrid ring_with_siding(int width, int height, int a, int b) {
  RailBuilder rb(width, height);
  rb.ring(1, 0, height - 1, width - 1);
  rb.link({0, a}, Direction::S, Direction::E);
  for (int c = a + 1; c < b; ++c) rb.link({0, c}, Direction::W, Direction::E);
  rb.link({0, b}, Direction::W, Direction::S);
  rb.link({1, a}, Direction::N, Direction::W);
  rb.link({1, b}, Direction::N, Direction::E);
  return rb.build();
}

/// A wide ring (rows 3..5) and a tall ring (columns 3..5) on a 9x9 grid. They
/// share no track; the four intersections are diamond crossings.
inline RailGrid crossing_rings() {
  RailBuilder b(9, 9);
  b.ring(3, 0, 5, 8);  // wide ring
  b.ring(0, 3, 8, 5);  // tall ring
  return b.build();
}

inline std::shared_ptr<const RailGrid> share(RailGrid g) { return std::make_shared<const RailGrid>(std::move(g)); }

}  // namespace railmapf::fixtures
