#pragma once

// Static rail topology: directions, per-cell transition codes, the grid,
// cell classification, cluster extraction and grid validation.
//
// Transition bit layout (16 bits, entry-major, N,E,S,W order):
//   bit (15 - (4 * entry + exit)) is set iff a train travelling with heading
//   `entry` when it enters the cell may leave it with heading `exit`.
// So the most significant nibble holds the exits for entry heading N, the
// least significant one the exits for entry heading W. A straight N-S track
// is 0x8020 (N->N, S->S); a straight E-W track is 0x0208.
//
// Coordinates are row-major with the origin at the top-left; moving N
// decreases the row index.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace railmapf {

enum class Direction : uint8_t { N = 0, E = 1, S = 2, W = 3 };

inline constexpr std::array<Direction, 4> kDirections = {Direction::N, Direction::E,
                                                         Direction::S, Direction::W};

constexpr int to_int(Direction d) { return static_cast<int>(d); }
constexpr Direction direction_from_int(int v) { return static_cast<Direction>(((v % 4) + 4) % 4); }
constexpr Direction opposite(Direction d) { return direction_from_int(to_int(d) + 2); }
constexpr Direction turn_left(Direction d) { return direction_from_int(to_int(d) + 3); }
constexpr Direction turn_right(Direction d) { return direction_from_int(to_int(d) + 1); }
constexpr Direction rotate_cw(Direction d, int quarter_turns) {
  return direction_from_int(to_int(d) + quarter_turns);
}
constexpr int row_offset(Direction d) { return d == Direction::N ? -1 : (d == Direction::S ? 1 : 0); }
constexpr int col_offset(Direction d) { return d == Direction::E ? 1 : (d == Direction::W ? -1 : 0); }

inline char direction_char(Direction d) { return "NESW"[to_int(d)]; }

inline Direction parse_direction(std::string_view s) {
  if (s.size() == 1) {
    switch (s[0]) {
      case 'N': return Direction::N;
      case 'E': return Direction::E;
      case 'S': return Direction::S;
      case 'W': return Direction::W;
      default: break;
    }
  }
  throw std::invalid_argument("unknown direction '" + std::string(s) + "'");
}

/// A subset of the four directions, iterated in N,E,S,W order.
class DirectionSet {
 public:
  constexpr DirectionSet() = default;
  constexpr explicit DirectionSet(uint8_t mask) : mask_(mask & 0xF) {}

  constexpr bool contains(Direction d) const { return (mask_ >> to_int(d)) & 1U; }
  constexpr int size() const { return std::popcount(static_cast<unsigned>(mask_)); }
  constexpr bool empty() const { return mask_ == 0; }
  constexpr uint8_t mask() const { return mask_; }
  constexpr void insert(Direction d) { mask_ = static_cast<uint8_t>(mask_ | (1U << to_int(d))); }
  constexpr DirectionSet with(Direction d) const {
    DirectionSet s = *this;
    s.insert(d);
    return s;
  }
  constexpr bool operator==(const DirectionSet&) const = default;

  std::vector<Direction> to_vector() const {
    std::vector<Direction> out;
    for (Direction d : kDirections)
      if (contains(d)) out.push_back(d);
    return out;
  }

  class iterator {
   public:
    using value_type = Direction;
    using difference_type = std::ptrdiff_t;
    constexpr iterator() = default;
    constexpr iterator(uint8_t mask, int pos) : mask_(mask), pos_(pos) { skip(); }
    constexpr Direction operator*() const { return static_cast<Direction>(pos_); }
    constexpr iterator& operator++() {
      ++pos_;
      skip();
      return *this;
    }
    constexpr iterator operator++(int) {
      iterator tmp = *this;
      ++*this;
      return tmp;
    }
    constexpr bool operator==(const iterator& o) const { return pos_ == o.pos_; }

   private:
    constexpr void skip() {
      while (pos_ < 4 && !((mask_ >> pos_) & 1U)) ++pos_;
    }
    uint8_t mask_ = 0;
    int pos_ = 4;
  };

  constexpr iterator begin() const { return iterator(mask_, 0); }
  constexpr iterator end() const { return iterator(mask_, 4); }

 private:
  uint8_t mask_ = 0;
};

/// Per-cell relation between entry headings and exit headings.
/// Every entry heading maps to at most two exits.
class TransitionCode {
 public:
  constexpr TransitionCode() = default;

  /// Throws std::invalid_argument if some entry heading has more than two exits.
  explicit TransitionCode(uint16_t bits) : bits_(bits) {
    for (Direction d : kDirections) {
      if (exits(d).size() > 2)
        throw std::invalid_argument("transition code " + std::to_string(bits) + " has " +
                                    std::to_string(exits(d).size()) + " exits for entry " +
                                    direction_char(d));
    }
  }

  static constexpr int bit_index(Direction entry, Direction exit) {
    return 15 - (4 * to_int(entry) + to_int(exit));
  }

  constexpr uint16_t bits() const { return bits_; }
  constexpr bool is_rail() const { return bits_ != 0; }
  constexpr bool has(Direction entry, Direction exit) const {
    return (bits_ >> bit_index(entry, exit)) & 1U;
  }

  constexpr DirectionSet exits(Direction entry) const {
    const unsigned nibble = (bits_ >> (12 - 4 * to_int(entry))) & 0xFU;
    // nibble bit 3 is N ... bit 0 is W; DirectionSet wants bit 0 = N.
    uint8_t mask = 0;
    for (int i = 0; i < 4; ++i)
      if ((nibble >> (3 - i)) & 1U) mask = static_cast<uint8_t>(mask | (1U << i));
    return DirectionSet(mask);
  }

  /// Total number of (entry, exit) pairs.
  constexpr int total_transitions() const { return std::popcount(static_cast<unsigned>(bits_)); }

  /// Sides of the cell that carry track (a side s carries track if a train can
  /// leave through it or enter through it).
  constexpr DirectionSet connected_sides() const {
    DirectionSet sides;
    for (Direction in : kDirections)
      for (Direction out : exits(in)) {
        sides.insert(out);
        sides.insert(opposite(in));
      }
    return sides;
  }

  /// Returns a copy with one more (entry, exit) pair; validates the result.
  TransitionCode with(Direction entry, Direction exit) const {
    return TransitionCode(static_cast<uint16_t>(bits_ | (1U << bit_index(entry, exit))));
  }

  /// Adds track joining side `a` and side `b` usable in both travel directions.
  TransitionCode with_link(Direction side_a, Direction side_b) const {
    return with(opposite(side_a), side_b).with(opposite(side_b), side_a);
  }

  constexpr bool operator==(const TransitionCode&) const = default;

 private:
  uint16_t bits_ = 0;
};

enum class Transform : uint8_t { Rot90, Rot180, Rot270, Mirror };

/// Direction image under a geometric transform. Rotations are clockwise;
/// Mirror flips left-right (E <-> W).
constexpr Direction transform_direction(Direction d, Transform op) {
  switch (op) {
    case Transform::Rot90: return rotate_cw(d, 1);
    case Transform::Rot180: return rotate_cw(d, 2);
    case Transform::Rot270: return rotate_cw(d, 3);
    case Transform::Mirror:
      return d == Direction::E ? Direction::W : (d == Direction::W ? Direction::E : d);
  }
  return d;
}

inline TransitionCode transform_code(TransitionCode code, Transform op) {
  uint16_t out = 0;
  for (Direction in : kDirections)
    for (Direction ex : code.exits(in))
      out = static_cast<uint16_t>(
          out | (1U << TransitionCode::bit_index(transform_direction(in, op),
                                                 transform_direction(ex, op))));
  return TransitionCode(out);
}

struct Cell {
  int row = 0;
  int col = 0;
  constexpr auto operator<=>(const Cell&) const = default;
};

inline Cell step(Cell c, Direction d) { return {c.row + row_offset(d), c.col + col_offset(d)}; }

class RailGrid {
 public:
  RailGrid() = default;
  RailGrid(int width, int height) : width_(width), height_(height) {
    if (width < 1 || height < 1) throw std::invalid_argument("grid dimensions must be >= 1");
    cells_.assign(static_cast<size_t>(width) * static_cast<size_t>(height), TransitionCode{});
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int num_cells() const { return width_ * height_; }

  bool in_bounds(Cell c) const { return c.row >= 0 && c.col >= 0 && c.row < height_ && c.col < width_; }
  int index(Cell c) const { return c.row * width_ + c.col; }
  Cell cell(int index) const { return {index / width_, index % width_}; }

  TransitionCode at(Cell c) const { return cells_[static_cast<size_t>(index(c))]; }
  TransitionCode at(int index) const { return cells_[static_cast<size_t>(index)]; }
  void set(Cell c, TransitionCode code) { cells_[static_cast<size_t>(index(c))] = code; }

  /// Index of the neighbour in direction d, or nullopt at the border.
  std::optional<int> neighbor(int index, Direction d) const {
    const Cell n = step(cell(index), d);
    if (!in_bounds(n)) return std::nullopt;
    return this->index(n);
  }

  DirectionSet exits(int index, Direction entry) const { return at(index).exits(entry); }

  bool operator==(const RailGrid&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<TransitionCode> cells_;
};

/// Geometric image of a cell under a transform of a grid with the given dims.
inline Cell transform_cell(Cell c, int width, int height, Transform op) {
  switch (op) {
    case Transform::Rot90: return {c.col, height - 1 - c.row};
    case Transform::Rot180: return {height - 1 - c.row, width - 1 - c.col};
    case Transform::Rot270: return {width - 1 - c.col, c.row};
    case Transform::Mirror: return {c.row, width - 1 - c.col};
  }
  return c;
}

inline RailGrid transform_grid(const RailGrid& grid, Transform op) {
  const bool swap = op == Transform::Rot90 || op == Transform::Rot270;
  RailGrid out(swap ? grid.height() : grid.width(), swap ? grid.width() : grid.height());
  for (int i = 0; i < grid.num_cells(); ++i) {
    const Cell c = grid.cell(i);
    out.set(transform_cell(c, grid.width(), grid.height(), op), transform_code(grid.at(i), op));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cell classification

enum class CellClass : uint8_t { NonRail, NonDecision, Stopping, Decision };

inline std::string_view to_string(CellClass c) {
  switch (c) {
    case CellClass::NonRail: return "NonRail";
    case CellClass::NonDecision: return "NonDecision";
    case CellClass::Stopping: return "Stopping";
    case CellClass::Decision: return "Decision";
  }
  return "?";
}

inline bool is_decision_cell(TransitionCode code) {
  for (Direction d : kDirections)
    if (code.exits(d).size() >= 2) return true;
  return false;
}

/// Switches and crossings: cells with at least three (entry, exit) pairs.
inline bool is_junction_cell(TransitionCode code) { return code.total_transitions() >= 3; }

/// Classification indexed by cell index. A non-decision cell is Stopping when
/// one of its own transitions leads into a junction cell.
inline std::vector<CellClass> classify_cells(const RailGrid& grid) {
  std::vector<CellClass> out(static_cast<size_t>(grid.num_cells()), CellClass::NonRail);
  for (int i = 0; i < grid.num_cells(); ++i) {
    const TransitionCode code = grid.at(i);
    if (!code.is_rail()) continue;
    if (is_decision_cell(code)) {
      out[static_cast<size_t>(i)] = CellClass::Decision;
      continue;
    }
    bool stopping = false;
    for (Direction in : kDirections)
      for (Direction ex : code.exits(in)) {
        const auto n = grid.neighbor(i, ex);
        if (n && is_junction_cell(grid.at(*n))) stopping = true;
      }
    out[static_cast<size_t>(i)] = stopping ? CellClass::Stopping : CellClass::NonDecision;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clusters

enum class ClusterCriterion : uint8_t {
  TotalTransitions,  ///< member iff the cell has >= 3 (entry, exit) pairs
  DecisionChoice,    ///< member iff some entry offers two exits
};

struct Cluster {
  std::vector<Cell> members;  // sorted
  std::vector<Cell> entries;  // sorted; non-members with a transition into a member
  bool operator==(const Cluster&) const = default;
};

/// True iff cells a and b (neighbours, b = a + d) are joined by track.
inline bool linked(const RailGrid& grid, int a, Direction d) {
  const auto b = grid.neighbor(a, d);
  if (!b) return false;
  return grid.at(a).connected_sides().contains(d) && grid.at(*b).connected_sides().contains(opposite(d));
}

inline std::vector<Cluster> find_clusters(const RailGrid& grid,
                                          ClusterCriterion criterion = ClusterCriterion::TotalTransitions) {
  auto member = [&](int i) {
    const TransitionCode code = grid.at(i);
    return criterion == ClusterCriterion::TotalTransitions ? is_junction_cell(code) : is_decision_cell(code);
  };
  std::vector<int> label(static_cast<size_t>(grid.num_cells()), -1);
  std::vector<Cluster> clusters;
  for (int start = 0; start < grid.num_cells(); ++start) {
    if (label[static_cast<size_t>(start)] >= 0 || !member(start)) continue;
    const int id = static_cast<int>(clusters.size());
    Cluster cluster;
    std::vector<int> stack{start};
    label[static_cast<size_t>(start)] = id;
    std::vector<int> cells;
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      cells.push_back(cur);
      for (Direction d : kDirections) {
        if (!linked(grid, cur, d)) continue;
        const int nb = *grid.neighbor(cur, d);
        if (label[static_cast<size_t>(nb)] >= 0 || !member(nb)) continue;
        label[static_cast<size_t>(nb)] = id;
        stack.push_back(nb);
      }
    }
    std::sort(cells.begin(), cells.end());
    for (int c : cells) cluster.members.push_back(grid.cell(c));
    clusters.push_back(std::move(cluster));
  }
  // Entry cells: rail non-members with a transition that exits into a member.
  std::vector<std::vector<int>> entries(clusters.size());
  for (int i = 0; i < grid.num_cells(); ++i) {
    if (label[static_cast<size_t>(i)] >= 0 || !grid.at(i).is_rail()) continue;
    DirectionSet outs;
    for (Direction in : kDirections)
      for (Direction ex : grid.at(i).exits(in)) outs.insert(ex);
    for (Direction ex : outs) {
      const auto n = grid.neighbor(i, ex);
      if (!n) continue;
      const int l = label[static_cast<size_t>(*n)];
      if (l >= 0 && (entries[static_cast<size_t>(l)].empty() || entries[static_cast<size_t>(l)].back() != i))
        entries[static_cast<size_t>(l)].push_back(i);
    }
  }
  for (size_t k = 0; k < clusters.size(); ++k)
    for (int c : entries[k]) clusters[k].entries.push_back(grid.cell(c));
  return clusters;
}

/// Per-cell cluster index (or -1) for a cluster list.
inline std::vector<int> cluster_labels(const RailGrid& grid, const std::vector<Cluster>& clusters) {
  std::vector<int> label(static_cast<size_t>(grid.num_cells()), -1);
  for (size_t k = 0; k < clusters.size(); ++k)
    for (const Cell& c : clusters[k].members) label[static_cast<size_t>(grid.index(c))] = static_cast<int>(k);
  return label;
}

// ---------------------------------------------------------------------------
// Directed state space helpers. A state is (cell, heading) packed as cell*4+heading.

using StateId = int32_t;

constexpr StateId make_state(int cell, Direction heading) { return cell * 4 + to_int(heading); }
constexpr int state_cell(StateId s) { return s / 4; }
constexpr Direction state_heading(StateId s) { return static_cast<Direction>(s % 4); }

/// Successor states of s: one per exit whose neighbour exists and can be left again.
template <class F>
void for_each_successor(const RailGrid& grid, StateId s, F&& f) {
  const int cell = state_cell(s);
  for (Direction ex : grid.exits(cell, state_heading(s))) {
    const auto n = grid.neighbor(cell, ex);
    if (!n || grid.exits(*n, ex).empty()) continue;
    f(make_state(*n, ex), ex);
  }
}

/// True iff some state at `target` is reachable from (from, heading).
inline bool reachable(const RailGrid& grid, Cell from, Direction heading, Cell target) {
  if (!grid.in_bounds(from) || !grid.in_bounds(target)) return false;
  const int goal = grid.index(target);
  std::vector<uint8_t> seen(static_cast<size_t>(grid.num_cells()) * 4, 0);
  std::queue<StateId> q;
  const StateId s0 = make_state(grid.index(from), heading);
  seen[static_cast<size_t>(s0)] = 1;
  q.push(s0);
  while (!q.empty()) {
    const StateId s = q.front();
    q.pop();
    if (state_cell(s) == goal) return true;
    for_each_successor(grid, s, [&](StateId n, Direction) {
      if (!seen[static_cast<size_t>(n)]) {
        seen[static_cast<size_t>(n)] = 1;
        q.push(n);
      }
    });
  }
  return false;
}

// ---------------------------------------------------------------------------
// Validation

enum class ViolationKind : uint8_t { DeadEnd, AsymmetricLink, NotOnCycle };

inline std::string_view to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::DeadEnd: return "dead-end";
    case ViolationKind::AsymmetricLink: return "asymmetric-link";
    case ViolationKind::NotOnCycle: return "not-on-cycle";
  }
  return "?";
}

struct Violation {
  Cell cell;
  ViolationKind kind;
  Direction direction;  // offending heading (dead-end) or exit side (asymmetric link)
  bool operator==(const Violation&) const = default;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  bool has(ViolationKind kind) const {
    return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.kind == kind; });
  }
  bool has(ViolationKind kind, Cell cell) const {
    return std::any_of(violations.begin(), violations.end(),
                       [&](const Violation& v) { return v.kind == kind && v.cell == cell; });
  }
};

namespace detail {

// Iterative Tarjan over the state graph; returns component size per state (0 for non-states).
inline std::vector<int> scc_sizes(const RailGrid& grid) {
  const int n = grid.num_cells() * 4;
  std::vector<int> index(static_cast<size_t>(n), -1), low(static_cast<size_t>(n), 0), comp(static_cast<size_t>(n), -1);
  std::vector<uint8_t> on_stack(static_cast<size_t>(n), 0);
  std::vector<int> stack, comp_size;
  int counter = 0;
  struct Frame {
    StateId s;
    std::array<StateId, 4> succ;
    int count;
    int next;
  };
  auto make_frame = [&](StateId s) {
    Frame f{s, {}, 0, 0};
    for_each_successor(grid, s, [&](StateId t, Direction) { f.succ[static_cast<size_t>(f.count++)] = t; });
    return f;
  };
  for (StateId root = 0; root < n; ++root) {
    if (index[static_cast<size_t>(root)] >= 0) continue;
    if (grid.exits(state_cell(root), state_heading(root)).empty()) continue;
    std::vector<Frame> call{make_frame(root)};
    index[static_cast<size_t>(root)] = low[static_cast<size_t>(root)] = counter++;
    stack.push_back(root);
    on_stack[static_cast<size_t>(root)] = 1;
    while (!call.empty()) {
      Frame& f = call.back();
      if (f.next < f.count) {
        const StateId t = f.succ[static_cast<size_t>(f.next++)];
        if (index[static_cast<size_t>(t)] < 0) {
          index[static_cast<size_t>(t)] = low[static_cast<size_t>(t)] = counter++;
          stack.push_back(t);
          on_stack[static_cast<size_t>(t)] = 1;
          call.push_back(make_frame(t));
        } else if (on_stack[static_cast<size_t>(t)]) {
          low[static_cast<size_t>(f.s)] = std::min(low[static_cast<size_t>(f.s)], index[static_cast<size_t>(t)]);
        }
        continue;
      }
      const StateId s = f.s;
      if (low[static_cast<size_t>(s)] == index[static_cast<size_t>(s)]) {
        const int id = static_cast<int>(comp_size.size());
        int size = 0;
        StateId t;
        do {
          t = stack.back();
          stack.pop_back();
          on_stack[static_cast<size_t>(t)] = 0;
          comp[static_cast<size_t>(t)] = id;
          ++size;
        } while (t != s);
        comp_size.push_back(size);
      }
      call.pop_back();
      if (!call.empty()) {
        const StateId parent = call.back().s;
        low[static_cast<size_t>(parent)] = std::min(low[static_cast<size_t>(parent)], low[static_cast<size_t>(s)]);
      }
    }
  }
  std::vector<int> out(static_cast<size_t>(n), 0);
  for (int s = 0; s < n; ++s)
    if (comp[static_cast<size_t>(s)] >= 0) out[static_cast<size_t>(s)] = comp_size[static_cast<size_t>(comp[static_cast<size_t>(s)])];
  return out;
}

}  // namespace detail

/// Reports dead-ends, asymmetric links and rail cells that lie on no directed cycle.
inline ValidationReport validate_grid(const RailGrid& grid) {
  ValidationReport report;
  for (int i = 0; i < grid.num_cells(); ++i) {
    const TransitionCode code = grid.at(i);
    if (!code.is_rail()) continue;
    const Cell c = grid.cell(i);
    DirectionSet outs;
    for (Direction in : kDirections)
      for (Direction ex : code.exits(in)) outs.insert(ex);
    for (Direction ex : outs) {
      const auto n = grid.neighbor(i, ex);
      if (!n || grid.exits(*n, ex).empty()) report.violations.push_back({c, ViolationKind::AsymmetricLink, ex});
    }
    for (Direction h : kDirections) {
      bool entered = !code.exits(h).empty();
      if (!entered) {
        const auto p = grid.neighbor(i, opposite(h));
        if (p) {
          for (Direction in : kDirections)
            if (grid.at(*p).has(in, h)) entered = true;
        }
      }
      if (!entered) continue;
      bool has_successor = false;
      for_each_successor(grid, make_state(i, h), [&](StateId, Direction) { has_successor = true; });
      if (!has_successor) report.violations.push_back({c, ViolationKind::DeadEnd, h});
    }
  }
  const auto sizes = detail::scc_sizes(grid);
  for (int i = 0; i < grid.num_cells(); ++i) {
    if (!grid.at(i).is_rail()) continue;
    bool on_cycle = false;
    for (Direction h : kDirections)
      if (sizes[static_cast<size_t>(make_state(i, h))] > 1) on_cycle = true;
    if (!on_cycle) report.violations.push_back({grid.cell(i), ViolationKind::NotOnCycle, Direction::N});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Construction helper

/// Incremental track layer used by generators and tests.
class RailBuilder {
 public:
  RailBuilder(int width, int height) : grid_(width, height) {}

  /// Joins side a and side b of cell c with bidirectional track.
  RailBuilder& link(Cell c, Direction side_a, Direction side_b) {
    grid_.set(c, grid_.at(c).with_link(side_a, side_b));
    return *this;
  }

  /// Lays track along a 4-connected polyline of cells (consecutive cells adjacent).
  /// The first and last cells get a straight continuation toward `lead_in` / `lead_out`
  /// when those are given, so the polyline can be attached to other track.
  RailBuilder& polyline(const std::vector<Cell>& cells, std::optional<Direction> lead_in = std::nullopt,
                        std::optional<Direction> lead_out = std::nullopt) {
    for (size_t i = 0; i < cells.size(); ++i) {
      std::optional<Direction> back = lead_in ? std::optional(opposite(*lead_in)) : std::nullopt;
      std::optional<Direction> fwd = lead_out;
      if (i > 0) back = direction_between(cells[i], cells[i - 1]);
      if (i + 1 < cells.size()) fwd = direction_between(cells[i], cells[i + 1]);
      if (i == 0 && !lead_in) back = std::nullopt;
      if (back && fwd) link(cells[i], *back, *fwd);
    }
    return *this;
  }

  /// Closed loop through the given cells (last cell adjacent to first).
  RailBuilder& loop(const std::vector<Cell>& cells) {
    const size_t n = cells.size();
    for (size_t i = 0; i < n; ++i)
      link(cells[i], direction_between(cells[i], cells[(i + n - 1) % n]),
           direction_between(cells[i], cells[(i + 1) % n]));
    return *this;
  }

  /// Axis-aligned rectangle ring with the given corners (inclusive).
  RailBuilder& ring(int top, int left, int bottom, int right) {
    std::vector<Cell> cells;
    for (int c = left; c <= right; ++c) cells.push_back({top, c});
    for (int r = top + 1; r <= bottom; ++r) cells.push_back({r, right});
    for (int c = right - 1; c >= left; --c) cells.push_back({bottom, c});
    for (int r = bottom - 1; r > top; --r) cells.push_back({r, left});
    return loop(cells);
  }

  RailGrid& grid() { return grid_; }
  const RailGrid& grid() const { return grid_; }
  RailGrid build() const { return grid_; }

  static Direction direction_between(Cell from, Cell to) {
    const int dr = to.row - from.row, dc = to.col - from.col;
    if (dr == -1 && dc == 0) return Direction::N;
    if (dr == 1 && dc == 0) return Direction::S;
    if (dr == 0 && dc == 1) return Direction::E;
    if (dr == 0 && dc == -1) return Direction::W;
    throw std::invalid_argument("cells are not 4-adjacent");
  }

 private:
  RailGrid grid_;
};

// ---------------------------------------------------------------------------
// JSON: {"width": w, "height": h, "cells": [row-major 16-bit codes]}

inline nlohmann::json grid_to_json(const RailGrid& grid) {
  nlohmann::json cells = nlohmann::json::array();
  for (int i = 0; i < grid.num_cells(); ++i) cells.push_back(grid.at(i).bits());
  return {{"width", grid.width()}, {"height", grid.height()}, {"cells", std::move(cells)}};
}

inline RailGrid grid_from_json(const nlohmann::json& j) {
  RailGrid grid(j.at("width").get<int>(), j.at("height").get<int>());
  const auto& cells = j.at("cells");
  if (!cells.is_array() || static_cast<int>(cells.size()) != grid.num_cells())
    throw std::invalid_argument("grid json: cells must hold width*height entries");
  for (int i = 0; i < grid.num_cells(); ++i) {
    const int v = cells[static_cast<size_t>(i)].get<int>();
    if (v < 0 || v > 0xFFFF) throw std::invalid_argument("grid json: code out of 16-bit range");
    grid.set(grid.cell(i), TransitionCode(static_cast<uint16_t>(v)));
  }
  return grid;
}

inline nlohmann::json cell_to_json(Cell c) { return nlohmann::json::array({c.row, c.col}); }
inline Cell cell_from_json(const nlohmann::json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

}  // namespace railmapf
