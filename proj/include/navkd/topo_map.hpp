#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "navkd/tensor.hpp"
#include "navkd/world.hpp"

namespace navkd {

enum class NodeRole { Visited = 0, Current = 1, Ghost = 2 };

struct MapNode {
    NodeId id = 0;
    NodeRole role = NodeRole::Ghost;
    Tensor feature;  // [1 x D]
    int accumulation_count = 0;
    int visit_step = 0;  // 1-based step of the first visit, 0 for ghosts
    Vec2 position;
};

// Incrementally built map of visited, current and ghost (seen but never
// entered) viewpoints. Node order is insertion order and never shrinks.
class TopoMap {
   public:
    bool empty() const { return nodes_.empty(); }
    std::size_t size() const { return nodes_.size(); }
    int step() const { return step_; }
    const std::vector<MapNode>& nodes() const { return nodes_; }
    // Throws std::logic_error on an empty map.
    NodeId current() const;
    const MapNode* find(NodeId id) const;
    std::vector<NodeId> ghosts() const;
    std::vector<NodeId> neighbors(NodeId id) const;
    std::optional<double> edge(NodeId a, NodeId b) const;

    // Moves the agent to `new_current` (any node on an empty map, otherwise a
    // GHOST) and integrates its panorama: the new current node takes the mean
    // of h_t's rows, each unvisited neighbour becomes or stays a GHOST whose
    // feature is the running mean of the views facing it.
    // Throws IllegalMove, or ShapeError if h_t does not match the observation.
    void update(const WorldGraph& world, NodeId new_current, const Observation& obs, const Tensor& h_t);

    // Route through visited/current nodes only, ending at `to`. Empty when
    // unreachable.
    PathResult travel(NodeId from, NodeId to) const;

   private:
    MapNode* find_mut(NodeId id);

    std::vector<MapNode> nodes_;
    std::map<NodeId, std::size_t> index_;
    std::map<std::pair<NodeId, NodeId>, double> edges_;  // key (min, max)
    std::size_t current_ = 0;
    int step_ = 0;
};

}  // namespace navkd
