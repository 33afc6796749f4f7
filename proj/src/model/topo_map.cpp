#include "navkd/topo_map.hpp"

#include <algorithm>
#include <limits>
#include <queue>
#include <stdexcept>

#include "navkd/errors.hpp"
#include "navkd/ops.hpp"

namespace navkd {

NodeId TopoMap::current() const {
    if (nodes_.empty()) throw std::logic_error("empty topological map has no current node");
    return nodes_[current_].id;
}

const MapNode* TopoMap::find(NodeId id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &nodes_[it->second];
}

MapNode* TopoMap::find_mut(NodeId id) {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &nodes_[it->second];
}

std::vector<NodeId> TopoMap::ghosts() const {
    std::vector<NodeId> out;
    for (const auto& n : nodes_)
        if (n.role == NodeRole::Ghost) out.push_back(n.id);
    return out;
}

std::vector<NodeId> TopoMap::neighbors(NodeId id) const {
    std::vector<NodeId> out;
    for (const auto& [key, w] : edges_) {
        if (key.first == id) out.push_back(key.second);
        if (key.second == id) out.push_back(key.first);
    }
    return out;
}

std::optional<double> TopoMap::edge(NodeId a, NodeId b) const {
    auto it = edges_.find({std::min(a, b), std::max(a, b)});
    if (it == edges_.end()) return std::nullopt;
    return it->second;
}

void TopoMap::update(const WorldGraph& world, NodeId new_current, const Observation& obs, const Tensor& h_t) {
    if (obs.node != new_current)
        throw IllegalMove("observation of node " + std::to_string(obs.node) + " used to enter node " +
                          std::to_string(new_current));
    if (h_t.rows() != static_cast<std::size_t>(obs.n_views))
        throw ShapeError("panorama feature " + to_string(h_t.shape()) + " does not match " +
                         std::to_string(obs.n_views) + " views");

    const Tensor node_feature = mean_rows(h_t);
    if (nodes_.empty()) {
        MapNode n;
        n.id = new_current;
        n.role = NodeRole::Current;
        n.feature = node_feature;
        n.accumulation_count = 1;
        n.visit_step = step_ + 1;
        n.position = world.node(new_current).position;
        index_.emplace(n.id, 0);
        nodes_.push_back(std::move(n));
        current_ = 0;
    } else {
        MapNode* target = find_mut(new_current);
        if (!target || target->role != NodeRole::Ghost)
            throw IllegalMove("node " + std::to_string(new_current) + " is not a ghost node of the map");
        nodes_[current_].role = NodeRole::Visited;
        target->role = NodeRole::Current;
        target->feature = node_feature;
        target->accumulation_count = 1;
        target->visit_step = step_ + 1;
        current_ = index_.at(new_current);
    }

    for (const auto& [nb, view] : obs.neighbor_view_index) {
        const double w = world.edge_weight(new_current, nb);
        edges_[{std::min(new_current, nb), std::max(new_current, nb)}] = w;
        const std::size_t row = static_cast<std::size_t>(view);
        Tensor facing = slice_rows(h_t, row, 1);
        if (MapNode* existing = find_mut(nb)) {
            if (existing->role != NodeRole::Ghost) continue;
            existing->accumulation_count += 1;
            const double inv = 1.0 / existing->accumulation_count;
            existing->feature = add(existing->feature, scale(sub(facing, existing->feature), inv));
        } else {
            MapNode n;
            n.id = nb;
            n.role = NodeRole::Ghost;
            n.feature = facing;
            n.accumulation_count = 1;
            n.position = world.node(nb).position;
            index_.emplace(nb, nodes_.size());
            nodes_.push_back(std::move(n));
        }
    }
    step_ += 1;
}

PathResult TopoMap::travel(NodeId from, NodeId to) const {
    PathResult out;
    if (!find(from) || !find(to)) return out;
    std::map<NodeId, double> dist;
    std::map<NodeId, NodeId> prev;
    using Item = std::pair<double, NodeId>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist[from] = 0.0;
    queue.emplace(0.0, from);
    while (!queue.empty()) {
        const auto [d, u] = queue.top();
        queue.pop();
        if (d > dist[u]) continue;
        if (u == to) break;
        // Ghosts are endpoints only; the agent has never stood on them.
        if (u != from && find(u)->role == NodeRole::Ghost) continue;
        for (NodeId v : neighbors(u)) {
            const double nd = d + *edge(u, v);
            auto it = dist.find(v);
            if (it == dist.end() || nd < it->second) {
                dist[v] = nd;
                prev[v] = u;
                queue.emplace(nd, v);
            }
        }
    }
    if (!dist.count(to)) return out;
    out.length = dist[to];
    for (NodeId v = to; v != from; v = prev.at(v)) out.path.push_back(v);
    out.path.push_back(from);
    std::reverse(out.path.begin(), out.path.end());
    return out;
}

}  // namespace navkd
