#include "navkd/agent.hpp"

#include <cmath>
#include <limits>

#include "navkd/errors.hpp"
#include "navkd/ops.hpp"

namespace navkd {

EpisodeAgent::EpisodeAgent(const DuetModel& model, const WorldGraph& world, const Episode& episode,
                           LanguageOutput language, const RenderParams& render)
    : model_(&model), world_(&world), episode_(&episode), render_(render), language_(std::move(language)) {}

const AgentStep& EpisodeAgent::enter(NodeId node) {
    AgentStep step;
    step.obs = render_observation(*world_, node, episode_->seed, render_);
    const Vec2 here = world_->node(node).position;
    const Vec2 start = world_->node(episode_->start).position;
    step.pano = model_->encode_panorama(step.obs, {here.x - start.x, here.y - start.y});
    map_.update(*world_, node, step.obs, step.pano.feature);
    step.coarse = model_->coarse_forward(language_.feature, map_);
    step.fine = model_->fine_forward(language_.feature, step.pano.feature, step.obs.neighbor_view_index);
    step.logits = model_->fuse_scores(step.coarse, step.fine, map_);
    steps_.push_back(std::move(step));
    return steps_.back();
}

std::size_t choose_object(const DuetModel& model, const FineOutput& fine, std::span<const int> objects) {
    const Tensor s = model.object_scores(fine, objects);
    std::size_t best = 0;
    for (std::size_t i = 1; i < objects.size(); ++i)
        if (s.at(i) > s.at(best)) best = i;
    return best;
}

NodeId oracle_candidate(const WorldGraph& world, const TopoMap& map, NodeId goal) {
    const NodeId here = map.current();
    if (here == goal) return kStop;
    const std::vector<double> to_goal = shortest_distances(world, goal);
    NodeId best = kStop;
    double best_cost = std::numeric_limits<double>::infinity();
    for (NodeId g : map.ghosts()) {
        const PathResult route = map.travel(here, g);
        if (route.path.empty()) continue;
        const double cost = route.length + to_goal[static_cast<std::size_t>(g)];
        if (cost < best_cost - 1e-9 || (std::abs(cost - best_cost) <= 1e-9 && g < best)) {
            best = g;
            best_cost = cost;
        }
    }
    return best;
}

std::size_t candidate_index(const FusedLogits& z, NodeId action) {
    for (std::size_t i = 0; i < z.candidates.size(); ++i)
        if (z.candidates[i] == action) return i;
    throw CandidateSetMismatch("action " + std::to_string(action) + " is not a current candidate");
}

}  // namespace navkd
