#include <chrono>
#include <limits>
#include <queue>
#include <set>

#include "navkd/agent.hpp"
#include "navkd/errors.hpp"
#include "navkd/metrics.hpp"
#include "navkd/ops.hpp"

namespace navkd {
namespace {

// Shortest walk from `from` to `to` whose interior nodes are all visited.
PathResult walk(const WorldGraph& world, const std::set<NodeId>& visited, NodeId from, NodeId to) {
    const std::size_t n = world.size();
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    std::vector<NodeId> prev(n, -1);
    using Item = std::pair<double, NodeId>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist[static_cast<std::size_t>(from)] = 0.0;
    queue.emplace(0.0, from);
    while (!queue.empty()) {
        const auto [d, u] = queue.top();
        queue.pop();
        if (d > dist[static_cast<std::size_t>(u)]) continue;
        if (u == to) break;
        if (u != from && !visited.count(u)) continue;
        for (NodeId v : world.neighbors(u)) {
            const double nd = d + world.edge_weight(u, v);
            if (nd < dist[static_cast<std::size_t>(v)]) {
                dist[static_cast<std::size_t>(v)] = nd;
                prev[static_cast<std::size_t>(v)] = u;
                queue.emplace(nd, v);
            }
        }
    }
    PathResult out;
    if (!std::isfinite(dist[static_cast<std::size_t>(to)])) return out;
    out.length = dist[static_cast<std::size_t>(to)];
    for (NodeId v = to; v != from; v = prev[static_cast<std::size_t>(v)]) out.path.push_back(v);
    out.path.push_back(from);
    std::reverse(out.path.begin(), out.path.end());
    return out;
}

}  // namespace

struct ModelPolicy::State {
    const WorldGraph* world = nullptr;
    const Episode* episode = nullptr;
    std::optional<EpisodeAgent> agent;
    Rng rng;
};

ModelPolicy::ModelPolicy(const DuetModel& model, RenderParams render, std::optional<std::uint64_t> sample_seed)
    : model_(&model), render_(render), sample_seed_(sample_seed), state_(std::make_unique<State>()) {}

ModelPolicy::~ModelPolicy() = default;

void ModelPolicy::begin(const WorldGraph& world, const Episode& episode) {
    NoGradGuard no_grad;
    state_->world = &world;
    state_->episode = &episode;
    state_->agent.emplace(*model_, world, episode, model_->encode_instruction(episode.instruction), render_);
    state_->rng.seed(sample_seed_ ? *sample_seed_ ^ episode.seed : 0);
}

NodeId ModelPolicy::act(NodeId node, const std::vector<NodeId>&) {
    NoGradGuard no_grad;
    const AgentStep& step = state_->agent->enter(node);
    return sample_seed_ ? sample_action(step.logits, state_->rng) : predict_action(step.logits);
}

std::optional<int> ModelPolicy::ground(NodeId node) {
    NoGradGuard no_grad;
    const std::vector<int>& objects = state_->world->node(node).objects;
    if (objects.empty() || state_->agent->steps().empty()) return std::nullopt;
    return objects[choose_object(*model_, state_->agent->last().fine, objects)];
}

void OraclePolicy::begin(const WorldGraph& world, const Episode& episode) {
    world_ = &world;
    episode_ = &episode;
}

NodeId OraclePolicy::act(NodeId node, const std::vector<NodeId>&) {
    return oracle_next_action(*world_, node, episode_->goal);
}

std::optional<int> OraclePolicy::ground(NodeId) { return episode_->target_object; }

EpisodeResult rollout(Policy& policy, const WorldGraph& world, const Episode& episode, int max_steps) {
    EpisodeResult r;
    r.episode_id = episode.id;
    r.oracle_length = shortest_path(world, episode.start, episode.goal).length;
    policy.begin(world, episode);

    std::set<NodeId> visited;
    std::vector<NodeId> ghosts;
    NodeId here = episode.start;
    r.taken_path.push_back(here);
    for (int t = 0; t < max_steps; ++t) {
        visited.insert(here);
        std::erase(ghosts, here);
        for (NodeId nb : world.neighbors(here))
            if (!visited.count(nb) && std::find(ghosts.begin(), ghosts.end(), nb) == ghosts.end()) ghosts.push_back(nb);

        const NodeId action = policy.act(here, ghosts);
        if (action == kStop) break;
        if (std::find(ghosts.begin(), ghosts.end(), action) == ghosts.end())
            throw IllegalMove("policy chose node " + std::to_string(action) + ", which is not a ghost node");
        const PathResult route = walk(world, visited, here, action);
        r.path_length += route.length;
        r.taken_path.insert(r.taken_path.end(), route.path.begin() + 1, route.path.end());
        here = action;
    }
    r.stopped = true;
    r.success = here == episode.goal;
    r.object_choice = policy.ground(here);
    r.grounding_success = r.success && r.object_choice && *r.object_choice == episode.target_object;
    return r;
}

EpisodeResult rollout(const DuetModel& model, const WorldGraph& world, const Episode& episode, int max_steps,
                      const RenderParams& render) {
    ModelPolicy policy(model, render);
    return rollout(policy, world, episode, max_steps);
}

ReplayPolicy::ReplayPolicy(const DuetModel& model, RenderParams render) : inner_(model, render) {}

void ReplayPolicy::begin(const WorldGraph& world, const Episode& episode) {
    inner_.begin(world, episode);
    oracle_.begin(world, episode);
}

NodeId ReplayPolicy::act(NodeId node, const std::vector<NodeId>& ghosts) {
    inner_.act(node, ghosts);
    return oracle_.act(node, ghosts);
}

std::optional<int> ReplayPolicy::ground(NodeId node) { return inner_.ground(node); }

LatencyReport bench_latency(const DuetModel& model, std::span<const std::pair<const WorldGraph*, const Episode*>> episodes,
                            int repeats, BenchMode mode, int max_steps, const RenderParams& render) {
    if (repeats <= 0 || episodes.empty()) throw EmptyBenchmark("latency benchmark needs at least one episode and repeat");
    ModelPolicy greedy(model, render);
    ReplayPolicy replay(model, render);
    Policy& policy = mode == BenchMode::Greedy ? static_cast<Policy&>(greedy) : replay;
    for (const auto& [world, ep] : episodes) rollout(policy, *world, *ep, max_steps);

    LatencyReport report;
    report.params = model.parameter_count();
    using Clock = std::chrono::steady_clock;
    for (int k = 0; k < repeats; ++k)
        for (const auto& [world, ep] : episodes) {
            const auto t0 = Clock::now();
            rollout(policy, *world, *ep, max_steps);
            report.per_episode_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
        }
    report.median_ms = median(report.per_episode_ms);
    report.p90_ms = percentile(report.per_episode_ms, 0.9);
    return report;
}

}  // namespace navkd
