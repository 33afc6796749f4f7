#pragma once

// Navigation and grounding metrics, evaluation rollouts and the latency
// benchmark.

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "navkd/model.hpp"
#include "navkd/world.hpp"

namespace navkd {

struct EpisodeResult {
    int episode_id = 0;
    std::vector<NodeId> taken_path;  // every node stood on, revisits included
    double path_length = 0.0;        // p, metres
    double oracle_length = 0.0;      // l, metres
    bool stopped = false;
    bool success = false;
    std::optional<int> object_choice;
    bool grounding_success = false;
};

double success_rate(std::span<const EpisodeResult> results);
// (1/N) sum S_i * l_i / max(p_i, l_i); an episode with p = l = 0 counts as 1.
double spl(std::span<const EpisodeResult> results);
std::pair<double, double> rgs_rgspl(std::span<const EpisodeResult> results);

struct MetricSummary {
    double sr = 0.0, spl = 0.0, rgs = 0.0, rgspl = 0.0;
    std::size_t episodes = 0;
};
MetricSummary summarize(std::span<const EpisodeResult> results);

// Decision interface driven by `rollout`. After each arrival the policy sees
// the node it stands on and the ghost set, and answers with a ghost or kStop.
class Policy {
   public:
    virtual ~Policy() = default;
    virtual void begin(const WorldGraph& world, const Episode& episode) = 0;
    virtual NodeId act(NodeId node, const std::vector<NodeId>& ghosts) = 0;
    // Object id chosen at the final node, if the policy grounds at all.
    virtual std::optional<int> ground(NodeId node) { return std::nullopt; }
};

// Greedy (or seeded sampling) policy backed by a model.
class ModelPolicy : public Policy {
   public:
    explicit ModelPolicy(const DuetModel& model, RenderParams render = {}, std::optional<std::uint64_t> sample_seed = {});
    ~ModelPolicy() override;
    void begin(const WorldGraph& world, const Episode& episode) override;
    NodeId act(NodeId node, const std::vector<NodeId>& ghosts) override;
    std::optional<int> ground(NodeId node) override;

   private:
    struct State;
    const DuetModel* model_;
    RenderParams render_;
    std::optional<std::uint64_t> sample_seed_;
    std::unique_ptr<State> state_;
};

// Follows the shortest path to the goal.
class OraclePolicy : public Policy {
   public:
    void begin(const WorldGraph& world, const Episode& episode) override;
    NodeId act(NodeId node, const std::vector<NodeId>& ghosts) override;
    std::optional<int> ground(NodeId node) override;

   private:
    const WorldGraph* world_ = nullptr;
    const Episode* episode_ = nullptr;
};

constexpr int kDefaultMaxSteps = 15;

// Runs the policy from the start node until it stops or makes max_steps
// decisions (then stops where it stands). Moving to a non-adjacent ghost walks
// the shortest route through visited nodes; p counts every edge walked.
// Throws IllegalMove when the policy names a node that is not a ghost.
EpisodeResult rollout(Policy& policy, const WorldGraph& world, const Episode& episode,
                      int max_steps = kDefaultMaxSteps);
EpisodeResult rollout(const DuetModel& model, const WorldGraph& world, const Episode& episode,
                      int max_steps = kDefaultMaxSteps, const RenderParams& render = {});

struct LatencyReport {
    std::vector<double> per_episode_ms;
    double median_ms = 0.0;
    double p90_ms = 0.0;
    std::size_t params = 0;
};

// Runs the full model forward at every step but moves along the oracle path,
// so every model walks the same trajectory.
class ReplayPolicy : public Policy {
   public:
    explicit ReplayPolicy(const DuetModel& model, RenderParams render = {});
    void begin(const WorldGraph& world, const Episode& episode) override;
    NodeId act(NodeId node, const std::vector<NodeId>& ghosts) override;
    std::optional<int> ground(NodeId node) override;

   private:
    ModelPolicy inner_;
    OraclePolicy oracle_;
};

enum class BenchMode { Greedy, OracleReplay };

// Wall-clock time of full rollouts on the calling thread. One untimed
// warm-up pass precedes `repeats` timed passes over the episodes.
// Throws EmptyBenchmark when repeats or the episode list is zero.
LatencyReport bench_latency(const DuetModel& model, std::span<const std::pair<const WorldGraph*, const Episode*>> episodes,
                            int repeats, BenchMode mode = BenchMode::Greedy, int max_steps = kDefaultMaxSteps,
                            const RenderParams& render = {});

double median(std::vector<double> values);
// q in [0, 1], linear interpolation between order statistics.
double percentile(std::vector<double> values, double q);

}  // namespace navkd
