#pragma once

// Procedural navigation worlds: an undirected, connected graph of viewpoints
// with landmarks and objects, episodes with an oracle shortest path and a
// synthetic instruction, and panoramic observations rendered per node.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace navkd {

using NodeId = int;
inline constexpr NodeId kStop = -1;  // action sentinel

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

double distance(Vec2 a, Vec2 b);
// Heading from a to b in [0, 2*pi).
double bearing(Vec2 a, Vec2 b);

struct WorldParams {
    std::uint64_t seed = 0;
    int n_nodes = 40;
    double target_degree = 3.0;  // k of the k-nearest-neighbour construction
    double extent = 30.0;        // metres; positions are uniform in [0, extent]^2
    int n_landmarks = 24;
    int n_objects = 16;
    int objects_per_node = 3;
};

struct WorldNode {
    NodeId id = 0;
    Vec2 position;
    int landmark_id = 0;
    std::vector<int> objects;
};

struct Edge {
    NodeId a = 0;
    NodeId b = 0;  // a < b
    double weight = 0.0;
};

class WorldGraph {
   public:
    WorldGraph() = default;
    WorldGraph(WorldParams params, std::vector<WorldNode> nodes, std::vector<Edge> edges);

    const WorldParams& params() const { return params_; }
    std::size_t size() const { return nodes_.size(); }
    bool contains(NodeId id) const { return id >= 0 && static_cast<std::size_t>(id) < nodes_.size(); }
    // Throws UnknownNode.
    const WorldNode& node(NodeId id) const;
    const std::vector<WorldNode>& nodes() const { return nodes_; }
    const std::vector<Edge>& edges() const { return edges_; }
    // Sorted by id.
    const std::vector<NodeId>& neighbors(NodeId id) const;
    bool adjacent(NodeId a, NodeId b) const;
    // Throws std::invalid_argument if the nodes are not adjacent.
    double edge_weight(NodeId a, NodeId b) const;

    double mean_degree() const;
    bool connected() const;

   private:
    WorldParams params_;
    std::vector<WorldNode> nodes_;
    std::vector<Edge> edges_;
    std::vector<std::vector<NodeId>> adjacency_;
    std::vector<std::vector<double>> weights_;  // parallel to adjacency_
};

WorldGraph generate_world(const WorldParams& params);
// Throws TooFewNodes when n_nodes < 2.
WorldGraph generate_world(std::uint64_t seed, int n_nodes, double target_degree);

struct PathResult {
    double length = 0.0;
    std::vector<NodeId> path;
};

// Minimal edge-weight path; equal-length routes resolve to the
// lexicographically smallest node sequence. Throws UnknownNode.
PathResult shortest_path(const WorldGraph& g, NodeId a, NodeId b);
std::vector<double> shortest_distances(const WorldGraph& g, NodeId source);

// Token layout: [PAD, BOS, EOS, FIND] [8 direction buckets] [landmarks] [objects].
struct Vocabulary {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kFind = 3;
    static constexpr int kDirections = 8;
    int n_landmarks = 24;
    int n_objects = 16;

    int direction_token(int bucket) const { return 4 + bucket; }
    int landmark_token(int landmark) const { return 4 + kDirections + landmark; }
    int object_token(int object) const { return 4 + kDirections + n_landmarks + object; }
    int size() const { return 4 + kDirections + n_landmarks + n_objects; }
};

int direction_bucket(double heading);

// Deterministic 64-bit seed derivation.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

enum class InstructionStyle {
    Route,   // direction + landmark per hop
    Object,  // route followed by FIND <object>
};

struct Episode {
    int id = 0;
    std::uint64_t seed = 0;
    NodeId start = 0;
    NodeId goal = 0;
    int target_object = 0;
    std::vector<NodeId> oracle_path;
    std::vector<int> instruction;
};

struct EpisodeParams {
    int min_hops = 4;
    int max_hops = 7;
    InstructionStyle style = InstructionStyle::Object;
    double landmark_noise = 0.0;  // probability of replacing a landmark token
    int max_retries = 1000;
};

// Pure function of (path, landmarks, target, style, noise, seed).
std::vector<int> synthesize_instruction(const WorldGraph& g, const std::vector<NodeId>& path, int target_object,
                                        InstructionStyle style, double landmark_noise, std::uint64_t seed);

// Rejection-samples (start, goal) uniformly among pairs whose oracle path has
// a hop count in [min_hops, max_hops]. Throws NoFeasiblePair after
// max_retries draws.
Episode generate_episode(const WorldGraph& g, std::uint64_t seed, const EpisodeParams& params);
Episode generate_episode(const WorldGraph& g, std::uint64_t seed, int min_hops, int max_hops);

struct RenderParams {
    int n_views = 36;
    int feature_dim = 32;
    double noise_sigma = 0.05;
    // Seeds the landmark appearance table shared by every world.
    std::uint64_t appearance_seed = 0x9e3779b97f4a7c15ULL;
};

struct Observation {
    NodeId node = 0;
    int n_views = 0;
    int feature_dim = 0;
    std::vector<double> views;   // n_views x feature_dim, row-major
    std::vector<double> angles;  // heading of view i = 2*pi*i/n_views
    // (neighbour, facing view), sorted by neighbour id.
    std::vector<std::pair<NodeId, int>> neighbor_view_index;

    int view_of(NodeId neighbor) const;  // -1 when not a neighbour
};

// Index of the view whose heading is angularly closest to `heading`.
int facing_view(double heading, int n_views);

// Throws UnknownNode.
Observation render_observation(const WorldGraph& g, NodeId node, std::uint64_t noise_seed,
                               const RenderParams& params = {});

// kStop at the goal, otherwise the next node of shortest_path(current, goal).
NodeId oracle_next_action(const WorldGraph& g, NodeId current, NodeId goal);

// Versioned JSON documents. Round trips preserve every field exactly.
std::string world_to_json(const WorldGraph& g);
WorldGraph world_from_json(const std::string& text);
std::string episodes_to_json(const std::vector<Episode>& episodes);
std::vector<Episode> episodes_from_json(const std::string& text);

}  // namespace navkd
