#include "navkd/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <stdexcept>

#include "navkd/errors.hpp"

namespace navkd {
namespace {

using Rng = std::mt19937_64;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool nearly_equal(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)); }

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    bool unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        parent[std::max(a, b)] = std::min(a, b);
        return true;
    }
};

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    x ^= x >> 31;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 29;
    return x;
}

void require_node(const WorldGraph& g, NodeId id) {
    if (!g.contains(id)) throw UnknownNode("unknown node " + std::to_string(id));
}

// Appearance vector of a landmark, or of the background when landmark < 0.
std::vector<double> appearance(const RenderParams& p, int landmark) {
    Rng rng(mix(p.appearance_seed, static_cast<std::uint64_t>(landmark + 1)));
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(p.feature_dim);
    for (double& x : v) x = dist(rng);
    return v;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return mix(a, b); }

double distance(Vec2 a, Vec2 b) { return std::hypot(b.x - a.x, b.y - a.y); }

double bearing(Vec2 a, Vec2 b) {
    double h = std::atan2(b.y - a.y, b.x - a.x);
    if (h < 0) h += kTwoPi;
    if (h >= kTwoPi) h -= kTwoPi;
    return h;
}

WorldGraph::WorldGraph(WorldParams params, std::vector<WorldNode> nodes, std::vector<Edge> edges)
    : params_(params), nodes_(std::move(nodes)), edges_(std::move(edges)) {
    adjacency_.assign(nodes_.size(), {});
    weights_.assign(nodes_.size(), {});
    std::sort(edges_.begin(), edges_.end(), [](const Edge& x, const Edge& y) {
        return std::pair(x.a, x.b) < std::pair(y.a, y.b);
    });
    for (const Edge& e : edges_) {
        if (!contains(e.a) || !contains(e.b) || e.a == e.b)
            throw std::invalid_argument("invalid edge " + std::to_string(e.a) + "-" + std::to_string(e.b));
        adjacency_[e.a].push_back(e.b);
        adjacency_[e.b].push_back(e.a);
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        auto& adj = adjacency_[i];
        std::sort(adj.begin(), adj.end());
        if (std::adjacent_find(adj.begin(), adj.end()) != adj.end())
            throw std::invalid_argument("duplicate edge at node " + std::to_string(i));
        for (NodeId nb : adj) weights_[i].push_back(distance(nodes_[i].position, nodes_[nb].position));
    }
}

const WorldNode& WorldGraph::node(NodeId id) const {
    require_node(*this, id);
    return nodes_[id];
}

const std::vector<NodeId>& WorldGraph::neighbors(NodeId id) const {
    require_node(*this, id);
    return adjacency_[id];
}

bool WorldGraph::adjacent(NodeId a, NodeId b) const {
    const auto& adj = neighbors(a);
    return std::binary_search(adj.begin(), adj.end(), b);
}

double WorldGraph::edge_weight(NodeId a, NodeId b) const {
    const auto& adj = neighbors(a);
    auto it = std::lower_bound(adj.begin(), adj.end(), b);
    if (it == adj.end() || *it != b)
        throw std::invalid_argument("nodes " + std::to_string(a) + " and " + std::to_string(b) + " are not adjacent");
    return weights_[a][it - adj.begin()];
}

double WorldGraph::mean_degree() const {
    return nodes_.empty() ? 0.0 : 2.0 * static_cast<double>(edges_.size()) / static_cast<double>(nodes_.size());
}

bool WorldGraph::connected() const {
    if (nodes_.empty()) return true;
    std::vector<bool> seen(nodes_.size(), false);
    std::vector<NodeId> stack{0};
    seen[0] = true;
    std::size_t count = 1;
    while (!stack.empty()) {
        NodeId u = stack.back();
        stack.pop_back();
        for (NodeId v : adjacency_[u])
            if (!seen[v]) {
                seen[v] = true;
                ++count;
                stack.push_back(v);
            }
    }
    return count == nodes_.size();
}

WorldGraph generate_world(const WorldParams& params) {
    if (params.n_nodes < 2) throw TooFewNodes("a world needs at least 2 nodes, got " + std::to_string(params.n_nodes));
    if (params.objects_per_node < 1 || params.objects_per_node > params.n_objects || params.n_landmarks < 1)
        throw std::invalid_argument("invalid landmark/object counts");
    Rng rng(params.seed);
    std::uniform_real_distribution<double> coord(0.0, params.extent);
    std::uniform_int_distribution<int> landmark(0, params.n_landmarks - 1);

    const int n = params.n_nodes;
    std::vector<WorldNode> nodes(n);
    std::vector<int> pool(params.n_objects);
    for (int i = 0; i < n; ++i) {
        nodes[i].id = i;
        nodes[i].position.x = coord(rng);
        nodes[i].position.y = coord(rng);
        nodes[i].landmark_id = landmark(rng);
        std::iota(pool.begin(), pool.end(), 0);
        std::shuffle(pool.begin(), pool.end(), rng);
        nodes[i].objects.assign(pool.begin(), pool.begin() + params.objects_per_node);
        std::sort(nodes[i].objects.begin(), nodes[i].objects.end());
    }

    auto dist = [&](int i, int j) { return distance(nodes[i].position, nodes[j].position); };
    std::set<std::pair<int, int>> edge_set;
    const int k = std::clamp(static_cast<int>(std::lround(params.target_degree)), 1, n - 1);
    std::vector<int> order;
    for (int i = 0; i < n; ++i) {
        order.resize(n);
        std::iota(order.begin(), order.end(), 0);
        order.erase(order.begin() + i);
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
            const double da = dist(i, a), db = dist(i, b);
            return da != db ? da < db : a < b;
        });
        for (int j = 0; j < k; ++j) edge_set.emplace(std::min(i, order[j]), std::max(i, order[j]));
    }

    // Join components through their closest pair until connected.
    UnionFind uf(n);
    for (const auto& [a, b] : edge_set) uf.unite(a, b);
    for (;;) {
        double best = std::numeric_limits<double>::infinity();
        std::pair<int, int> pick{-1, -1};
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (uf.find(i) != uf.find(j) && dist(i, j) < best) {
                    best = dist(i, j);
                    pick = {i, j};
                }
        if (pick.first < 0) break;
        uf.unite(pick.first, pick.second);
        edge_set.insert(pick);
    }

    std::vector<Edge> edges;
    for (const auto& [a, b] : edge_set) edges.push_back({a, b, dist(a, b)});
    return WorldGraph(params, std::move(nodes), std::move(edges));
}

WorldGraph generate_world(std::uint64_t seed, int n_nodes, double target_degree) {
    WorldParams p;
    p.seed = seed;
    p.n_nodes = n_nodes;
    p.target_degree = target_degree;
    return generate_world(p);
}

PathResult shortest_path(const WorldGraph& g, NodeId a, NodeId b) {
    require_node(g, a);
    require_node(g, b);
    const std::size_t n = g.size();
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    std::vector<std::vector<NodeId>> path(n);
    std::vector<bool> done(n, false);
    using Item = std::pair<double, NodeId>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist[a] = 0.0;
    path[a] = {a};
    queue.emplace(0.0, a);
    while (!queue.empty()) {
        const auto [d, u] = queue.top();
        queue.pop();
        if (done[u]) continue;
        done[u] = true;
        if (u == b) break;
        for (NodeId v : g.neighbors(u)) {
            if (done[v]) continue;
            const double nd = d + g.edge_weight(u, v);
            std::vector<NodeId> candidate = path[u];
            candidate.push_back(v);
            if (nd < dist[v] && !nearly_equal(nd, dist[v])) {
                dist[v] = nd;
                path[v] = std::move(candidate);
                queue.emplace(nd, v);
            } else if (nearly_equal(nd, dist[v]) && candidate < path[v]) {
                dist[v] = std::min(dist[v], nd);
                path[v] = std::move(candidate);
            }
        }
    }
    return {dist[b], path[b]};
}

std::vector<double> shortest_distances(const WorldGraph& g, NodeId source) {
    require_node(g, source);
    std::vector<double> dist(g.size(), std::numeric_limits<double>::infinity());
    using Item = std::pair<double, NodeId>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist[source] = 0.0;
    queue.emplace(0.0, source);
    while (!queue.empty()) {
        const auto [d, u] = queue.top();
        queue.pop();
        if (d > dist[u]) continue;
        for (NodeId v : g.neighbors(u)) {
            const double nd = d + g.edge_weight(u, v);
            if (nd < dist[v]) {
                dist[v] = nd;
                queue.emplace(nd, v);
            }
        }
    }
    return dist;
}

int direction_bucket(double heading) {
    const double step = kTwoPi / Vocabulary::kDirections;
    return static_cast<int>(std::floor(heading / step + 0.5)) % Vocabulary::kDirections;
}

std::vector<int> synthesize_instruction(const WorldGraph& g, const std::vector<NodeId>& path, int target_object,
                                        InstructionStyle style, double landmark_noise, std::uint64_t seed) {
    const Vocabulary vocab{g.params().n_landmarks, g.params().n_objects};
    Rng rng(mix(seed, 0x1a57));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<int> any_landmark(0, vocab.n_landmarks - 1);
    std::vector<int> tokens{Vocabulary::kBos};
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        const auto& from = g.node(path[i]);
        const auto& to = g.node(path[i + 1]);
        tokens.push_back(vocab.direction_token(direction_bucket(bearing(from.position, to.position))));
        int lm = to.landmark_id;
        if (landmark_noise > 0.0 && u01(rng) < landmark_noise) lm = any_landmark(rng);
        tokens.push_back(vocab.landmark_token(lm));
    }
    if (style == InstructionStyle::Object) {
        tokens.push_back(Vocabulary::kFind);
        tokens.push_back(vocab.object_token(target_object));
    }
    tokens.push_back(Vocabulary::kEos);
    return tokens;
}

Episode generate_episode(const WorldGraph& g, std::uint64_t seed, const EpisodeParams& params) {
    if (g.size() < 2) throw NoFeasiblePair("world has fewer than 2 nodes");
    Rng rng(seed);
    const int n = static_cast<int>(g.size());
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int attempt = 0; attempt < params.max_retries; ++attempt) {
        const NodeId s = pick(rng);
        const NodeId t = pick(rng);
        if (s == t) continue;
        PathResult sp = shortest_path(g, s, t);
        const int hops = static_cast<int>(sp.path.size()) - 1;
        if (hops < params.min_hops || hops > params.max_hops) continue;
        Episode ep;
        ep.seed = seed;
        ep.start = s;
        ep.goal = t;
        const auto& objects = g.node(t).objects;
        ep.target_object = objects[std::uniform_int_distribution<std::size_t>(0, objects.size() - 1)(rng)];
        ep.oracle_path = std::move(sp.path);
        ep.instruction = synthesize_instruction(g, ep.oracle_path, ep.target_object, params.style,
                                                params.landmark_noise, seed);
        return ep;
    }
    throw NoFeasiblePair("no start/goal pair with " + std::to_string(params.min_hops) + ".." +
                         std::to_string(params.max_hops) + " hops after " + std::to_string(params.max_retries) +
                         " draws");
}

Episode generate_episode(const WorldGraph& g, std::uint64_t seed, int min_hops, int max_hops) {
    EpisodeParams p;
    p.min_hops = min_hops;
    p.max_hops = max_hops;
    return generate_episode(g, seed, p);
}

int Observation::view_of(NodeId neighbor) const {
    for (const auto& [nb, view] : neighbor_view_index)
        if (nb == neighbor) return view;
    return -1;
}

int facing_view(double heading, int n_views) {
    const double step = kTwoPi / n_views;
    return static_cast<int>(std::floor(heading / step + 0.5)) % n_views;
}

Observation render_observation(const WorldGraph& g, NodeId node, std::uint64_t noise_seed,
                               const RenderParams& params) {
    const WorldNode& here = g.node(node);
    const int k = params.n_views, dv = params.feature_dim;
    Observation obs;
    obs.node = node;
    obs.n_views = k;
    obs.feature_dim = dv;
    obs.angles.resize(k);
    for (int i = 0; i < k; ++i) obs.angles[i] = kTwoPi * i / k;

    // The view shows the neighbour closest to its heading, if any faces it.
    std::vector<NodeId> shown(k, -1);
    std::vector<double> shown_gap(k, std::numeric_limits<double>::infinity());
    for (NodeId nb : g.neighbors(node)) {
        const double h = bearing(here.position, g.node(nb).position);
        const int view = facing_view(h, k);
        obs.neighbor_view_index.emplace_back(nb, view);
        double gap = std::abs(h - obs.angles[view]);
        gap = std::min(gap, kTwoPi - gap);
        if (gap < shown_gap[view]) {
            shown_gap[view] = gap;
            shown[view] = nb;
        }
    }

    Rng noise(mix(noise_seed, static_cast<std::uint64_t>(node)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    obs.views.resize(static_cast<std::size_t>(k) * dv);
    // Views facing no neighbour show the viewpoint's own surroundings.
    std::vector<double> background = appearance(params, -1);
    const std::vector<double> own = appearance(params, here.landmark_id);
    for (int j = 0; j < dv; ++j) background[j] += 0.5 * own[j];
    for (int i = 0; i < k; ++i) {
        const std::vector<double> look =
            shown[i] >= 0 ? appearance(params, g.node(shown[i]).landmark_id) : background;
        double* row = obs.views.data() + static_cast<std::size_t>(i) * dv;
        for (int j = 0; j < dv; ++j) {
            const double freq = 1.0 + (j / 2) % 4;
            const double enc = (j % 2 == 0) ? std::sin(freq * obs.angles[i]) : std::cos(freq * obs.angles[i]);
            row[j] = look[j] + 0.5 * enc;
            if (params.noise_sigma > 0.0) row[j] += params.noise_sigma * gauss(noise);
        }
    }
    return obs;
}

NodeId oracle_next_action(const WorldGraph& g, NodeId current, NodeId goal) {
    require_node(g, current);
    require_node(g, goal);
    if (current == goal) return kStop;
    return shortest_path(g, current, goal).path.at(1);
}

}  // namespace navkd
