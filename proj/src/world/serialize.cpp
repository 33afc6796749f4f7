#include <json.hpp>

#include "navkd/errors.hpp"
#include "navkd/world.hpp"

namespace navkd {
namespace {

using nlohmann::json;

constexpr int kWorldVersion = 1;
constexpr int kEpisodeVersion = 1;

void require_header(const json& j, const char* format, int version) {
    if (j.value("format", "") != format) throw FormatError(std::string("not a ") + format + " document");
    if (j.value("version", -1) != version)
        throw FormatError(std::string(format) + ": unsupported version " + std::to_string(j.value("version", -1)));
}

}  // namespace

std::string world_to_json(const WorldGraph& g) {
    const WorldParams& p = g.params();
    json j;
    j["format"] = "navkd-world";
    j["version"] = kWorldVersion;
    j["seed"] = p.seed;
    j["params"] = {{"n_nodes", p.n_nodes},         {"target_degree", p.target_degree},
                   {"extent", p.extent},           {"n_landmarks", p.n_landmarks},
                   {"n_objects", p.n_objects},     {"objects_per_node", p.objects_per_node}};
    json nodes = json::array();
    for (const auto& n : g.nodes())
        nodes.push_back({{"id", n.id},
                         {"x", n.position.x},
                         {"y", n.position.y},
                         {"landmark", n.landmark_id},
                         {"objects", n.objects}});
    j["nodes"] = std::move(nodes);
    json edges = json::array();
    for (const auto& e : g.edges()) edges.push_back(json::array({e.a, e.b, e.weight}));
    j["edges"] = std::move(edges);
    return j.dump(1);
}

WorldGraph world_from_json(const std::string& text) {
    const json j = json::parse(text);
    require_header(j, "navkd-world", kWorldVersion);
    WorldParams p;
    p.seed = j.at("seed").get<std::uint64_t>();
    const json& jp = j.at("params");
    p.n_nodes = jp.at("n_nodes");
    p.target_degree = jp.at("target_degree");
    p.extent = jp.at("extent");
    p.n_landmarks = jp.at("n_landmarks");
    p.n_objects = jp.at("n_objects");
    p.objects_per_node = jp.at("objects_per_node");
    std::vector<WorldNode> nodes;
    for (const json& jn : j.at("nodes")) {
        WorldNode n;
        n.id = jn.at("id");
        n.position = {jn.at("x"), jn.at("y")};
        n.landmark_id = jn.at("landmark");
        n.objects = jn.at("objects").get<std::vector<int>>();
        nodes.push_back(std::move(n));
    }
    std::vector<Edge> edges;
    for (const json& je : j.at("edges")) edges.push_back({je.at(0), je.at(1), je.at(2)});
    return WorldGraph(p, std::move(nodes), std::move(edges));
}

std::string episodes_to_json(const std::vector<Episode>& episodes) {
    json j;
    j["format"] = "navkd-episodes";
    j["version"] = kEpisodeVersion;
    json list = json::array();
    for (const auto& e : episodes)
        list.push_back({{"id", e.id},
                        {"seed", e.seed},
                        {"start", e.start},
                        {"goal", e.goal},
                        {"target_object", e.target_object},
                        {"oracle_path", e.oracle_path},
                        {"instruction", e.instruction}});
    j["episodes"] = std::move(list);
    return j.dump(1);
}

std::vector<Episode> episodes_from_json(const std::string& text) {
    const json j = json::parse(text);
    require_header(j, "navkd-episodes", kEpisodeVersion);
    std::vector<Episode> out;
    for (const json& je : j.at("episodes")) {
        Episode e;
        e.id = je.at("id");
        e.seed = je.at("seed");
        e.start = je.at("start");
        e.goal = je.at("goal");
        e.target_object = je.at("target_object");
        e.oracle_path = je.at("oracle_path").get<std::vector<NodeId>>();
        e.instruction = je.at("instruction").get<std::vector<int>>();
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace navkd
