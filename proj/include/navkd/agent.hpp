#pragma once

// Binds a model to one episode: renders observations, keeps the model's
// topological map in sync with the agent's position, and produces the fused
// action logits at every decision point.

#include <vector>

#include "navkd/model.hpp"

namespace navkd {

struct AgentStep {
    Observation obs;
    PanoramaOutput pano;
    CoarseOutput coarse;
    FineOutput fine;
    FusedLogits logits;
};

class EpisodeAgent {
   public:
    // `language` must come from model.encode_instruction(episode.instruction).
    EpisodeAgent(const DuetModel& model, const WorldGraph& world, const Episode& episode, LanguageOutput language,
                 const RenderParams& render = {});

    // Enters `node` (the start node first, then any ghost of the map), observes
    // it and scores the next action.
    const AgentStep& enter(NodeId node);

    const LanguageOutput& language() const { return language_; }
    const TopoMap& map() const { return map_; }
    const AgentStep& last() const { return steps_.back(); }
    const std::vector<AgentStep>& steps() const { return steps_; }

   private:
    const DuetModel* model_;
    const WorldGraph* world_;
    const Episode* episode_;
    RenderParams render_;
    LanguageOutput language_;
    TopoMap map_;
    std::vector<AgentStep> steps_;
};

// Fine-encoder object choice at the current node: index into `objects`.
std::size_t choose_object(const DuetModel& model, const FineOutput& fine, std::span<const int> objects);

// The target a perfect agent would pick from this map: STOP at the goal,
// otherwise the ghost g minimising map-route(current, g) + world-distance(g,
// goal), ties to the lower id. Returns kStop when no ghost remains.
NodeId oracle_candidate(const WorldGraph& world, const TopoMap& map, NodeId goal);

// Position of `action` in the candidate list. Throws CandidateSetMismatch.
std::size_t candidate_index(const FusedLogits& z, NodeId action);

}  // namespace navkd
