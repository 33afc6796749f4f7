#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "navkd/agent.hpp"
#include "navkd/errors.hpp"
#include "navkd/model.hpp"
#include "navkd/ops.hpp"
#include "navkd/topo_map.hpp"
#include "navkd/world.hpp"

using namespace navkd;

namespace {

ModelConfig tiny(int nl = 2, int np = 1, int nx = 2) {
    ModelConfig c;
    c.n_lang_blocks = nl;
    c.n_pano_blocks = np;
    c.n_cross_blocks = nx;
    c.hidden_dim = 16;
    c.n_heads = 2;
    c.ffn_dim = 24;
    return c;
}

void check_rows_sum_to_one(const BlockCapture& b) {
    const Tensor& p = b.probabilities;
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0;
        for (std::size_t c = 0; c < p.cols(); ++c) s += p.at(r, c);
        CHECK(std::abs(s - 1.0) <= 1e-9);
    }
}

Tensor h_from(const Observation& obs, std::size_t d) {
    // Distinct, easily predictable rows: row i is filled with i.
    std::vector<double> v(obs.n_views * d);
    for (int i = 0; i < obs.n_views; ++i)
        for (std::size_t j = 0; j < d; ++j) v[i * d + j] = double(i);
    return Tensor::from({std::size_t(obs.n_views), d}, v);
}

}  // namespace

TEST_CASE("config validation and digests") {
    CHECK_NOTHROW(ModelConfig::teacher_default().validate());
    CHECK_NOTHROW(ModelConfig::student_default().validate());
    auto bad = tiny();
    bad.n_heads = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tiny();
    bad.n_cross_blocks = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(config_digest(tiny()) == config_digest(tiny()));
    CHECK(config_digest(tiny()) != config_digest(tiny(3)));
}

TEST_CASE("param_count closed form equals enumeration") {
    for (auto c : {ModelConfig::teacher_default(), ModelConfig::student_default(), tiny(), tiny(5, 3, 1)}) {
        DuetModel m(c, 1);
        CHECK(param_count(c) == m.parameter_count());
    }
    const double ratio =
        double(param_count(ModelConfig::student_default())) / double(param_count(ModelConfig::teacher_default()));
    CHECK(ratio >= 0.10);
    CHECK(ratio <= 0.15);
}

TEST_CASE("parameter names are unique and structured") {
    DuetModel m(tiny(), 3);
    std::set<std::string> names;
    for (const auto& p : m.parameters().items()) {
        CHECK(names.insert(p.name).second);
        CHECK(p.tensor.requires_grad());
    }
    CHECK(names.count("lang.block.1.attn.wq"));
    CHECK(names.count("coarse.block.0.cross.wk"));
    CHECK(names.count("fusion.gate_w"));
}

TEST_CASE("embed_instruction") {
    DuetModel m(tiny(), 5);
    const std::vector<int> toks = {1, 10, 20, 2};
    const auto e1 = m.embed_instruction(toks), e2 = m.embed_instruction(toks);
    CHECK(std::equal(e1.values().begin(), e1.values().end(), e2.values().begin()));
    CHECK(m.embed_instruction(std::vector<int>{7}).shape() == Shape{1, 16});

    // Swapping tokens 1 and 2 swaps the token parts; position parts stay.
    const std::vector<int> swapped = {1, 20, 10, 2};
    const auto es = m.embed_instruction(swapped);
    const auto& tok = m.parameters().at("lang.tok_emb");
    const auto& pos = m.parameters().at("lang.pos_emb");
    for (std::size_t j = 0; j < 16; ++j) {
        CHECK(std::abs(es.at(1, j) - (tok.at(20, j) + pos.at(1, j))) < 1e-15);
        CHECK(std::abs(es.at(2, j) - (tok.at(10, j) + pos.at(2, j))) < 1e-15);
        CHECK(es.at(0, j) == e1.at(0, j));
    }
    CHECK_THROWS_AS(m.embed_instruction(std::vector<int>{1, 999}), TokenOutOfRange);
    CHECK_THROWS_AS(m.embed_instruction(std::vector<int>{1, -1}), TokenOutOfRange);
    CHECK_THROWS_AS(m.embed_instruction(std::vector<int>(25, 1)), TooLong);
    CHECK_THROWS_AS(m.embed_instruction(std::vector<int>{}), TooLong);
}

TEST_CASE("encoders capture one attention and hidden state per block") {
    DuetModel m(tiny(3, 2, 2), 6);
    const auto g = generate_world(2, 30, 3);
    const auto ep = generate_episode(g, 4, 4, 7);
    const auto lang = m.encode_instruction(ep.instruction);
    CHECK(lang.feature.shape() == Shape{ep.instruction.size(), 16});
    REQUIRE(lang.blocks.size() == 3);
    for (const auto& b : lang.blocks) {
        CHECK(b.heads == 2);
        CHECK(b.attention.shape() == Shape{2 * ep.instruction.size(), ep.instruction.size()});
        CHECK(b.hidden.shape() == lang.feature.shape());
        check_rows_sum_to_one(b);
    }
    const auto obs = render_observation(g, ep.start, 1);
    const auto pano = m.encode_panorama(obs, {0, 0});
    CHECK(pano.feature.shape() == Shape{36, 16});
    CHECK(pano.blocks.size() == 2);
    for (const auto& b : pano.blocks) check_rows_sum_to_one(b);
    const auto moved = m.encode_panorama(obs, {3, -2});
    CHECK(moved.feature.values()[0] != pano.feature.values()[0]);

    Observation broken = obs;
    broken.views.pop_back();
    CHECK_THROWS_AS(m.encode_panorama(broken, {0, 0}), ShapeError);
}

TEST_CASE("zero weights leave only the residual path") {
    DuetModel m(tiny(), 7);
    for (auto& p : m.parameters().items())
        if (p.name.rfind("lang.block.", 0) == 0)
            for (double& v : p.tensor.mutable_values()) v = 0.0;
    const std::vector<int> toks = {1, 5, 30, 2};
    const auto out = m.encode_instruction(toks);
    // Each block adds attention and FFN outputs that are all zero.
    for (std::size_t i = 0; i < out.embedding.numel(); ++i) CHECK(out.blocks.back().hidden.at(i) == out.embedding.at(i));
}

TEST_CASE("topological map updates") {
    const auto g = generate_world(4, 30, 3);
    const auto obs0 = render_observation(g, 0, 0);
    TopoMap map;
    const std::size_t d = 4;
    map.update(g, 0, obs0, h_from(obs0, d));
    CHECK(map.current() == 0);
    CHECK(map.size() == 1 + g.neighbors(0).size());
    CHECK(map.ghosts().size() == g.neighbors(0).size());
    CHECK(map.find(0)->role == NodeRole::Current);
    CHECK(map.find(0)->feature.at(0) == doctest::Approx(17.5));  // mean of 0..35

    for (auto [nb, view] : obs0.neighbor_view_index) {
        CHECK(map.find(nb)->feature.at(0) == double(view));
        CHECK(map.edge(0, nb).value() == g.edge_weight(0, nb));
    }
    CHECK_THROWS_AS(map.update(g, 0, obs0, h_from(obs0, d)), IllegalMove);

    // Walk to a ghost and check role transitions and running means.
    const NodeId next = g.neighbors(0).front();
    const auto obs1 = render_observation(g, next, 0);
    const auto before = map.size();
    map.update(g, next, obs1, h_from(obs1, d));
    CHECK(map.size() >= before);
    CHECK(map.current() == next);
    CHECK(map.find(0)->role == NodeRole::Visited);
    const auto ghosts = map.ghosts();
    CHECK(std::find(ghosts.begin(), ghosts.end(), next) == ghosts.end());
    CHECK(map.find(next)->visit_step == 2);
    for (auto [nb, view] : obs1.neighbor_view_index) {
        const int v0 = obs0.view_of(nb);
        if (nb == 0) continue;
        if (v0 >= 0) {
            CHECK(map.find(nb)->accumulation_count == 2);
            CHECK(map.find(nb)->feature.at(0) == doctest::Approx((v0 + view) / 2.0));
        }
    }
    const auto far = std::find_if(g.nodes().begin(), g.nodes().end(), [&](const WorldNode& n) { return !map.find(n.id); });
    if (far != g.nodes().end()) {
        const auto o = render_observation(g, far->id, 0);
        CHECK_THROWS_AS(map.update(g, far->id, o, h_from(o, d)), IllegalMove);
    }
}

TEST_CASE("map roles only move forward and the map never shrinks") {
    const auto g = generate_world(8, 40, 3);
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        TopoMap map;
        NodeId at = NodeId(rng() % g.size());
        std::set<NodeId> visited;
        std::size_t size = 0;
        for (int step = 0; step < 10; ++step) {
            const auto obs = render_observation(g, at, 0);
            map.update(g, at, obs, h_from(obs, 2));
            visited.insert(at);
            CHECK(map.size() >= size);
            size = map.size();
            int currents = 0;
            for (const auto& n : map.nodes()) {
                if (n.role == NodeRole::Current) ++currents;
                if (n.role == NodeRole::Ghost) {
                    CHECK(visited.count(n.id) == 0);
                    bool touches = false;
                    for (NodeId v : visited) touches = touches || g.adjacent(v, n.id);
                    CHECK(touches);
                } else {
                    CHECK(visited.count(n.id) == 1);
                }
            }
            CHECK(currents == 1);
            const auto ghosts = map.ghosts();
            if (ghosts.empty()) break;
            at = ghosts[rng() % ghosts.size()];
        }
    }
}

TEST_CASE("coarse, fine and fused scores") {
    DuetModel m(tiny(), 11);
    const auto g = generate_world(3, 30, 3);
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto ep = generate_episode(g, s, 4, 7);
        EpisodeAgent agent(m, g, ep, m.encode_instruction(ep.instruction));
        const auto& st = agent.enter(ep.start);
        CHECK(st.coarse.scores.numel() == agent.map().size() + 1);
        CHECK(st.coarse.blocks.size() == 2);
        CHECK(st.fine.scores.numel() == g.neighbors(ep.start).size() + 1);
        for (double v : st.coarse.scores.values()) CHECK(std::isfinite(v));
        for (double v : st.logits.logits.values()) CHECK(std::isfinite(v));
        const double lam = st.logits.gate.item();
        CHECK(lam > 0.0);
        CHECK(lam < 1.0);
        if (s > 5) continue;
        // Candidate set: ghosts plus STOP, never a visited node.
        const auto next = agent.enter(st.logits.candidates.front() == kStop ? st.logits.candidates[1] : st.logits.candidates.front());
        for (NodeId c : next.logits.candidates)
            if (c != kStop) CHECK(agent.map().find(c)->role == NodeRole::Ghost);
        CHECK(next.logits.candidates.back() == kStop);
        CHECK(next.logits.candidates.size() == agent.map().ghosts().size() + 1);
    }
}

TEST_CASE("fine scores follow neighbour order") {
    DuetModel m(tiny(), 12);
    const auto g = generate_world(3, 30, 3);
    const auto ep = generate_episode(g, 1, 4, 7);
    const auto lang = m.encode_instruction(ep.instruction);
    const auto obs = render_observation(g, ep.start, 0);
    const auto pano = m.encode_panorama(obs, {0, 0});
    std::vector<std::pair<NodeId, int>> views = obs.neighbor_view_index;
    REQUIRE(views.size() >= 2);
    const auto a = m.fine_forward(lang.feature, pano.feature, views);
    std::reverse(views.begin(), views.end());
    const auto b = m.fine_forward(lang.feature, pano.feature, views);
    const std::size_t n = views.size();
    for (std::size_t i = 0; i < n; ++i) CHECK(a.scores.at(i) == b.scores.at(n - 1 - i));
    CHECK(a.scores.at(n) == b.scores.at(n));
    views.pop_back();
    const auto c = m.fine_forward(lang.feature, pano.feature, views);
    CHECK(c.scores.numel() == n);
    CHECK(c.scores.at(n - 1) == a.scores.at(n));
}

TEST_CASE("gated fusion arithmetic") {
    const auto z = gated_mix(Tensor::scalar(0.5), Tensor::from({2}, {2, 1}), Tensor::from({2}, {4, 9}), {true, false});
    CHECK(z.at(0) == 3.0);
    CHECK(z.at(1) == 0.5);
    const auto one = gated_mix(Tensor::scalar(1.0), Tensor::from({2}, {2, 1}), Tensor::from({2}, {4, 9}), {true, true});
    CHECK(one.at(0) == 2.0);
    CHECK(one.at(1) == 1.0);
}

TEST_CASE("predict_action") {
    FusedLogits z;
    z.candidates = {kStop};
    z.logits = Tensor::from({1}, {-3});
    CHECK(predict_action(z) == kStop);

    z.candidates = {7, 3, kStop};
    z.logits = Tensor::from({3}, {1.0, 1.0, 0.5});
    CHECK(predict_action(z) == 3);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::normal_distribution<double> n(0, 2);
        std::vector<double> v = {n(rng), n(rng), n(rng), n(rng)};
        z.candidates = {5, 1, 9, kStop};
        z.logits = Tensor::from({4}, v);
        const NodeId base = predict_action(z);
        std::vector<double> shifted = v, warped = v;
        for (auto& x : shifted) x += 17.0;
        for (auto& x : warped) x = std::exp(x) * 3.0 + 1.0;
        z.logits = Tensor::from({4}, shifted);
        CHECK(predict_action(z) == base);
        z.logits = Tensor::from({4}, warped);
        CHECK(predict_action(z) == base);
    }
}

TEST_CASE("sample_action follows softmax frequencies") {
    FusedLogits z;
    z.candidates = {2, 4, kStop};
    z.logits = Tensor::from({3}, {0.0, std::log(3.0), -50.0});
    Rng rng(5);
    int fours = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) fours += sample_action(z, rng) == 4;
    CHECK(std::abs(fours / double(n) - 0.75) < 0.015);
}

TEST_CASE("forward pass is deterministic") {
    DuetModel a(tiny(), 21), b(tiny(), 21);
    const auto g = generate_world(6, 30, 3);
    const auto ep = generate_episode(g, 2, 4, 7);
    EpisodeAgent x(a, g, ep, a.encode_instruction(ep.instruction));
    EpisodeAgent y(b, g, ep, b.encode_instruction(ep.instruction));
    const auto& sx = x.enter(ep.start);
    const auto& sy = y.enter(ep.start);
    CHECK(std::equal(sx.logits.logits.values().begin(), sx.logits.logits.values().end(),
                     sy.logits.logits.values().begin()));
}

TEST_CASE("oracle candidate and candidate index") {
    DuetModel m(tiny(), 2);
    const auto g = generate_world(10, 40, 3);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto ep = generate_episode(g, s, 4, 7);
        EpisodeAgent agent(m, g, ep, m.encode_instruction(ep.instruction));
        NodeId at = ep.start;
        agent.enter(at);
        // Following the oracle candidate from the start walks the oracle path.
        for (std::size_t i = 1; i < ep.oracle_path.size(); ++i) {
            const NodeId next = oracle_candidate(g, agent.map(), ep.goal);
            CHECK(next == ep.oracle_path[i]);
            agent.enter(next);
            at = next;
        }
        CHECK(oracle_candidate(g, agent.map(), ep.goal) == kStop);
        CHECK(agent.last().logits.candidates[candidate_index(agent.last().logits, kStop)] == kStop);
        CHECK_THROWS_AS(candidate_index(agent.last().logits, ep.start), CandidateSetMismatch);
    }
}
