#include <algorithm>
#include <cmath>
#include <sstream>

#include "navkd/errors.hpp"
#include "navkd/model.hpp"
#include "navkd/ops.hpp"

namespace navkd {
namespace {

constexpr double kLocationScale = 10.0;  // metres per unit of location feature

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Tensor location_features(std::span<const Vec2> offsets) {
    std::vector<double> v;
    v.reserve(offsets.size() * 3);
    for (Vec2 o : offsets) {
        v.push_back(o.x / kLocationScale);
        v.push_back(o.y / kLocationScale);
        v.push_back(std::hypot(o.x, o.y) / kLocationScale);
    }
    return Tensor::from({offsets.size(), 3}, std::move(v));
}

}  // namespace

ModelConfig ModelConfig::teacher_default() { return ModelConfig{}; }

ModelConfig ModelConfig::student_default() {
    ModelConfig c;
    c.n_lang_blocks = 3;
    c.n_pano_blocks = 1;
    c.n_cross_blocks = 2;
    c.hidden_dim = 64;
    c.ffn_dim = 128;
    return c;
}

void ModelConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("invalid model config: " + what);
    };
    need(n_lang_blocks >= 1 && n_pano_blocks >= 1 && n_cross_blocks >= 1, "block counts must be >= 1");
    need(hidden_dim >= 1 && n_heads >= 1 && ffn_dim >= 1, "dimensions must be >= 1");
    need(hidden_dim % n_heads == 0,
         "hidden_dim " + std::to_string(hidden_dim) + " not divisible by n_heads " + std::to_string(n_heads));
    need(vocab_size >= 1 && max_instruction_len >= 1, "vocabulary and instruction length must be >= 1");
    need(view_feature_dim >= 1 && n_views >= 1 && n_objects >= 1, "view/object sizes must be >= 1");
}

std::string canonical_string(const ModelConfig& c) {
    std::ostringstream os;
    os << "lang=" << c.n_lang_blocks << ";pano=" << c.n_pano_blocks << ";cross=" << c.n_cross_blocks
       << ";d=" << c.hidden_dim << ";heads=" << c.n_heads << ";ffn=" << c.ffn_dim << ";vocab=" << c.vocab_size
       << ";maxlen=" << c.max_instruction_len << ";dv=" << c.view_feature_dim << ";views=" << c.n_views
       << ";objects=" << c.n_objects;
    return os.str();
}

std::uint64_t config_digest(const ModelConfig& c) { return fnv1a(canonical_string(c)); }

std::size_t param_count(const ModelConfig& c) {
    const std::size_t d = c.hidden_dim, f = c.ffn_dim;
    const std::size_t attention = 4 * d * d + 4 * d;
    const std::size_t ffn = 2 * d * f + f + d;
    const std::size_t norm = 2 * d;
    const std::size_t self_block = attention + ffn + 2 * norm;
    const std::size_t cross_block = 2 * attention + ffn + 3 * norm;

    const std::size_t lang = (c.vocab_size + c.max_instruction_len) * d + c.n_lang_blocks * self_block + norm;
    const std::size_t pano = c.view_feature_dim * d + d + d + 3 * d + d + c.n_pano_blocks * self_block + norm;
    const std::size_t coarse = 3 * d + kStepSlots * d + 3 * d + d + d + c.n_cross_blocks * cross_block + norm + d + 1;
    const std::size_t fine = d + c.n_cross_blocks * cross_block + norm + d + 1;
    const std::size_t heads = (2 * d + 1) + (d + 1) + c.n_objects * d;
    return lang + pano + coarse + fine + heads;
}

DuetModel::Attention DuetModel::make_attention(const std::string& p, Rng& rng) {
    const std::size_t d = cfg_.hidden_dim;
    Attention a;
    a.wq = params_.add_xavier(p + ".wq", d, d, rng);
    a.bq = params_.add_zeros(p + ".bq", {d});
    a.wk = params_.add_xavier(p + ".wk", d, d, rng);
    a.bk = params_.add_zeros(p + ".bk", {d});
    a.wv = params_.add_xavier(p + ".wv", d, d, rng);
    a.bv = params_.add_zeros(p + ".bv", {d});
    a.wo = params_.add_xavier(p + ".wo", d, d, rng);
    a.bo = params_.add_zeros(p + ".bo", {d});
    return a;
}

DuetModel::Norm DuetModel::make_norm(const std::string& p) {
    const std::size_t d = cfg_.hidden_dim;
    Norm n;
    n.gamma = params_.add_constant(p + ".gamma", {d}, 1.0);
    n.beta = params_.add_zeros(p + ".beta", {d});
    return n;
}

DuetModel::FeedForward DuetModel::make_ffn(const std::string& p, Rng& rng) {
    const std::size_t d = cfg_.hidden_dim, f = cfg_.ffn_dim;
    FeedForward ff;
    ff.w1 = params_.add_xavier(p + ".w1", d, f, rng);
    ff.b1 = params_.add_zeros(p + ".b1", {f});
    ff.w2 = params_.add_xavier(p + ".w2", f, d, rng);
    ff.b2 = params_.add_zeros(p + ".b2", {d});
    return ff;
}

DuetModel::SelfBlock DuetModel::make_self_block(const std::string& p, Rng& rng) {
    SelfBlock b;
    b.ln_attn = make_norm(p + ".ln_attn");
    b.attn = make_attention(p + ".attn", rng);
    b.ln_ffn = make_norm(p + ".ln_ffn");
    b.ffn = make_ffn(p + ".ffn", rng);
    return b;
}

DuetModel::CrossBlock DuetModel::make_cross_block(const std::string& p, Rng& rng) {
    CrossBlock b;
    b.ln_cross = make_norm(p + ".ln_cross");
    b.cross = make_attention(p + ".cross", rng);
    b.ln_self = make_norm(p + ".ln_self");
    b.self = make_attention(p + ".self", rng);
    b.ln_ffn = make_norm(p + ".ln_ffn");
    b.ffn = make_ffn(p + ".ffn", rng);
    return b;
}

DuetModel::DuetModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t d = cfg_.hidden_dim;
    constexpr double kEmbStd = 0.02;

    tok_emb_ = params_.add_normal("lang.tok_emb", {static_cast<std::size_t>(cfg_.vocab_size), d}, kEmbStd, rng);
    pos_emb_ = params_.add_normal("lang.pos_emb", {static_cast<std::size_t>(cfg_.max_instruction_len), d}, kEmbStd, rng);
    for (int i = 0; i < cfg_.n_lang_blocks; ++i) lang_blocks_.push_back(make_self_block("lang.block." + std::to_string(i), rng));
    lang_norm_ = make_norm("lang.ln_f");

    view_w_ = params_.add_xavier("pano.view_w", cfg_.view_feature_dim, d, rng);
    view_b_ = params_.add_zeros("pano.view_b", {d});
    pano_type_ = params_.add_normal("pano.type_emb", {1, d}, kEmbStd, rng);
    pano_loc_w_ = params_.add_xavier("pano.loc_w", 3, d, rng);
    pano_loc_b_ = params_.add_zeros("pano.loc_b", {d});
    for (int i = 0; i < cfg_.n_pano_blocks; ++i) pano_blocks_.push_back(make_self_block("pano.block." + std::to_string(i), rng));
    pano_norm_ = make_norm("pano.ln_f");

    role_emb_ = params_.add_normal("coarse.role_emb", {3, d}, kEmbStd, rng);
    step_emb_ = params_.add_normal("coarse.step_emb", {kStepSlots, d}, kEmbStd, rng);
    map_loc_w_ = params_.add_xavier("coarse.loc_w", 3, d, rng);
    map_loc_b_ = params_.add_zeros("coarse.loc_b", {d});
    coarse_stop_ = params_.add_normal("coarse.stop_token", {1, d}, kEmbStd, rng);
    for (int i = 0; i < cfg_.n_cross_blocks; ++i) coarse_blocks_.push_back(make_cross_block("coarse.block." + std::to_string(i), rng));
    coarse_norm_ = make_norm("coarse.ln_f");
    coarse_head_w_ = params_.add_xavier("coarse.head_w", d, 1, rng);
    coarse_head_b_ = params_.add_zeros("coarse.head_b", {1});

    fine_stop_ = params_.add_normal("fine.stop_token", {1, d}, kEmbStd, rng);
    for (int i = 0; i < cfg_.n_cross_blocks; ++i) fine_blocks_.push_back(make_cross_block("fine.block." + std::to_string(i), rng));
    fine_norm_ = make_norm("fine.ln_f");
    fine_head_w_ = params_.add_xavier("fine.head_w", d, 1, rng);
    fine_head_b_ = params_.add_zeros("fine.head_b", {1});

    gate_w_ = params_.add_xavier("fusion.gate_w", 2 * d, 1, rng);
    gate_b_ = params_.add_zeros("fusion.gate_b", {1});
    itm_w_ = params_.add_xavier("itm.w", d, 1, rng);
    itm_b_ = params_.add_zeros("itm.b", {1});
    object_emb_ = params_.add_normal("grounding.object_emb", {static_cast<std::size_t>(cfg_.n_objects), d}, kEmbStd, rng);
}

Tensor DuetModel::norm(const Norm& n, const Tensor& x) const { return layer_norm(x, n.gamma, n.beta); }

Tensor DuetModel::attend(const Attention& a, const Tensor& query, const Tensor& context, BlockCapture* capture) const {
    const std::size_t heads = cfg_.n_heads;
    const Tensor q = linear(query, a.wq, a.bq);
    const Tensor k = linear(context, a.wk, a.bk);
    const Tensor v = linear(context, a.wv, a.bv);
    Tensor s = mha_scores(q, k, heads);
    Tensor p = softmax_rows(s);
    const Tensor o = mha_apply(p, v, heads);
    if (capture) {
        capture->attention = std::move(s);
        capture->probabilities = std::move(p);
    }
    return linear(o, a.wo, a.bo);
}

Tensor DuetModel::feed_forward(const FeedForward& f, const Tensor& x) const {
    return linear(gelu(linear(x, f.w1, f.b1)), f.w2, f.b2);
}

Tensor DuetModel::run_self_block(const SelfBlock& b, const Tensor& x, BlockCapture& capture) const {
    const Tensor a = norm(b.ln_attn, x);
    Tensor h = add(x, attend(b.attn, a, a, &capture));
    h = add(h, feed_forward(b.ffn, norm(b.ln_ffn, h)));
    capture.heads = cfg_.n_heads;
    capture.hidden = h;
    return h;
}

Tensor DuetModel::run_cross_block(const CrossBlock& b, const Tensor& x, const Tensor& text,
                                  BlockCapture& capture) const {
    Tensor h = add(x, attend(b.cross, norm(b.ln_cross, x), text, nullptr));
    const Tensor a = norm(b.ln_self, h);
    h = add(h, attend(b.self, a, a, &capture));
    h = add(h, feed_forward(b.ffn, norm(b.ln_ffn, h)));
    capture.heads = cfg_.n_heads;
    capture.hidden = h;
    return h;
}

Tensor DuetModel::embed_instruction(std::span<const int> tokens) const {
    if (tokens.empty()) throw TooLong("instruction is empty");
    if (tokens.size() > static_cast<std::size_t>(cfg_.max_instruction_len))
        throw TooLong("instruction of " + std::to_string(tokens.size()) + " tokens exceeds " +
                      std::to_string(cfg_.max_instruction_len));
    std::vector<std::size_t> ids, positions;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= cfg_.vocab_size)
            throw TokenOutOfRange("token " + std::to_string(tokens[i]) + " outside vocabulary of " +
                                  std::to_string(cfg_.vocab_size));
        ids.push_back(static_cast<std::size_t>(tokens[i]));
        positions.push_back(i);
    }
    return add(gather_rows(tok_emb_, ids), gather_rows(pos_emb_, positions));
}

LanguageOutput DuetModel::encode_embedding(const Tensor& embedding) const {
    LanguageOutput out;
    out.embedding = embedding;
    Tensor x = embedding;
    out.blocks.resize(lang_blocks_.size());
    for (std::size_t i = 0; i < lang_blocks_.size(); ++i) x = run_self_block(lang_blocks_[i], x, out.blocks[i]);
    out.feature = norm(lang_norm_, x);
    return out;
}

LanguageOutput DuetModel::encode_instruction(std::span<const int> tokens) const {
    return encode_embedding(embed_instruction(tokens));
}

PanoramaOutput DuetModel::encode_panorama(const Observation& obs, Vec2 rel_position) const {
    if (obs.n_views != cfg_.n_views || obs.feature_dim != cfg_.view_feature_dim)
        throw ShapeError("observation with " + std::to_string(obs.n_views) + " views of width " +
                         std::to_string(obs.feature_dim) + " does not fit the panorama encoder");
    const std::size_t k = obs.n_views;
    const Tensor views = Tensor::from({k, static_cast<std::size_t>(obs.feature_dim)}, obs.views);
    const Vec2 offset[1] = {rel_position};
    const Tensor location = linear(location_features(offset), pano_loc_w_, pano_loc_b_);
    Tensor x = linear(views, view_w_, view_b_);
    x = add_row(x, add(pano_type_, location));
    PanoramaOutput out;
    out.blocks.resize(pano_blocks_.size());
    for (std::size_t i = 0; i < pano_blocks_.size(); ++i) x = run_self_block(pano_blocks_[i], x, out.blocks[i]);
    out.feature = norm(pano_norm_, x);
    return out;
}

CoarseOutput DuetModel::coarse_forward(const Tensor& instruction, const TopoMap& map) const {
    if (map.empty()) throw ShapeError("coarse_forward on an empty map");
    const Vec2 here = map.find(map.current())->position;
    std::vector<Tensor> features;
    std::vector<std::size_t> roles, steps;
    std::vector<Vec2> offsets;
    CoarseOutput out;
    for (const MapNode& n : map.nodes()) {
        features.push_back(n.feature);
        roles.push_back(static_cast<std::size_t>(n.role));
        steps.push_back(static_cast<std::size_t>(std::min(n.visit_step, kStepSlots - 1)));
        offsets.push_back({n.position.x - here.x, n.position.y - here.y});
        out.nodes.push_back(n.id);
    }
    out.nodes.push_back(kStop);
    Tensor x = add(concat_rows(features), add(gather_rows(role_emb_, roles), gather_rows(step_emb_, steps)));
    x = add(x, linear(location_features(offsets), map_loc_w_, map_loc_b_));
    x = concat_rows({x, coarse_stop_});
    out.blocks.resize(coarse_blocks_.size());
    for (std::size_t i = 0; i < coarse_blocks_.size(); ++i)
        x = run_cross_block(coarse_blocks_[i], x, instruction, out.blocks[i]);
    x = norm(coarse_norm_, x);
    out.scores = linear(x, coarse_head_w_, coarse_head_b_);
    out.cls = slice_rows(x, x.rows() - 1, 1);
    return out;
}

FineOutput DuetModel::fine_forward(const Tensor& instruction, const Tensor& pano,
                                   std::span<const std::pair<NodeId, int>> neighbor_views) const {
    if (pano.rows() != static_cast<std::size_t>(cfg_.n_views) || pano.cols() != static_cast<std::size_t>(cfg_.hidden_dim))
        throw ShapeError("fine_forward: panorama feature " + to_string(pano.shape()) + " has the wrong shape");
    FineOutput out;
    Tensor x = concat_rows({pano, fine_stop_});
    out.blocks.resize(fine_blocks_.size());
    for (std::size_t i = 0; i < fine_blocks_.size(); ++i) x = run_cross_block(fine_blocks_[i], x, instruction, out.blocks[i]);
    x = norm(fine_norm_, x);
    const Tensor token_scores = linear(x, fine_head_w_, fine_head_b_);
    std::vector<std::size_t> rows;
    for (const auto& [nb, view] : neighbor_views) {
        if (view < 0 || view >= cfg_.n_views) throw ShapeError("fine_forward: view index " + std::to_string(view));
        rows.push_back(static_cast<std::size_t>(view));
        out.nodes.push_back(nb);
    }
    rows.push_back(static_cast<std::size_t>(cfg_.n_views));
    out.nodes.push_back(kStop);
    out.scores = gather_rows(token_scores, rows);
    out.cls = slice_rows(x, x.rows() - 1, 1);
    return out;
}

FusedLogits DuetModel::fuse_scores(const CoarseOutput& coarse, const FineOutput& fine, const TopoMap& map) const {
    if (coarse.nodes.size() != map.size() + 1 || coarse.scores.numel() != coarse.nodes.size())
        throw ShapeError("fuse_scores: coarse scores do not describe the current map");
    if (fine.scores.numel() != fine.nodes.size())
        throw ShapeError("fuse_scores: fine scores and neighbour list differ in length");

    FusedLogits z;
    std::vector<std::size_t> coarse_rows, fine_rows;
    std::vector<bool> use_fine;
    const std::size_t fine_stop = fine.nodes.size() - 1;
    for (std::size_t i = 0; i < map.size(); ++i) {
        const MapNode& n = map.nodes()[i];
        if (n.role != NodeRole::Ghost) continue;
        z.candidates.push_back(n.id);
        coarse_rows.push_back(i);
        auto it = std::find(fine.nodes.begin(), fine.nodes.end() - 1, n.id);
        const bool adjacent = it != fine.nodes.end() - 1;
        fine_rows.push_back(adjacent ? static_cast<std::size_t>(it - fine.nodes.begin()) : fine_stop);
        use_fine.push_back(adjacent);
    }
    z.candidates.push_back(kStop);
    coarse_rows.push_back(map.size());
    fine_rows.push_back(fine_stop);
    use_fine.push_back(true);

    z.gate = sigmoid(linear(concat_cols(coarse.cls, fine.cls), gate_w_, gate_b_));
    const Tensor mixed = gated_mix(z.gate, gather_rows(coarse.scores, coarse_rows), gather_rows(fine.scores, fine_rows), use_fine);
    z.logits = reshape(mixed, {mixed.numel()});
    return z;
}

Tensor DuetModel::itm_logit(const CoarseOutput& coarse) const { return linear(coarse.cls, itm_w_, itm_b_); }

Tensor DuetModel::object_scores(const FineOutput& fine, std::span<const int> objects) const {
    std::vector<std::size_t> rows;
    for (int o : objects) {
        if (o < 0 || o >= cfg_.n_objects) throw TokenOutOfRange("object id " + std::to_string(o));
        rows.push_back(static_cast<std::size_t>(o));
    }
    return matmul_nt(fine.cls, gather_rows(object_emb_, rows));
}

NodeId predict_action(const FusedLogits& z) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < z.candidates.size(); ++i) {
        const double a = z.logits.at(i), b = z.logits.at(best);
        if (a > b || (a == b && z.candidates[i] < z.candidates[best])) best = i;
    }
    return z.candidates[best];
}

NodeId sample_action(const FusedLogits& z, Rng& rng) {
    const std::vector<double> p = softmax(z.logits.values());
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return z.candidates[i];
    }
    return z.candidates.back();
}

}  // namespace navkd
