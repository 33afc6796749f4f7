#pragma once

// Dual-scale cross-modal transformer navigator. The same code builds the
// large teacher and the small student; every forward pass exposes the
// per-block attention scores and hidden states that distillation consumes.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "navkd/optim.hpp"
#include "navkd/tensor.hpp"
#include "navkd/topo_map.hpp"
#include "navkd/world.hpp"

namespace navkd {

// Visit-step embeddings of the coarse map; later steps share the last slot.
inline constexpr int kStepSlots = 16;

struct ModelConfig {
    int n_lang_blocks = 9;
    int n_pano_blocks = 2;
    int n_cross_blocks = 4;  // shared by the coarse and fine encoders
    int hidden_dim = 128;
    int n_heads = 4;
    int ffn_dim = 256;
    int vocab_size = 52;
    int max_instruction_len = 24;
    int view_feature_dim = 32;
    int n_views = 36;
    int n_objects = 16;

    static ModelConfig teacher_default();
    static ModelConfig student_default();

    // Throws ConfigError.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

std::string canonical_string(const ModelConfig& cfg);
std::uint64_t config_digest(const ModelConfig& cfg);
// Closed-form scalar count of every parameter DuetModel allocates.
std::size_t param_count(const ModelConfig& cfg);

struct BlockCapture {
    Tensor attention;       // pre-softmax scaled scores, heads stacked: [(heads*S) x T]
    Tensor probabilities;   // row-wise softmax of `attention`
    std::size_t heads = 0;
    Tensor hidden;  // block output [S x D]
};

struct LanguageOutput {
    Tensor embedding;  // E  [L x D]
    Tensor feature;    // f_L [L x D]
    std::vector<BlockCapture> blocks;
};

struct PanoramaOutput {
    Tensor feature;  // h_t [K x D]
    std::vector<BlockCapture> blocks;
};

struct CoarseOutput {
    Tensor scores;               // [(|N_t|+1) x 1], STOP last
    Tensor cls;                  // STOP-token output [1 x D]
    std::vector<NodeId> nodes;   // map order, then kStop
    std::vector<BlockCapture> blocks;
};

struct FineOutput {
    Tensor scores;              // [(|N(V_t)|+1) x 1], STOP last
    Tensor cls;                 // STOP-token output [1 x D]
    std::vector<NodeId> nodes;  // neighbours in input order, then kStop
    std::vector<BlockCapture> blocks;
};

struct FusedLogits {
    Tensor logits;                    // [C]
    Tensor gate;                      // lambda, [1 x 1]
    std::vector<NodeId> candidates;   // ghosts in map order, then kStop
};

class DuetModel {
   public:
    DuetModel(const ModelConfig& cfg, std::uint64_t seed);
    DuetModel(const DuetModel&) = delete;
    DuetModel& operator=(const DuetModel&) = delete;
    DuetModel(DuetModel&&) = default;
    DuetModel& operator=(DuetModel&&) = default;

    const ModelConfig& config() const { return cfg_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }
    std::size_t parameter_count() const { return params_.scalar_count(); }

    // Throws TokenOutOfRange or TooLong.
    Tensor embed_instruction(std::span<const int> tokens) const;
    LanguageOutput encode_instruction(std::span<const int> tokens) const;
    LanguageOutput encode_embedding(const Tensor& embedding) const;

    // rel_position: current node minus episode start, metres.
    PanoramaOutput encode_panorama(const Observation& obs, Vec2 rel_position) const;

    CoarseOutput coarse_forward(const Tensor& instruction, const TopoMap& map) const;
    FineOutput fine_forward(const Tensor& instruction, const Tensor& pano,
                            std::span<const std::pair<NodeId, int>> neighbor_views) const;

    // Candidates are the map's GHOST nodes plus STOP. Throws ShapeError when
    // the two score sets do not describe the same step.
    FusedLogits fuse_scores(const CoarseOutput& coarse, const FineOutput& fine, const TopoMap& map) const;

    Tensor itm_logit(const CoarseOutput& coarse) const;                           // [1 x 1]
    Tensor object_scores(const FineOutput& fine, std::span<const int> objects) const;  // [1 x n]

   private:
    struct Attention {
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    };
    struct Norm {
        Tensor gamma, beta;
    };
    struct FeedForward {
        Tensor w1, b1, w2, b2;
    };
    struct SelfBlock {
        Norm ln_attn, ln_ffn;
        Attention attn;
        FeedForward ffn;
    };
    struct CrossBlock {
        Norm ln_cross, ln_self, ln_ffn;
        Attention cross, self;
        FeedForward ffn;
    };

    Attention make_attention(const std::string& prefix, Rng& rng);
    Norm make_norm(const std::string& prefix);
    FeedForward make_ffn(const std::string& prefix, Rng& rng);
    SelfBlock make_self_block(const std::string& prefix, Rng& rng);
    CrossBlock make_cross_block(const std::string& prefix, Rng& rng);

    Tensor attend(const Attention& a, const Tensor& query, const Tensor& context, BlockCapture* capture) const;
    Tensor feed_forward(const FeedForward& f, const Tensor& x) const;
    Tensor norm(const Norm& n, const Tensor& x) const;
    Tensor run_self_block(const SelfBlock& b, const Tensor& x, BlockCapture& capture) const;
    Tensor run_cross_block(const CrossBlock& b, const Tensor& x, const Tensor& text, BlockCapture& capture) const;

    ModelConfig cfg_;
    ParameterSet params_;

    Tensor tok_emb_, pos_emb_;
    std::vector<SelfBlock> lang_blocks_;
    Norm lang_norm_;

    Tensor view_w_, view_b_, pano_type_, pano_loc_w_, pano_loc_b_;
    std::vector<SelfBlock> pano_blocks_;
    Norm pano_norm_;

    Tensor role_emb_, step_emb_, map_loc_w_, map_loc_b_, coarse_stop_;
    std::vector<CrossBlock> coarse_blocks_;
    Norm coarse_norm_;
    Tensor coarse_head_w_, coarse_head_b_;

    Tensor fine_stop_;
    std::vector<CrossBlock> fine_blocks_;
    Norm fine_norm_;
    Tensor fine_head_w_, fine_head_b_;

    Tensor gate_w_, gate_b_;
    Tensor itm_w_, itm_b_;
    Tensor object_emb_;
};

// Greedy: argmax, ties to the lowest candidate id (kStop sorts first).
NodeId predict_action(const FusedLogits& z);
// Draws from softmax(z).
NodeId sample_action(const FusedLogits& z, Rng& rng);

}  // namespace navkd
