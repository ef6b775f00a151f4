#pragma once

#include "goat/attention.hpp"
#include "goat/graph.hpp"
#include "goat/params.hpp"
#include "goat/pooling.hpp"
#include "goat/tagcn.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace goat {

struct OptimizerConfig {
    double lr = 2e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Architecture, ablation switches, optimiser and protocol settings.
///
/// Ablation rows: A = no flags (projection + mean pool + head), B = +MHGA,
/// C = +TAGCN, D = +residual in the TAGCN stack, E = +gated attention pooling.
struct ModelConfig {
    std::size_t in_dim = 64;
    std::size_t d_model = 128;
    std::size_t d_edge = 16;
    std::size_t heads = 4;
    std::size_t mhga_layers = 2;
    std::size_t gcn_layers = 3; // F
    std::size_t hops = 3;       // P
    std::size_t k = 8;
    KnnMetric knn_metric = KnnMetric::spatial_euclidean;
    std::size_t d_attn = 0; // 0: d_model / 2
    std::size_t d_ffn = 0;  // 0: 4 * d_model
    std::size_t n_classes = 2;

    bool use_mhga = true;
    bool use_tagcn = true;
    bool use_residual = true;
    bool use_gap = true;
    bool mhga_gated = true;
    bool theta_tanh = true;
    // Non-empty ("max", "mean", "abmil"): trunk-free baseline, ablation flags ignored.
    std::string baseline;

    OptimizerConfig optimizer;
    std::size_t epochs = 50;
    std::size_t patience = 10;
    std::size_t folds = 10;
    std::array<double, 3> split_ratios{0.60, 0.15, 0.25};
    std::uint64_t seed = 0;

    // Sets the four ablation flags for model 'A'..'E'.
    void apply_ablation(char model);
    // Ablation letter matching the current flags, or '?' if none does.
    char ablation() const;
    std::size_t resolved_d_attn() const { return d_attn ? d_attn : std::max<std::size_t>(1, d_model / 2); }
    std::size_t resolved_d_ffn() const { return d_ffn ? d_ffn : 4 * d_model; }
    // Throws ConfigError on inconsistent settings.
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Graph-side inputs that do not change during training.
struct PreparedSlide {
    SlideGraph graph;
    NormAdj adj;
    Tensor edge_features; // empty unless the model embeds edges
};

PreparedSlide prepare_slide(const SlideBag& bag, const ModelConfig& config);

// Uniform fan-in initialisation U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases and
// layer-norm shifts start at 0, layer-norm scales at 1.
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

struct ForwardResult {
    Var logits;          // [n_classes]
    Var slide_embedding; // [d_model]
    Var node_embedding;  // [N x d_model], input to pooling
    Var alpha;           // [N] pooling attention; unbound for max/mean pooling
    std::vector<AttentionState> attention;
};

ForwardResult forward(const Bindings& params, const PreparedSlide& slide, const ModelConfig& config);

/// Softmax class probabilities for one slide, no tape kept.
struct Prediction {
    std::size_t predicted = 0;
    std::vector<double> scores;
    std::vector<double> alpha; // per patch; uniform when the pooling has no attention
};

Prediction predict(const ParamStore& params, const PreparedSlide& slide, const ModelConfig& config);

} // namespace goat
