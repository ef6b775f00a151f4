#include "goat/model.hpp"

#include "goat/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace goat {

using nlohmann::json;

void ModelConfig::apply_ablation(char model)
{
    baseline.clear();
    switch (model) {
    case 'A':
        use_mhga = use_tagcn = use_residual = use_gap = false;
        break;
    case 'B':
        use_mhga = true;
        use_tagcn = use_residual = use_gap = false;
        break;
    case 'C':
        use_mhga = use_tagcn = true;
        use_residual = use_gap = false;
        break;
    case 'D':
        use_mhga = use_tagcn = use_residual = true;
        use_gap = false;
        break;
    case 'E':
        use_mhga = use_tagcn = use_residual = use_gap = true;
        break;
    default:
        throw ConfigError(std::string("unknown ablation model '") + model + "', expected A-E");
    }
}

char ModelConfig::ablation() const
{
    if (!baseline.empty())
        return '?';
    for (char m : {'A', 'B', 'C', 'D', 'E'}) {
        ModelConfig probe;
        probe.apply_ablation(m);
        if (probe.use_mhga == use_mhga && probe.use_tagcn == use_tagcn && probe.use_residual == use_residual &&
            probe.use_gap == use_gap)
            return m;
    }
    return '?';
}

void ModelConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (in_dim == 0 || d_model == 0 || d_edge == 0)
        fail("in_dim, d_model and d_edge must be positive");
    if (heads == 0 || d_model % heads != 0)
        fail("d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(heads) + " heads");
    if (n_classes < 2)
        fail("need at least two classes");
    if (k == 0)
        fail("k must be at least 1");
    if (use_mhga && mhga_layers == 0)
        fail("mhga_layers must be at least 1 when MHGA is enabled");
    if (use_tagcn && (gcn_layers == 0 || hops == 0))
        fail("TAGCN needs at least one layer and one hop");
    if (!baseline.empty() && baseline != "max" && baseline != "mean" && baseline != "abmil")
        fail("unknown baseline '" + baseline + "'");
    if (!(optimizer.lr > 0.0) || optimizer.weight_decay < 0.0 || optimizer.beta1 < 0.0 || optimizer.beta1 >= 1.0 ||
        optimizer.beta2 < 0.0 || optimizer.beta2 >= 1.0 || !(optimizer.eps > 0.0))
        fail("invalid optimizer settings");
    if (folds == 0)
        fail("folds must be at least 1");
    double total = 0.0;
    for (double r : split_ratios) {
        if (r < 0.0)
            fail("split ratios must be non-negative");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9)
        fail("split ratios sum to " + std::to_string(total) + ", expected 1");
}

void to_json(json& j, const ModelConfig& c)
{
    j = json{
        {"in_dim", c.in_dim},
        {"d_model", c.d_model},
        {"d_edge", c.d_edge},
        {"heads", c.heads},
        {"mhga_layers", c.mhga_layers},
        {"gcn_layers", c.gcn_layers},
        {"hops", c.hops},
        {"k", c.k},
        {"knn_metric", to_string(c.knn_metric)},
        {"d_attn", c.resolved_d_attn()},
        {"d_ffn", c.resolved_d_ffn()},
        {"n_classes", c.n_classes},
        {"use_mhga", c.use_mhga},
        {"use_tagcn", c.use_tagcn},
        {"use_residual", c.use_residual},
        {"use_gap", c.use_gap},
        {"mhga_gated", c.mhga_gated},
        {"theta_tanh", c.theta_tanh},
        {"baseline", c.baseline},
        {"optimizer",
         {{"lr", c.optimizer.lr},
          {"weight_decay", c.optimizer.weight_decay},
          {"betas", {c.optimizer.beta1, c.optimizer.beta2}},
          {"eps", c.optimizer.eps}}},
        {"epochs", c.epochs},
        {"patience", c.patience},
        {"folds", c.folds},
        {"split_ratios", c.split_ratios},
        {"seed", c.seed},
    };
}

void from_json(const json& j, ModelConfig& c)
{
    if (!j.is_object())
        throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known = {
        "in_dim", "d_model",   "d_edge",    "heads",      "mhga_layers", "gcn_layers",   "hops",
        "k",      "knn_metric", "d_attn",   "d_ffn",      "n_classes",   "use_mhga",     "use_tagcn",
        "use_residual", "use_gap", "mhga_gated", "theta_tanh", "baseline", "optimizer", "epochs",
        "patience", "folds",   "split_ratios", "seed",   "ablation"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw ConfigError("unknown config key '" + key + "'");
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key))
                j.at(key).get_to(field);
        };
        get("in_dim", c.in_dim);
        get("d_model", c.d_model);
        get("d_edge", c.d_edge);
        get("heads", c.heads);
        get("mhga_layers", c.mhga_layers);
        get("gcn_layers", c.gcn_layers);
        get("hops", c.hops);
        get("k", c.k);
        if (j.contains("knn_metric"))
            c.knn_metric = parse_knn_metric(j.at("knn_metric").get<std::string>());
        get("d_attn", c.d_attn);
        get("d_ffn", c.d_ffn);
        get("n_classes", c.n_classes);
        if (j.contains("ablation")) {
            const auto a = j.at("ablation").get<std::string>();
            if (a.size() != 1)
                throw ConfigError("ablation must be one of A-E");
            c.apply_ablation(a[0]);
        }
        get("use_mhga", c.use_mhga);
        get("use_tagcn", c.use_tagcn);
        get("use_residual", c.use_residual);
        get("use_gap", c.use_gap);
        get("mhga_gated", c.mhga_gated);
        get("theta_tanh", c.theta_tanh);
        get("baseline", c.baseline);
        if (j.contains("optimizer")) {
            const json& o = j.at("optimizer");
            if (o.contains("lr"))
                o.at("lr").get_to(c.optimizer.lr);
            if (o.contains("weight_decay"))
                o.at("weight_decay").get_to(c.optimizer.weight_decay);
            if (o.contains("betas")) {
                const auto b = o.at("betas").get<std::vector<double>>();
                if (b.size() != 2)
                    throw ConfigError("optimizer.betas must hold two values");
                c.optimizer.beta1 = b[0];
                c.optimizer.beta2 = b[1];
            }
            if (o.contains("eps"))
                o.at("eps").get_to(c.optimizer.eps);
        }
        get("epochs", c.epochs);
        get("patience", c.patience);
        get("folds", c.folds);
        get("split_ratios", c.split_ratios);
        get("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
}

PreparedSlide prepare_slide(const SlideBag& bag, const ModelConfig& config)
{
    if (bag.dim() != config.in_dim)
        throw ContractError("slide '" + bag.slide_id + "' has dim " + std::to_string(bag.dim()) + ", model expects " +
                            std::to_string(config.in_dim));
    PreparedSlide s;
    s.graph = build_knn_graph(bag, config.k, config.knn_metric);
    s.adj = normalize_adjacency(s.graph);
    if (config.baseline.empty() && config.use_mhga)
        s.edge_features = edge_input_features(s.graph);
    return s;
}

namespace {

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    Tensor uniform(Shape shape, std::size_t fan_in)
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor t(std::move(shape));
        for (double& v : t.data())
            v = dist(rng_);
        return t;
    }

private:
    std::mt19937_64 rng_;
};

bool uses_attention_pool(const ModelConfig& c)
{
    return c.baseline.empty() ? c.use_gap : c.baseline == "abmil";
}

} // namespace

ParamStore init_params(const ModelConfig& c, std::uint64_t seed)
{
    c.validate();
    Initializer init(seed);
    ParamStore p;
    const std::size_t dm = c.d_model;
    const bool trunk = c.baseline.empty();

    p.add("embed.node.w", init.uniform({c.in_dim, dm}, c.in_dim));
    p.add("embed.node.b", Tensor(Shape{dm}));

    if (trunk && c.use_mhga) {
        p.add("embed.edge.w", init.uniform({c.in_dim + 3, c.d_edge}, c.in_dim + 3));
        p.add("embed.edge.b", Tensor(Shape{c.d_edge}));
        for (std::size_t l = 0; l < c.mhga_layers; ++l) {
            const std::string pre = "mhga." + std::to_string(l) + ".";
            p.add(pre + "ln_gamma", Tensor(Shape{dm}, 1.0));
            p.add(pre + "ln_beta", Tensor(Shape{dm}));
            p.add(pre + "wq", init.uniform({dm, dm}, dm));
            p.add(pre + "wk", init.uniform({dm, dm}, dm));
            p.add(pre + "wv", init.uniform({dm, dm}, dm));
            p.add(pre + "wo", init.uniform({dm, dm}, dm));
            p.add(pre + "theta_w", init.uniform({c.d_edge, c.d_edge}, c.d_edge));
            p.add(pre + "bias_w", init.uniform({c.d_edge, c.heads}, c.d_edge));
            p.add(pre + "bias_b", Tensor(Shape{c.heads}));
        }
    }
    if (trunk && c.use_tagcn) {
        for (std::size_t f = 0; f < c.gcn_layers; ++f) {
            const std::string pre = "tagcn." + std::to_string(f) + ".";
            for (std::size_t hop = 0; hop <= c.hops; ++hop)
                p.add(pre + "w" + std::to_string(hop), init.uniform({dm, dm}, dm * (c.hops + 1)));
            p.add(pre + "b", Tensor(Shape{dm}));
        }
    }
    if (uses_attention_pool(c)) {
        const std::size_t da = c.resolved_d_attn();
        p.add("pool.w", init.uniform({1, da}, da));
        p.add("pool.v", init.uniform({da, dm}, dm));
        p.add("pool.u", init.uniform({da, dm}, dm));
    }
    const std::size_t df = c.resolved_d_ffn();
    p.add("head.ffn1.w", init.uniform({dm, df}, dm));
    p.add("head.ffn1.b", Tensor(Shape{df}));
    p.add("head.ffn2.w", init.uniform({df, dm}, df));
    p.add("head.ffn2.b", Tensor(Shape{dm}));
    p.add("head.out.w", init.uniform({dm, c.n_classes}, dm));
    p.add("head.out.b", Tensor(Shape{c.n_classes}));
    return p;
}

ForwardResult forward(const Bindings& p, const PreparedSlide& slide, const ModelConfig& c)
{
    Tape& tape = p.tape();
    ForwardResult r;

    EmbeddingWeights ew{p["embed.node.w"], p["embed.node.b"], {}, {}};
    const bool trunk = c.baseline.empty();
    if (trunk && c.use_mhga) {
        ew.edge_w = p["embed.edge.w"];
        ew.edge_b = p["embed.edge.b"];
    }
    const GraphEmbedding emb = embed_graph(tape, slide.graph, slide.edge_features, ew);
    Var h = emb.node_emb;

    if (trunk && c.use_mhga) {
        MhgaOptions opt;
        opt.gated = c.mhga_gated;
        opt.theta_tanh = c.theta_tanh;
        std::optional<Var> prev;
        for (std::size_t l = 0; l < c.mhga_layers; ++l) {
            const std::string pre = "mhga." + std::to_string(l) + ".";
            MhgaWeights w{p[pre + "wq"],      p[pre + "wk"],     p[pre + "wv"],       p[pre + "wo"],
                          p[pre + "theta_w"], p[pre + "bias_w"], p[pre + "bias_b"],   p[pre + "ln_gamma"],
                          p[pre + "ln_beta"], c.heads};
            MhgaOutput out = mhga_layer(h, emb.edge_emb, slide.graph, w, opt, prev);
            h = out.nodes;
            prev = out.state.edge_logits_out;
            r.attention.push_back(out.state);
        }
    }
    if (trunk && c.use_tagcn) {
        std::vector<TagcnLayerWeights> layers;
        for (std::size_t f = 0; f < c.gcn_layers; ++f) {
            const std::string pre = "tagcn." + std::to_string(f) + ".";
            TagcnLayerWeights lw;
            for (std::size_t hop = 0; hop <= c.hops; ++hop)
                lw.hops.push_back(p[pre + "w" + std::to_string(hop)]);
            lw.bias = p[pre + "b"];
            layers.push_back(std::move(lw));
        }
        h = gcn_stack(h, slide.adj, layers, c.use_residual);
    }
    r.node_embedding = h;

    if (uses_attention_pool(c)) {
        PoolingWeights pw{p["pool.w"], p["pool.v"], p["pool.u"]};
        r.alpha = gated_attention_scores(h, pw);
        r.slide_embedding = pool(h, r.alpha);
    } else if (!trunk && c.baseline == "max") {
        r.slide_embedding = baseline_pool(h, BaselinePool::max);
    } else {
        r.slide_embedding = baseline_pool(h, BaselinePool::mean);
    }

    HeadWeights hw{p["head.ffn1.w"], p["head.ffn1.b"], p["head.ffn2.w"],
                   p["head.ffn2.b"], p["head.out.w"],  p["head.out.b"]};
    r.logits = classify(r.slide_embedding, hw);
    return r;
}

Prediction predict(const ParamStore& params, const PreparedSlide& slide, const ModelConfig& config)
{
    Tape tape;
    Bindings b(tape, params, false);
    const ForwardResult r = forward(b, slide, config);
    const Tensor& z = r.logits.value();

    Prediction out;
    const double mx = *std::max_element(z.data().begin(), z.data().end());
    double total = 0.0;
    for (double v : z.data()) {
        out.scores.push_back(std::exp(v - mx));
        total += out.scores.back();
    }
    for (double& s : out.scores)
        s /= total;
    out.predicted = static_cast<std::size_t>(std::max_element(z.data().begin(), z.data().end()) - z.data().begin());

    const std::size_t n = slide.graph.n_nodes();
    if (r.alpha.valid())
        out.alpha.assign(r.alpha.value().data().begin(), r.alpha.value().data().end());
    else
        out.alpha.assign(n, 1.0 / static_cast<double>(n));
    return out;
}

} // namespace goat
