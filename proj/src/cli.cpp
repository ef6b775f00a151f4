#include "goat/cli.hpp"

#include "goat/error.hpp"
#include "goat/graph.hpp"
#include "goat/interpret.hpp"
#include "goat/synth.hpp"
#include "goat/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

namespace goat {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t env_seed(std::uint64_t fallback)
{
    const char* env = std::getenv("GOAT_SEED");
    if (!env)
        return fallback;
    try {
        return std::stoull(env);
    } catch (const std::exception&) {
        throw ConfigError(std::string("GOAT_SEED is not an unsigned integer: ") + env);
    }
}

// Flags that override the resolved model configuration.
struct ConfigFlags {
    std::string config_file;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> k;
    std::optional<std::string> knn_metric;
    std::optional<std::string> ablation;
    std::optional<std::size_t> folds;
    std::optional<std::size_t> epochs;
    std::optional<std::string> baseline;

    void attach(CLI::App* cmd)
    {
        cmd->add_option("--config", config_file, "JSON file mirroring the model configuration")
            ->check(CLI::ExistingFile);
        cmd->add_option("--seed", seed, "random seed (falls back to config, then $GOAT_SEED)");
        cmd->add_option("--k", k, "neighbours per patch in the slide graph");
        cmd->add_option("--knn-metric", knn_metric, "spatial_euclidean | feature_euclidean")
            ->check(CLI::IsMember({"spatial_euclidean", "feature_euclidean", "spatial", "feature"}));
        cmd->add_option("--ablation", ablation, "model A-E")->check(CLI::IsMember({"A", "B", "C", "D", "E"}));
        cmd->add_option("--folds", folds, "Monte Carlo folds");
        cmd->add_option("--epochs", epochs, "maximum epochs per fold");
        cmd->add_option("--baseline", baseline, "trunk-free baseline pooling: max | mean | abmil")
            ->check(CLI::IsMember({"max", "mean", "abmil"}));
    }

    ModelConfig resolve() const
    {
        ModelConfig c;
        bool seed_from_file = false;
        if (!config_file.empty()) {
            std::ifstream in(config_file);
            if (!in)
                throw IoError("cannot open config " + config_file);
            json j;
            try {
                j = json::parse(in);
            } catch (const json::exception& e) {
                throw ConfigError(config_file + ": " + e.what());
            }
            c = j.get<ModelConfig>();
            seed_from_file = j.contains("seed");
        }
        if (ablation)
            c.apply_ablation((*ablation)[0]);
        if (baseline)
            c.baseline = *baseline;
        if (k)
            c.k = *k;
        if (knn_metric)
            c.knn_metric = parse_knn_metric(*knn_metric);
        if (folds)
            c.folds = *folds;
        if (epochs)
            c.epochs = *epochs;
        if (seed) {
            c.seed = *seed;
        } else if (!seed_from_file) {
            c.seed = env_seed(c.seed);
        }
        return c;
    }
};

void write_json_file(const fs::path& path, const json& j)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void echo_config(std::ostream& out, const ModelConfig& c)
{
    out << "resolved config: " << json(c).dump() << '\n';
}

// Fills in the dataset-dependent fields.
ModelConfig fit_to_dataset(ModelConfig c, const Dataset& ds)
{
    c.in_dim = ds.slides.front().dim();
    c.n_classes = ds.n_classes();
    c.validate();
    return c;
}

int cmd_synth(const fs::path& out_dir, std::size_t n_slides, std::size_t n_classes, std::size_t n_patches,
              std::size_t dim, std::optional<std::uint64_t> seed_flag, std::ostream& out)
{
    SynthSpec spec;
    spec.dim = dim;
    const std::uint64_t seed = seed_flag ? *seed_flag : env_seed(0);
    out << "resolved config: "
        << json{{"n_slides", n_slides}, {"n_classes", n_classes}, {"n_patches", n_patches}, {"dim", dim},
                {"seed", seed}, {"motif_fraction", spec.motif_fraction}, {"motif_shift", spec.motif_shift},
                {"noise", spec.noise}, {"prototype_seed", spec.prototype_seed}}
               .dump()
        << '\n';
    const SynthDataset sd = synth_dataset(n_slides, n_classes, n_patches, seed, spec);
    const fs::path manifest = out_dir / "dataset.json";
    save_dataset(sd.dataset, manifest);
    for (std::size_t s = 0; s < sd.dataset.slides.size(); ++s) {
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < sd.motif[s].size(); ++i)
            if (sd.motif[s][i])
                ids.push_back(i);
        write_json_file(out_dir / "slides" / (sd.dataset.slides[s].slide_id + ".motif.json"),
                        json{{"slide_id", sd.dataset.slides[s].slide_id}, {"motif_patches", ids}});
    }
    out << "wrote " << n_slides << " slides to " << manifest.string() << '\n';
    return 0;
}

int cmd_build_graph(const fs::path& slide, const ConfigFlags& flags, std::ostream& out)
{
    const ModelConfig c = flags.resolve();
    echo_config(out, c);
    const SlideBag bag = load_slide_bag(slide);
    const SlideGraph g = build_knn_graph(bag, c.k, c.knn_metric);
    const NormAdj adj = normalize_adjacency(g);
    std::size_t min_deg = g.n_edges(), max_deg = 0;
    for (std::size_t i = 0; i < g.n_nodes(); ++i) {
        const std::size_t deg = g.offsets[i + 1] - g.offsets[i];
        min_deg = std::min(min_deg, deg);
        max_deg = std::max(max_deg, deg);
    }
    const auto [wmin, wmax] = std::minmax_element(adj.values.begin(), adj.values.end());
    const json stats{{"slide_id", bag.slide_id},
                     {"n_nodes", g.n_nodes()},
                     {"n_edges", g.n_edges()},
                     {"k", c.k},
                     {"knn_metric", to_string(c.knn_metric)},
                     {"min_out_degree", min_deg},
                     {"max_out_degree", max_deg},
                     {"norm_adj_nnz", adj.nnz()},
                     {"norm_adj_min_weight", *wmin},
                     {"norm_adj_max_weight", *wmax}};
    out << stats.dump(2) << '\n';
    return 0;
}

void print_summary(std::ostream& out, const EvalReport& r)
{
    for (const auto& f : r.folds)
        out << "fold " << f.fold << ": best_epoch=" << f.best_epoch << " accuracy=" << f.accuracy << " auc=" << f.auc
            << '\n';
    out << "mean accuracy=" << r.mean_accuracy << " mean auc=" << r.mean_auc << '\n';
}

int cmd_train(const fs::path& dataset_path, const fs::path& out_dir, const ConfigFlags& flags, std::size_t threads,
              bool verbose, std::ostream& out)
{
    const Dataset ds = load_dataset(dataset_path);
    const ModelConfig c = fit_to_dataset(flags.resolve(), ds);
    echo_config(out, c);

    TrainOptions opt;
    opt.threads = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
    if (verbose)
        opt.on_epoch = [](std::size_t fold, std::size_t epoch, double loss, double val) {
            std::cerr << "fold " << fold << " epoch " << epoch << " loss " << loss << " val_acc " << val << '\n';
        };
    const TrainResult result = train(ds, c, opt);
    fs::create_directories(out_dir);
    save_checkpoint(result.checkpoint, out_dir / "checkpoint.goat");
    write_json_file(out_dir / "report.json", result.report);
    write_json_file(out_dir / "config.json", c);
    print_summary(out, result.report);
    out << "checkpoint: " << (out_dir / "checkpoint.goat").string() << '\n';
    return 0;
}

int cmd_eval(const fs::path& ckpt_path, const fs::path& dataset_path, const fs::path& out_dir, std::ostream& out)
{
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    echo_config(out, ckpt.config);
    const Dataset ds = load_dataset(dataset_path);
    const EvalReport report = evaluate(ckpt, ds);
    if (!out_dir.empty())
        write_json_file(out_dir / "eval_report.json", report);
    print_summary(out, report);
    return 0;
}

int cmd_heatmap(const fs::path& ckpt_path, const fs::path& slide_path, std::size_t fold, std::size_t top_k,
                std::size_t cell_px, const fs::path& out_dir, std::ostream& out)
{
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    echo_config(out, ckpt.config);
    const SlideBag bag = load_slide_bag(slide_path);
    const HeatmapRecord record = heatmap_for_slide(ckpt, fold, bag, top_k);
    const HeatmapFiles files = render_heatmap(record, out_dir / (bag.slide_id + ".heatmap"), cell_px);
    out << "predicted class " << record.predicted << '\n' << "top patches:";
    for (auto id : record.top_patches)
        out << ' ' << id;
    out << '\n' << "image: " << files.image.string() << '\n' << "sidecar: " << files.sidecar.string() << '\n';
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Geometry-aware slide graph classifier"};
    app.require_subcommand(1);

    fs::path out_dir;

    auto* synth = app.add_subcommand("synth", "write a synthetic geometric dataset");
    std::size_t n_slides = 200, n_classes = 2, n_patches = 64, dim = 64;
    std::optional<std::uint64_t> synth_seed;
    synth->add_option("--out-dir", out_dir, "output directory")->required();
    synth->add_option("--n-slides", n_slides, "number of slides");
    synth->add_option("--n-classes", n_classes, "number of classes");
    synth->add_option("--n-patches", n_patches, "patches per slide");
    synth->add_option("--dim", dim, "embedding width");
    synth->add_option("--seed", synth_seed, "generator seed (falls back to $GOAT_SEED)");

    auto* build = app.add_subcommand("build-graph", "build the k-NN graph of one slide and print its statistics");
    fs::path slide_path;
    ConfigFlags build_flags;
    build->add_option("--slide", slide_path, "slide manifest")->required()->check(CLI::ExistingFile);
    build_flags.attach(build);

    auto* trn = app.add_subcommand("train", "cross-validated training");
    fs::path dataset_path;
    ConfigFlags train_flags;
    std::size_t threads = 0;
    bool verbose = false;
    trn->add_option("--dataset", dataset_path, "dataset manifest")->required()->check(CLI::ExistingFile);
    trn->add_option("--out-dir", out_dir, "output directory")->required();
    trn->add_option("--threads", threads, "folds trained concurrently (0: all cores)");
    trn->add_flag("--verbose", verbose, "log every epoch to stderr");
    train_flags.attach(trn);

    auto* ev = app.add_subcommand("eval", "re-evaluate a checkpoint on its test splits");
    fs::path ckpt_path;
    ev->add_option("--checkpoint", ckpt_path, "checkpoint file")->required()->check(CLI::ExistingFile);
    ev->add_option("--dataset", dataset_path, "dataset manifest")->required()->check(CLI::ExistingFile);
    ev->add_option("--out-dir", out_dir, "write eval_report.json here");

    auto* heat = app.add_subcommand("heatmap", "attention heatmap and top-k patches for one slide");
    std::size_t fold = 0, top_k = 8, cell_px = 8;
    heat->add_option("--checkpoint", ckpt_path, "checkpoint file")->required()->check(CLI::ExistingFile);
    heat->add_option("--slide", slide_path, "slide manifest")->required()->check(CLI::ExistingFile);
    heat->add_option("--fold", fold, "fold model to use");
    heat->add_option("--top-k", top_k, "number of top patches to list");
    heat->add_option("--cell-px", cell_px, "pixels per patch cell");
    heat->add_option("--out-dir", out_dir, "output directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n' << app.help();
        return 2;
    }

    try {
        if (*synth)
            return cmd_synth(out_dir, n_slides, n_classes, n_patches, dim, synth_seed, out);
        if (*build)
            return cmd_build_graph(slide_path, build_flags, out);
        if (*trn)
            return cmd_train(dataset_path, out_dir, train_flags, threads, verbose, out);
        if (*ev)
            return cmd_eval(ckpt_path, dataset_path, out_dir, out);
        if (*heat)
            return cmd_heatmap(ckpt_path, slide_path, fold, top_k, cell_px, out_dir, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

} // namespace goat
