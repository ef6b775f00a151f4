#include "goat/training.hpp"

#include "goat/error.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

namespace goat {

using nlohmann::json;

namespace {

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts)
{
    std::vector<std::uint32_t> words;
    for (auto p : parts) {
        words.push_back(static_cast<std::uint32_t>(p));
        words.push_back(static_cast<std::uint32_t>(p >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

// Stream tags keep the per-fold random streams apart.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kOrderStream = 2;
constexpr std::uint64_t kSplitStream = 3;

} // namespace

// ---- optimiser ----------------------------------------------------------

void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const OptimizerConfig& hyper)
{
    for (const auto& [name, value] : params.entries()) {
        auto it = grads.find(name);
        if (it == grads.end())
            throw ContractError("adam_step: no gradient for parameter '" + name + "'");
        if (it->second.numel() != value.numel())
            throw ContractError("adam_step: gradient for '" + name + "' has shape " + shape_str(it->second.shape()) +
                                ", parameter is " + shape_str(value.shape()));
        if (!it->second.all_finite())
            throw TrainingError("non-finite gradient for parameter '" + name + "'");
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(hyper.beta1, t);
    const double bc2 = 1.0 - std::pow(hyper.beta2, t);
    for (auto& [name, value] : params.entries()) {
        const Tensor& g = grads.at(name);
        auto [mit, fresh_m] = state.m.try_emplace(name, Tensor::zeros_like(value));
        auto [vit, fresh_v] = state.v.try_emplace(name, Tensor::zeros_like(value));
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        for (std::size_t i = 0; i < value.numel(); ++i) {
            const double gi = g[i] + hyper.weight_decay * value[i];
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            value[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
        }
    }
}

// ---- splits -------------------------------------------------------------

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios)
{
    double total = 0.0;
    for (double r : ratios) {
        if (r < 0.0)
            throw ConfigError("split ratios must be non-negative");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw ConfigError("split ratios sum to " + std::to_string(total) + ", expected 1");

    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t p = 0; p < 3; ++p) {
        const double exact = ratios[p] * static_cast<double>(n);
        sizes[p] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        rem[p] = exact - static_cast<double>(sizes[p]);
        assigned += sizes[p];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-12; });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned)
        ++sizes[order[r % 3]];
    return sizes;
}

SplitPlan monte_carlo_splits(std::size_t n, std::size_t folds, const std::array<double, 3>& ratios, std::uint64_t seed,
                             const std::vector<std::size_t>& labels)
{
    if (folds == 0)
        throw ContractError("monte_carlo_splits: need at least one fold");
    if (n < folds)
        throw ContractError("monte_carlo_splits: " + std::to_string(n) + " slides for " + std::to_string(folds) +
                            " folds");
    if (!labels.empty() && labels.size() != n)
        throw ContractError("monte_carlo_splits: label count does not match slide count");
    const auto sizes = split_sizes(n, ratios);

    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i)
        by_class[labels.empty() ? 0 : labels[i]].push_back(i);

    SplitPlan plan;
    for (std::size_t f = 0; f < folds; ++f) {
        std::mt19937_64 rng(mix_seed({seed, kSplitStream, f}));
        // Interleave shuffled classes by relative position so every prefix of
        // the ordering is close to the overall class mix.
        struct Keyed {
            double pos;
            std::size_t cls;
            std::size_t item;
        };
        std::vector<Keyed> keyed;
        for (auto& [cls, items] : by_class) {
            std::vector<std::size_t> shuffled = items;
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            for (std::size_t r = 0; r < shuffled.size(); ++r)
                keyed.push_back({(static_cast<double>(r) + 0.5) / static_cast<double>(shuffled.size()), cls, shuffled[r]});
        }
        std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
            return a.pos != b.pos ? a.pos < b.pos : a.cls < b.cls;
        });
        Fold fold;
        for (std::size_t r = 0; r < keyed.size(); ++r) {
            auto& dst = r < sizes[0] ? fold.train : (r < sizes[0] + sizes[1] ? fold.val : fold.test);
            dst.push_back(keyed[r].item);
        }
        plan.folds.push_back(std::move(fold));
    }
    return plan;
}

void to_json(json& j, const SplitPlan& p)
{
    j = json::array();
    for (const auto& f : p.folds)
        j.push_back({{"train", f.train}, {"val", f.val}, {"test", f.test}});
}

void from_json(const json& j, SplitPlan& p)
{
    p.folds.clear();
    for (const auto& f : j)
        p.folds.push_back({f.at("train").get<std::vector<std::size_t>>(), f.at("val").get<std::vector<std::size_t>>(),
                           f.at("test").get<std::vector<std::size_t>>()});
}

// ---- metrics -------------------------------------------------------------

double auc_binary(const std::vector<double>& scores, const std::vector<int>& labels)
{
    if (scores.size() != labels.size())
        throw ContractError("auc: score and label counts differ");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos = 0.0, neg = 0.0, rank_sum = 0.0;
    for (std::size_t lo = 0; lo < n;) {
        std::size_t hi = lo;
        while (hi < n && scores[order[hi]] == scores[order[lo]])
            ++hi;
        // Ranks lo+1 .. hi share their mean.
        const double mid = (static_cast<double>(lo + 1) + static_cast<double>(hi)) / 2.0;
        for (std::size_t r = lo; r < hi; ++r)
            if (labels[order[r]] == 1)
                rank_sum += mid;
        lo = hi;
    }
    for (int l : labels) {
        if (l == 1)
            pos += 1.0;
        else if (l == 0)
            neg += 1.0;
        else
            throw ContractError("auc: binary labels must be 0 or 1");
    }
    if (pos == 0.0 || neg == 0.0)
        throw MetricError("auc: needs at least one positive and one negative");
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double auc(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& labels, AucAverage average)
{
    if (scores.size() != labels.size())
        throw ContractError("auc: score and label counts differ");
    if (scores.empty())
        throw MetricError("auc: no samples");
    const std::size_t classes = scores.front().size();
    for (const auto& s : scores)
        if (s.size() != classes)
            throw ContractError("auc: ragged score rows");
    for (auto l : labels)
        if (l >= classes)
            throw ContractError("auc: label " + std::to_string(l) + " outside " + std::to_string(classes) + " classes");

    std::vector<std::size_t> present(classes, 0);
    for (auto l : labels)
        ++present[l];
    if (std::count_if(present.begin(), present.end(), [](std::size_t c) { return c > 0; }) < 2)
        throw MetricError("auc: labels contain a single class");

    auto one_vs_rest = [&](std::size_t c, std::vector<double>& s, std::vector<int>& y) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            s.push_back(scores[i][c]);
            y.push_back(labels[i] == c ? 1 : 0);
        }
    };

    if (classes == 2) {
        std::vector<double> s;
        std::vector<int> y;
        one_vs_rest(1, s, y);
        return auc_binary(s, y);
    }
    if (average == AucAverage::micro) {
        std::vector<double> s;
        std::vector<int> y;
        for (std::size_t c = 0; c < classes; ++c)
            one_vs_rest(c, s, y);
        return auc_binary(s, y);
    }
    double total = 0.0;
    std::size_t measured = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        if (present[c] == 0 || present[c] == labels.size())
            continue;
        std::vector<double> s;
        std::vector<int> y;
        one_vs_rest(c, s, y);
        total += auc_binary(s, y);
        ++measured;
    }
    return total / static_cast<double>(measured);
}

double accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels)
{
    if (preds.size() != labels.size())
        throw ContractError("accuracy: prediction and label counts differ");
    if (preds.empty())
        throw ContractError("accuracy: no predictions");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        hits += preds[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// ---- reports -------------------------------------------------------------

namespace {

json number_or_null(double v)
{
    return std::isfinite(v) ? json(v) : json(nullptr);
}

double number_from(const json& j)
{
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

} // namespace

void to_json(json& j, const EvalReport& r)
{
    json folds = json::array();
    for (const auto& f : r.folds) {
        json preds = json::array();
        for (const auto& p : f.predictions)
            preds.push_back(
                {{"slide_id", p.slide_id}, {"label", p.label}, {"predicted", p.predicted}, {"scores", p.scores}});
        folds.push_back({{"fold", f.fold},
                         {"best_epoch", f.best_epoch},
                         {"val_accuracy", number_or_null(f.val_accuracy)},
                         {"accuracy", number_or_null(f.accuracy)},
                         {"auc", number_or_null(f.auc)},
                         {"predictions", preds}});
    }
    j = json{{"folds", folds},
             {"mean_accuracy", number_or_null(r.mean_accuracy)},
             {"mean_auc", number_or_null(r.mean_auc)}};
}

void from_json(const json& j, EvalReport& r)
{
    r.folds.clear();
    for (const auto& f : j.at("folds")) {
        FoldReport fr;
        fr.fold = f.at("fold").get<std::size_t>();
        fr.best_epoch = f.at("best_epoch").get<std::size_t>();
        fr.val_accuracy = number_from(f.at("val_accuracy"));
        fr.accuracy = number_from(f.at("accuracy"));
        fr.auc = number_from(f.at("auc"));
        for (const auto& p : f.at("predictions"))
            fr.predictions.push_back({p.at("slide_id").get<std::string>(), p.at("label").get<std::size_t>(),
                                      p.at("predicted").get<std::size_t>(), p.at("scores").get<std::vector<double>>()});
        r.folds.push_back(std::move(fr));
    }
    r.mean_accuracy = number_from(j.at("mean_accuracy"));
    r.mean_auc = number_from(j.at("mean_auc"));
}

// ---- checkpoint ----------------------------------------------------------

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are written as native little-endian");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    json header;
    header["format"] = "goat-checkpoint";
    header["version"] = 1;
    header["config"] = ckpt.config;
    header["class_names"] = ckpt.class_names;
    header["plan"] = ckpt.plan;
    json folds = json::array();
    std::size_t offset = 0;
    for (std::size_t f = 0; f < ckpt.fold_params.size(); ++f) {
        json manifest = json::array();
        for (const auto& [name, t] : ckpt.fold_params[f].entries()) {
            manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
            offset += t.numel() * sizeof(double);
        }
        folds.push_back({{"best_epoch", f < ckpt.best_epochs.size() ? ckpt.best_epochs[f] : 0},
                         {"val_accuracy", number_or_null(f < ckpt.val_accuracies.size() ? ckpt.val_accuracies[f]
                                                                                        : std::nan(""))},
                         {"params", manifest}});
    }
    header["folds"] = folds;
    header["blob_bytes"] = offset;

    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write checkpoint " + path.string());
    out << header.dump() << '\n';
    for (const auto& store : ckpt.fold_params)
        for (const auto& [name, t] : store.entries())
            out.write(reinterpret_cast<const char*>(t.data().data()),
                      static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!out)
        throw IoError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open checkpoint " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw FormatError(path.string() + ": empty checkpoint");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": bad checkpoint header: " + e.what());
    }
    if (header.value("format", "") != "goat-checkpoint")
        throw FormatError(path.string() + ": not a goat checkpoint");
    std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Checkpoint ckpt;
    try {
        ckpt.config = header.at("config").get<ModelConfig>();
        ckpt.class_names = header.at("class_names").get<std::vector<std::string>>();
        ckpt.plan = header.at("plan").get<SplitPlan>();
        if (header.at("blob_bytes").get<std::size_t>() != blob.size())
            throw FormatError(path.string() + ": blob holds " + std::to_string(blob.size()) + " bytes, header says " +
                              std::to_string(header.at("blob_bytes").get<std::size_t>()));
        for (const auto& f : header.at("folds")) {
            ParamStore store;
            for (const auto& p : f.at("params")) {
                const auto shape = p.at("shape").get<Shape>();
                const auto offset = p.at("offset").get<std::size_t>();
                const std::size_t bytes = shape_numel(shape) * sizeof(double);
                if (offset + bytes > blob.size())
                    throw FormatError(path.string() + ": parameter '" + p.at("name").get<std::string>() +
                                      "' runs past the end of the blob");
                std::vector<double> values(shape_numel(shape));
                std::memcpy(values.data(), blob.data() + offset, bytes);
                store.add(p.at("name").get<std::string>(), Tensor(shape, std::move(values)));
            }
            ckpt.fold_params.push_back(std::move(store));
            ckpt.best_epochs.push_back(f.at("best_epoch").get<std::size_t>());
            ckpt.val_accuracies.push_back(number_from(f.at("val_accuracy")));
        }
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": bad checkpoint header: " + e.what());
    }
    return ckpt;
}

// ---- training ------------------------------------------------------------

double train_epoch(ParamStore& params, AdamState& state, const std::vector<const PreparedSlide*>& slides,
                   const std::vector<std::size_t>& labels, const ModelConfig& config)
{
    if (slides.size() != labels.size())
        throw ContractError("train_epoch: slide and label counts differ");
    double total = 0.0;
    for (std::size_t i = 0; i < slides.size(); ++i) {
        Tape tape;
        Bindings b(tape, params);
        const ForwardResult r = forward(b, *slides[i], config);
        Var loss = cross_entropy(r.logits, labels[i]);
        total += loss.value().item();
        adam_step(params, b.gradients(tape.backward(loss)), state, config.optimizer);
    }
    return total / static_cast<double>(std::max<std::size_t>(1, slides.size()));
}

double mean_loss(const ParamStore& params, const std::vector<PreparedSlide>& slides,
                 const std::vector<std::size_t>& labels, const ModelConfig& config)
{
    double total = 0.0;
    for (std::size_t i = 0; i < slides.size(); ++i) {
        Tape tape;
        Bindings b(tape, params, false);
        total += cross_entropy(forward(b, slides[i], config).logits, labels[i]).value().item();
    }
    return total / static_cast<double>(std::max<std::size_t>(1, slides.size()));
}

namespace {

struct SubsetScore {
    double accuracy = 0.0;
    double loss = 0.0;
    std::vector<SlidePrediction> predictions;
};

SubsetScore score_subset(const ParamStore& params, const std::vector<PreparedSlide>& prepared, const Dataset& dataset,
                         const std::vector<std::size_t>& ids, const ModelConfig& config)
{
    SubsetScore out;
    std::vector<std::size_t> preds, labels;
    for (std::size_t id : ids) {
        const Prediction p = predict(params, prepared[id], config);
        const std::size_t label = dataset.slides[id].label;
        out.loss -= std::log(std::max(p.scores[label], std::numeric_limits<double>::min()));
        preds.push_back(p.predicted);
        labels.push_back(label);
        out.predictions.push_back({dataset.slides[id].slide_id, label, p.predicted, p.scores});
    }
    if (!ids.empty()) {
        out.accuracy = accuracy(preds, labels);
        out.loss /= static_cast<double>(ids.size());
    }
    return out;
}

double subset_auc(const std::vector<SlidePrediction>& preds)
{
    std::vector<std::vector<double>> scores;
    std::vector<std::size_t> labels;
    for (const auto& p : preds) {
        scores.push_back(p.scores);
        labels.push_back(p.label);
    }
    try {
        return auc(scores, labels);
    } catch (const MetricError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

FoldReport test_report(const ParamStore& params, const std::vector<PreparedSlide>& prepared, const Dataset& dataset,
                       const Fold& fold, const ModelConfig& config)
{
    FoldReport r;
    SubsetScore s = score_subset(params, prepared, dataset, fold.test, config);
    r.accuracy = fold.test.empty() ? std::numeric_limits<double>::quiet_NaN() : s.accuracy;
    r.auc = subset_auc(s.predictions);
    r.predictions = std::move(s.predictions);
    return r;
}

void summarise(EvalReport& report)
{
    double acc = 0.0, auc_sum = 0.0;
    std::size_t n_acc = 0, n_auc = 0;
    for (const auto& f : report.folds) {
        if (std::isfinite(f.accuracy)) {
            acc += f.accuracy;
            ++n_acc;
        }
        if (std::isfinite(f.auc)) {
            auc_sum += f.auc;
            ++n_auc;
        }
    }
    report.mean_accuracy = n_acc ? acc / static_cast<double>(n_acc) : std::numeric_limits<double>::quiet_NaN();
    report.mean_auc = n_auc ? auc_sum / static_cast<double>(n_auc) : std::numeric_limits<double>::quiet_NaN();
}

std::vector<PreparedSlide> prepare_all(const Dataset& dataset, const ModelConfig& config)
{
    std::vector<PreparedSlide> out;
    out.reserve(dataset.slides.size());
    for (const auto& bag : dataset.slides)
        out.push_back(prepare_slide(bag, config));
    return out;
}

struct FoldOutcome {
    ParamStore params;
    FoldReport report;
};

FoldOutcome train_fold(std::size_t f, const Fold& fold, const std::vector<PreparedSlide>& prepared,
                       const Dataset& dataset, const ModelConfig& config, const TrainOptions& options)
{
    ParamStore params = init_params(config, mix_seed({config.seed, kInitStream, f}));
    AdamState state;
    std::mt19937_64 order_rng(mix_seed({config.seed, kOrderStream, f}));

    ParamStore best = params;
    double best_acc = -1.0;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::size_t stale = 0;

    std::vector<std::size_t> order = fold.train;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        std::vector<const PreparedSlide*> slides;
        std::vector<std::size_t> labels;
        for (std::size_t id : order) {
            slides.push_back(&prepared[id]);
            labels.push_back(dataset.slides[id].label);
        }
        const double train_loss = train_epoch(params, state, slides, labels, config);
        if (!std::isfinite(train_loss))
            throw TrainingError("fold " + std::to_string(f) + " epoch " + std::to_string(epoch) +
                                ": non-finite training loss");

        const std::vector<std::size_t>& select_on = fold.val.empty() ? fold.train : fold.val;
        const SubsetScore val = score_subset(params, prepared, dataset, select_on, config);
        if (options.on_epoch)
            options.on_epoch(f, epoch, train_loss, val.accuracy);
        if (val.accuracy > best_acc || (val.accuracy == best_acc && val.loss < best_loss)) {
            best = params;
            best_acc = val.accuracy;
            best_loss = val.loss;
            best_epoch = epoch;
            stale = 0;
        } else if (++stale >= config.patience) {
            break;
        }
    }

    FoldOutcome out;
    out.report = test_report(best, prepared, dataset, fold, config);
    out.report.fold = f;
    out.report.best_epoch = best_epoch;
    out.report.val_accuracy = best_acc;
    out.params = std::move(best);
    return out;
}

} // namespace

TrainResult train(const Dataset& dataset, const ModelConfig& config, const TrainOptions& options)
{
    config.validate();
    if (dataset.slides.empty())
        throw ContractError("train: empty dataset");
    const auto labels = dataset.labels();
    std::vector<std::size_t> distinct = labels;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2)
        throw ContractError("train: need at least two classes in the dataset");
    if (distinct.back() >= config.n_classes)
        throw ContractError("train: label " + std::to_string(distinct.back()) + " outside " +
                            std::to_string(config.n_classes) + " classes");

    const std::vector<PreparedSlide> prepared = prepare_all(dataset, config);
    const SplitPlan plan = monte_carlo_splits(dataset.slides.size(), config.folds, config.split_ratios, config.seed, labels);

    const std::size_t folds = plan.folds.size();
    std::vector<FoldOutcome> outcomes(folds);
    std::vector<std::exception_ptr> errors(folds);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t f; (f = next++) < folds;) {
            try {
                outcomes[f] = train_fold(f, plan.folds[f], prepared, dataset, config, options);
            } catch (...) {
                errors[f] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, folds);
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);

    TrainResult result;
    result.checkpoint.config = config;
    result.checkpoint.class_names = dataset.class_names;
    result.checkpoint.plan = plan;
    for (auto& o : outcomes) {
        result.checkpoint.fold_params.push_back(std::move(o.params));
        result.checkpoint.best_epochs.push_back(o.report.best_epoch);
        result.checkpoint.val_accuracies.push_back(o.report.val_accuracy);
        result.report.folds.push_back(std::move(o.report));
    }
    summarise(result.report);
    return result;
}

EvalReport evaluate(const Checkpoint& ckpt, const Dataset& dataset)
{
    if (ckpt.fold_params.size() != ckpt.plan.folds.size())
        throw FormatError("checkpoint holds " + std::to_string(ckpt.fold_params.size()) + " models for " +
                          std::to_string(ckpt.plan.folds.size()) + " folds");
    for (const auto& fold : ckpt.plan.folds)
        for (const auto* part : {&fold.train, &fold.val, &fold.test})
            for (std::size_t id : *part)
                if (id >= dataset.slides.size())
                    throw ContractError("checkpoint split references slide " + std::to_string(id) +
                                        " but the dataset has " + std::to_string(dataset.slides.size()));

    const std::vector<PreparedSlide> prepared = prepare_all(dataset, ckpt.config);
    EvalReport report;
    for (std::size_t f = 0; f < ckpt.plan.folds.size(); ++f) {
        FoldReport r = test_report(ckpt.fold_params[f], prepared, dataset, ckpt.plan.folds[f], ckpt.config);
        r.fold = f;
        r.best_epoch = f < ckpt.best_epochs.size() ? ckpt.best_epochs[f] : 0;
        r.val_accuracy = f < ckpt.val_accuracies.size() ? ckpt.val_accuracies[f] : std::nan("");
        report.folds.push_back(std::move(r));
    }
    summarise(report);
    return report;
}

} // namespace goat
