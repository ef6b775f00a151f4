#pragma once

#include "goat/model.hpp"
#include "goat/slide.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace goat {

// ---- optimiser ----------------------------------------------------------

struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::size_t step = 0;
};

// Adam with bias correction; weight decay enters as an L2 term in the
// gradient. Throws TrainingError naming the parameter on a non-finite gradient.
void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const OptimizerConfig& hyper);

// ---- splits -------------------------------------------------------------

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

struct SplitPlan {
    std::vector<Fold> folds;
};

// Partition sizes for n items by largest remainder; ties go to the earlier partition.
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios);

// Independent seeded, class-stratified shuffles. Each fold is a disjoint cover
// of [0, n) with sizes from split_sizes. `labels` may be empty (no stratification).
SplitPlan monte_carlo_splits(std::size_t n, std::size_t folds, const std::array<double, 3>& ratios,
                             std::uint64_t seed, const std::vector<std::size_t>& labels = {});

void to_json(nlohmann::json& j, const SplitPlan& p);
void from_json(const nlohmann::json& j, SplitPlan& p);

// ---- metrics -------------------------------------------------------------

enum class AucAverage { macro, micro };

// Mann-Whitney statistic with ties counted 1/2. labels are 0/1.
double auc_binary(const std::vector<double>& scores, const std::vector<int>& labels);

// scores[slide][class]. Two classes: AUC of the class-1 score. More classes:
// one-vs-rest over the classes present, macro-averaged, or micro (pooled).
double auc(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& labels,
           AucAverage average = AucAverage::macro);

double accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels);

// ---- reports -------------------------------------------------------------

struct SlidePrediction {
    std::string slide_id;
    std::size_t label = 0;
    std::size_t predicted = 0;
    std::vector<double> scores;
};

struct FoldReport {
    std::size_t fold = 0;
    std::size_t best_epoch = 0;
    double val_accuracy = 0.0;
    double accuracy = 0.0;
    double auc = 0.0;
    std::vector<SlidePrediction> predictions;
};

struct EvalReport {
    std::vector<FoldReport> folds;
    double mean_accuracy = 0.0;
    double mean_auc = 0.0;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

// ---- checkpoint ----------------------------------------------------------

/// One trained model per fold plus everything needed to re-run evaluation.
struct Checkpoint {
    ModelConfig config;
    std::vector<std::string> class_names;
    SplitPlan plan;
    std::vector<ParamStore> fold_params;
    std::vector<std::size_t> best_epochs;
    std::vector<double> val_accuracies;
};

// Layout: one line of JSON (config, split plan, parameter manifest with
// name/shape/offset per tensor), then raw little-endian float64 blobs.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- training ------------------------------------------------------------

struct TrainResult {
    Checkpoint checkpoint;
    EvalReport report;
};

struct TrainOptions {
    // Number of folds trained concurrently; results do not depend on it.
    std::size_t threads = 1;
    // Progress callback (fold, epoch, train loss, val accuracy); may run on worker threads.
    std::function<void(std::size_t, std::size_t, double, double)> on_epoch;
};

// Trains one model per fold with single-slide Adam steps, keeps the epoch with
// the best validation accuracy (early stop after `patience` epochs without
// improvement) and reports test metrics. Deterministic given config.seed.
TrainResult train(const Dataset& dataset, const ModelConfig& config, const TrainOptions& options = {});

// Test-split metrics of every fold model in the checkpoint.
EvalReport evaluate(const Checkpoint& ckpt, const Dataset& dataset);

// Mean cross-entropy of `params` over the given slides.
double mean_loss(const ParamStore& params, const std::vector<PreparedSlide>& slides,
                 const std::vector<std::size_t>& labels, const ModelConfig& config);

// One Adam step per slide, in the given order. Returns the mean training loss.
double train_epoch(ParamStore& params, AdamState& state, const std::vector<const PreparedSlide*>& slides,
                   const std::vector<std::size_t>& labels, const ModelConfig& config);

} // namespace goat
