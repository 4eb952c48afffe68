#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lossforge/evolve.hpp"
#include "lossforge/graph.hpp"

namespace lossforge::surrogate {

using graph::LossGraph;
using Matrix = Eigen::MatrixXd;

struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Dataset {
    Matrix features;  // n x d
    Matrix labels;    // n x K, one-hot rows
    std::vector<int> train_idx;
    std::vector<int> val_idx;

    int num_classes() const { return static_cast<int>(labels.cols()); }
    int dim() const { return static_cast<int>(features.cols()); }
    int size() const { return static_cast<int>(features.rows()); }
};

enum class SyntheticKind { Blobs, Spirals };

/// Deterministic labeled dataset with a stratified 90/10 train/val split.
Dataset generate_synthetic(SyntheticKind kind, int n, int num_classes, int dim,
                           double noise, std::uint64_t seed,
                           double val_fraction = 0.10);

/// CSV: numeric columns, last column = integer class label; a non-numeric
/// first line is treated as a header.
Dataset load_csv(const std::string& path);
std::string dataset_csv(const Dataset& ds);

/// Standard big-endian IDX image/label pair; pixels scaled to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

struct NetworkSpec {
    int input_dim = 2;
    std::vector<int> hidden = {32, 32};
    int num_classes = 3;
    std::uint64_t init_seed = 0;
};

struct NetworkState {
    std::vector<Matrix> weights;  // layer l: out x in
    std::vector<Eigen::VectorXd> biases;
};

NetworkState init_network(const NetworkSpec& spec);

/// Softmax probabilities for a batch (rows = examples).
Matrix forward(const NetworkState& net, const Matrix& batch);

struct BackpropResult {
    double loss = 0.0;
    std::vector<Matrix> grad_w;
    std::vector<Eigen::VectorXd> grad_b;
    Matrix probs;
};

/// Scalar loss of the batch under the candidate graph and its gradient
/// with respect to every weight and bias.
BackpropResult backprop(const NetworkState& net, const Matrix& batch,
                        const Matrix& targets, const LossGraph& g);

struct TrainConfig {
    int steps = 2000;
    int batch_size = 32;
    double peak_lr = 0.1;
    int warmup_steps = 100;
    double momentum = 0.9;
    bool adam = false;
    std::uint64_t seed = 0;
    int eval_interval = 50;
    double proxy_threshold = 0.37;
    int proxy_steps = 300;
    double main_threshold = 0.25;
    int main_check_step = 500;
};

/// Linear warmup from 0 to peak, then cosine decay reaching 0 exactly at
/// the last step.
double learning_rate(const TrainConfig& cfg, int step);

enum class StopReason { Completed, EarlyStopMain };

struct CurvePoint {
    int step;
    double train_acc;  // accuracy on the current minibatch
    double val_acc;
    double loss;
};

struct TrainRun {
    double best_val_acc = 0.0;
    double final_train_acc = 0.0;  // full train set, at the last executed step
    std::vector<CurvePoint> curve;
    StopReason stop_reason = StopReason::Completed;
};

/// Minibatch SGD where the output-layer gradient comes from the candidate
/// loss graph. Applies the 25%-at-checkpoint early stop; the best
/// validation accuracy is returned regardless. Non-finite values stop the
/// run soft (recorded, not thrown).
TrainRun train(const NetworkSpec& spec, const Dataset& ds, const LossGraph& g,
               const TrainConfig& cfg);

/// First early stop: a short cheap run; pass iff final train accuracy
/// reaches proxy_threshold.
bool proxy_screen(const LossGraph& g, const Dataset& ds, const TrainConfig& cfg);

/// proxy_screen then train; proxy failure maps to the failed marker.
evolve::FitnessFn make_fitness(const Dataset& ds, const NetworkSpec& spec,
                               const TrainConfig& cfg);

double accuracy(const NetworkState& net, const Dataset& ds,
                const std::vector<int>& idx);

std::string curves_csv(const TrainRun& run);

}  // namespace lossforge::surrogate
