#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xilab/datasets.hpp"
#include "xilab/losses.hpp"
#include "xilab/tensor.hpp"

namespace xilab::model {

using autodiff::Tensor;

/// conv(1->c1,5) - relu - pool2 - conv(c1->c2,5) - relu - pool2 -
/// flatten(c2*16) - dense(hidden) - relu - dense(10).
/// Parameters are leaf tensors; copies share storage, use clone() for an
/// independent model.
struct CnnModel {
    int conv1_channels = 20;
    int conv2_channels = 50;
    int hidden = 500;

    Tensor conv1_w, conv1_b;
    Tensor conv2_w, conv2_b;
    Tensor fc1_w, fc1_b;
    Tensor fc2_w, fc2_b;

    Tensor forward(const Tensor& images) const;

    struct Activations {
        Tensor logits;
        Tensor conv2_relu; // post-ReLU conv2 feature maps, 8x8 spatial
    };
    Activations forward_with_activations(const Tensor& images) const;

    std::vector<Tensor> parameters() const;
    std::vector<std::string> parameter_names() const;
    CnnModel clone() const;

    int flatten_width() const { return conv2_channels * 16; }
};

/// Fan-in-scaled uniform weights, zero biases; deterministic in the seed.
CnnModel build_cnn(std::uint64_t seed, int conv1_channels = 20, int conv2_channels = 50,
                   int hidden = 500);

struct TrainConfig {
    int epochs = 50;
    int batch_size = 256;
    double lr = 0.001;
    std::uint64_t seed = 0;
    std::vector<losses::XilLossSpec> xil_specs;
    int subset = 0; // 0 = use the whole training set

    /// 10k-sample, 10-epoch preset: the confounder effect at a fraction of
    /// the full-run cost.
    static TrainConfig desk_scale();
    void validate() const;
};

struct EpochStats {
    double pred_loss = 0.0;
    std::vector<double> xil_losses;
    double train_acc = 0.0;
};

struct TrainResult {
    CnnModel model;
    std::vector<EpochStats> history;
};

/// Minimize pred + sum_i lambda_i * xil_i over shuffled mini-batches with
/// Adam. The explanation losses apply from the first batch on. The input
/// model is not mutated.
TrainResult train(const CnnModel& m, const datasets::Dataset& train_set, const TrainConfig& cfg);

/// Argmax-of-logits accuracy; ties break toward the lower class index.
double evaluate(const CnnModel& m, const datasets::Dataset& data);

// versioned checkpoint: magic, architecture, shape-tagged float64 blobs
void save_checkpoint(const CnnModel& m, const std::string& path);
CnnModel load_checkpoint(const std::string& path);

void write_history_csv(const std::vector<EpochStats>& history,
                       std::span<const losses::XilLossSpec> specs, const std::string& path);

// batch assembly from dataset rows
Tensor image_batch(const datasets::Dataset& data, std::span<const std::size_t> indices);
Tensor confounder_mask_batch(const datasets::Dataset& data, std::span<const std::size_t> indices);
Tensor reward_mask_batch(const datasets::Dataset& data, std::span<const std::size_t> indices);
std::vector<int> label_batch(const datasets::Dataset& data, std::span<const std::size_t> indices);

} // namespace xilab::model
