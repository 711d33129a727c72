#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "texstat/data.hpp"
#include "texstat/model.hpp"
#include "texstat/tensor.hpp"

namespace texstat {

struct TrainConfig {
    std::int64_t batch_size = 8;
    std::int64_t epochs = 200;
    double learning_rate = 2e-4;
    double weight_decay = 1e-8;
    double decay_factor = 0.5;
    std::int64_t decay_every_epochs = 170;
    bool augment = true;
    std::uint64_t seed = 0;
    std::string checkpoint_dir;

    void validate() const;
    // Consumes recognized keys from a parsed key=value map.
    void apply_kv(std::map<std::string, std::string>& kv);
};

// Adam moment buffers, one pair per parameter, in registration order.
template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState init(const std::vector<std::pair<std::string, Tensor<T>>>& params);
};

// Soft overlap loss: 1 - (2*sum(x*y)+s)/(sum(x^2)+sum(y^2)+s) with
// smoothing s = 1e-6; differentiable in pred_prob.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred_prob, const Tensor<T>& target);

// One optimizer step over params using their accumulated gradients.
// Weight decay is decoupled: params are scaled by (1 - lr*wd) before the
// bias-corrected moment update.
template <typename T>
void adam_step(AdamState<T>& state, std::vector<std::pair<std::string, Tensor<T>>>& params,
               double lr, double weight_decay);

// Stepwise decay: base * factor^(floor(epoch / every)).
double lr_schedule(std::int64_t epoch, const TrainConfig& config);

// Spatial flips of a [C x H x W] tensor; plain data transforms used by the
// augmentation path (no gradient flow — flipped inputs are fresh leaves).
template <typename T>
Tensor<T> flip_vertical(const Tensor<T>& t);  // reverses the H axis
template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& t);  // reverses the W axis

// Applies vertical then horizontal flips, each with probability 1/2,
// identically to image and mask.  The input is untouched; when neither
// flip fires the returned pair shares the input's storage.
template <typename T>
SamplePair<T> augment_pair(const SamplePair<T>& sample, std::mt19937_64& rng);

struct TraceRow {
    std::int64_t epoch = 0;
    double loss = 0;
    double lr = 0;
    double val_dice = 0;
};

struct TrainResult {
    std::vector<TraceRow> trace;
    double best_val_dice = -1.0;
    std::int64_t best_epoch = -1;
    std::string best_checkpoint;   // empty when checkpoint_dir unset
    std::string final_checkpoint;  // empty when checkpoint_dir unset
};

// Mean binary-overlap score of thresholded predictions over samples,
// used as the validation signal during training.
template <typename T>
double mean_binary_dice(const Model<T>& model, const std::vector<SamplePair<T>>& samples,
                        double threshold = 0.5);

// Full training loop: shuffled mini-batches, Dice loss on sigmoid
// probabilities, Adam with the stepwise schedule, optional flip
// augmentation.  Tracks the best validation score (falling back to the
// training set when val is empty) and, when checkpoint_dir is set, writes
// best.ckpt and final.ckpt.  Aborts with NumericError if the loss goes
// non-finite.  Progress lines go to *log when non-null.
template <typename T>
TrainResult train(Model<T>& model, const std::vector<SamplePair<T>>& train_samples,
                  const std::vector<SamplePair<T>>& val_samples, const TrainConfig& config,
                  std::ostream* log = nullptr);

std::string trace_to_csv(const std::vector<TraceRow>& trace);
std::vector<TraceRow> trace_from_csv(const std::string& text);

}  // namespace texstat
