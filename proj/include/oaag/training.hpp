#ifndef OAAG_TRAINING_HPP
#define OAAG_TRAINING_HPP

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "oaag/generator.hpp"
#include "oaag/model.hpp"
#include "oaag/tensor.hpp"

namespace oaag {

struct TrainConfig {
    double learning_rate = 0.15;
    double accumulator_init = 0.1;
    double dropout = 0.5;
    int batch_size = 32;
    int epochs = 20;
    double lambda = 5.0;
    double grad_clip_norm = 2.0;
    int vocab_cap = 50000;
    int emb_dim = 300;
    int d_h = 256;
    int d_a = 256;
    int num_reviews = 10;
    int max_answer_len = 100;
    std::uint64_t seed = 7;
    FusionMode mode = FusionMode::Static;
    std::string precision = "f32";
    bool deterministic_log = false;  // write wall_time 0.0 for reproducible logs

    void validate() const;
    ModelConfig model_config(int vocab_size) const;
};

Precision precision_from_string(const std::string& s);

// Cross-entropy of the opinion head, summed over the batch. A zero
// probability at the label is clamped to 1e-12 and counted.
Tensor opinion_loss(const std::vector<Tensor>& p_os, const std::vector<Opinion>& labels,
                    long* clamp_events = nullptr);

// Teacher-forced negative log likelihood: per sample the mean over its steps,
// then the mean over the batch.
Tensor generation_loss(const std::vector<std::vector<Tensor>>& step_ps,
                       const std::vector<std::vector<int>>& targets,
                       long* clamp_events = nullptr);

Tensor joint_loss(const Tensor& l_om, const Tensor& l_ag, double lambda);

// Euclidean norm over every parameter gradient.
double global_grad_norm(const ModelParams& params);
// Scales all gradients by max_norm/norm when the global norm exceeds it;
// returns the pre-clip norm.
double clip_gradients(ModelParams& params, double max_norm);

struct AdagradState {
    std::map<std::string, std::vector<double>> acc;
};

AdagradState make_adagrad_state(const ModelParams& params, double accumulator_init);

// acc += g²; θ −= lr·g/(√acc + eps), honoring the active precision mode.
// A non-finite gradient anywhere skips the whole update and counts it.
bool adagrad_step(ModelParams& params, AdagradState& state, double lr, double eps = 1e-10,
                  long* skipped = nullptr);

struct EpochStats {
    int epoch = 0;
    double l_om = 0.0;
    double l_ag = 0.0;
    double l = 0.0;
    long clamp_events = 0;
    long skipped_batches = 0;
    long fusion_fallbacks = 0;
    double wall_time_s = 0.0;
};

struct Checkpoint {
    TrainConfig config;
    ModelConfig model;
    ModelParams params;
    AdagradState opt;
    int epoch = 0;
    std::vector<EpochStats> history;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

void append_train_log(const std::string& path, const EpochStats& stats);

using EpochCallback = std::function<void(const Checkpoint&, const EpochStats&)>;

// Full training loop: seeded shuffle, teacher-forced forward on both heads,
// joint loss, clip, accumulator update; invokes on_epoch after every epoch.
// Pass resume to continue a run from its checkpoint.
Checkpoint train(const std::vector<QASample>& dataset, int vocab_size,
                 const TrainConfig& cfg, const EpochCallback& on_epoch = nullptr,
                 const Checkpoint* resume = nullptr);

struct DatasetLosses {
    double l_om = 0.0;
    double l_ag = 0.0;
    double opinion_accuracy = 0.0;
};

// Dropout-free losses and classifier accuracy over a dataset.
DatasetLosses evaluate_losses(const std::vector<QASample>& dataset, const ModelParams& params,
                              FusionMode mode);

}  // namespace oaag

#endif
