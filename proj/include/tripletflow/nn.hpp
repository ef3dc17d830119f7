#pragma once

#include <cstddef>
#include <vector>

#include "tripletflow/matrix.hpp"
#include "tripletflow/rng.hpp"

namespace tripletflow {

/// Feed-forward encoder layout: depth x (affine -> relu -> dropout)
/// followed by a final affine onto the embedding space.
struct EncoderConfig {
    std::size_t input_dim = 0;
    std::size_t hidden_width = 0;
    std::size_t depth = 1;
    std::size_t output_dim = 0;
    double dropout_p = 0.0; // in [0,1)
};

struct EncoderParams {
    EncoderConfig config;
    std::vector<Matrix> weights;             // weights[l] is (out x in)
    std::vector<std::vector<double>> biases; // biases[l] has out entries
};

// Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases
EncoderParams init_encoder(const EncoderConfig& cfg, Rng& rng);

/// Cached per-batch state needed for the exact backward pass.
struct ForwardTrace {
    std::vector<Matrix> inputs;          // input to each affine, depth+1 entries
    std::vector<Matrix> pre_activations; // hidden pre-activations, depth entries
    std::vector<Matrix> dropout_masks;   // inverted-dropout multipliers, depth entries
};

/// Embeds a batch. In train mode inverted dropout is applied and the trace
/// is filled; eval mode (train_mode=false) is deterministic and mask-free.
/// rng may be null when train_mode is false or dropout_p == 0.
Matrix forward(const EncoderParams& params, const Matrix& x, bool train_mode, Rng* rng,
               ForwardTrace* trace);

struct Gradients {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
};

// exact reverse-mode pass; trace must come from the matching forward call
Gradients backward(const EncoderParams& params, const ForwardTrace& trace,
                   const Matrix& dloss_dz);

// lr_t = 0.5 * lr0 * (1 + cos(pi * step / total_steps))
double cosine_lr(double lr0, std::size_t step, std::size_t total_steps);

struct OptimConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    std::size_t total_steps = 1;
};

/// AdamW over a fixed list of parameter blocks. Weight decay is decoupled
/// (applied directly to the parameters, not through the moments) and the
/// learning rate follows the cosine schedule.
class AdamW {
public:
    AdamW(std::vector<std::size_t> block_sizes, OptimConfig cfg);

    // params[i]/grads[i] must each hold block_sizes[i] doubles
    void step(const std::vector<double*>& params, const std::vector<const double*>& grads);

    double current_lr() const; // rate the next step will use
    std::size_t steps_taken() const { return step_; }
    const OptimConfig& config() const { return config_; }

private:
    OptimConfig config_;
    std::size_t step_ = 0;
    std::vector<std::vector<double>> first_moment_;
    std::vector<std::vector<double>> second_moment_;
};

// parameter/gradient blocks in optimizer order (weights then bias per layer)
std::vector<std::size_t> block_sizes(const EncoderConfig& cfg);
std::vector<double*> param_blocks(EncoderParams& params);
std::vector<const double*> grad_blocks(const Gradients& grads);

struct XentResult {
    double loss = 0.0;
    Matrix dlogits; // (softmax - onehot) / batch
};

// mean negative log-likelihood with log-sum-exp stabilisation
XentResult softmax_xent(const Matrix& logits, const std::vector<int>& labels);

} // namespace tripletflow
