#include "tripletflow/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "tripletflow/error.hpp"

namespace tripletflow {

namespace {

void check_config(const EncoderConfig& cfg) {
    if (cfg.input_dim < 1 || cfg.hidden_width < 1 || cfg.depth < 1 || cfg.output_dim < 1)
        throw std::invalid_argument("encoder config: all dimensions must be at least 1");
    if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0))
        throw std::invalid_argument("encoder config: dropout_p must lie in [0,1)");
}

// out(i,o) = sum_k in(i,k) * w(o,k) + b(o)
Matrix affine(const Matrix& in, const Matrix& w, const std::vector<double>& b) {
    Matrix out(in.rows, w.rows);
    for (std::size_t i = 0; i < in.rows; ++i) {
        const double* src = in.row(i);
        double* dst = out.row(i);
        for (std::size_t o = 0; o < w.rows; ++o) {
            const double* wr = w.row(o);
            double acc = b[o];
            for (std::size_t k = 0; k < w.cols; ++k) acc += src[k] * wr[k];
            dst[o] = acc;
        }
    }
    return out;
}

} // namespace

EncoderParams init_encoder(const EncoderConfig& cfg, Rng& rng) {
    check_config(cfg);
    EncoderParams params;
    params.config = cfg;
    std::size_t in_dim = cfg.input_dim;
    for (std::size_t layer = 0; layer <= cfg.depth; ++layer) {
        const std::size_t out_dim = layer < cfg.depth ? cfg.hidden_width : cfg.output_dim;
        Matrix w(out_dim, in_dim);
        const double bound = std::sqrt(6.0 / static_cast<double>(in_dim));
        for (double& v : w.data) v = rng.uniform(-bound, bound);
        params.weights.push_back(std::move(w));
        params.biases.emplace_back(out_dim, 0.0);
        in_dim = out_dim;
    }
    return params;
}

Matrix forward(const EncoderParams& params, const Matrix& x, bool train_mode, Rng* rng,
               ForwardTrace* trace) {
    const EncoderConfig& cfg = params.config;
    if (x.cols != cfg.input_dim) throw std::invalid_argument("forward: input width mismatch");
    if (!x.all_finite()) throw NumericError("forward: non-finite input");
    const bool use_dropout = train_mode && cfg.dropout_p > 0.0;
    if (use_dropout && rng == nullptr)
        throw std::invalid_argument("forward: dropout requires an rng in train mode");

    if (trace) {
        trace->inputs.clear();
        trace->pre_activations.clear();
        trace->dropout_masks.clear();
    }

    Matrix activ = x;
    for (std::size_t layer = 0; layer < cfg.depth; ++layer) {
        if (trace) trace->inputs.push_back(activ);
        Matrix pre = affine(activ, params.weights[layer], params.biases[layer]);
        Matrix next(pre.rows, pre.cols);
        for (std::size_t idx = 0; idx < pre.data.size(); ++idx)
            next.data[idx] = pre.data[idx] > 0.0 ? pre.data[idx] : 0.0;
        Matrix mask;
        if (use_dropout) {
            mask = Matrix(pre.rows, pre.cols);
            const double scale = 1.0 / (1.0 - cfg.dropout_p);
            for (std::size_t idx = 0; idx < mask.data.size(); ++idx) {
                mask.data[idx] = rng->uniform() < cfg.dropout_p ? 0.0 : scale;
                next.data[idx] *= mask.data[idx];
            }
        }
        if (trace) {
            trace->pre_activations.push_back(std::move(pre));
            trace->dropout_masks.push_back(std::move(mask));
        }
        activ = std::move(next);
    }
    if (trace) trace->inputs.push_back(activ);
    Matrix z = affine(activ, params.weights[cfg.depth], params.biases[cfg.depth]);
    if (!z.all_finite()) throw NumericError("forward: non-finite embedding");
    return z;
}

Gradients backward(const EncoderParams& params, const ForwardTrace& trace,
                   const Matrix& dloss_dz) {
    const EncoderConfig& cfg = params.config;
    if (trace.inputs.size() != cfg.depth + 1)
        throw std::invalid_argument("backward: trace does not match encoder depth");
    if (dloss_dz.cols != cfg.output_dim || dloss_dz.rows != trace.inputs[0].rows)
        throw std::invalid_argument("backward: gradient shape mismatch");

    Gradients grads;
    grads.weights.resize(cfg.depth + 1);
    grads.biases.resize(cfg.depth + 1);

    Matrix delta = dloss_dz;
    for (std::size_t layer = cfg.depth + 1; layer-- > 0;) {
        const Matrix& input = trace.inputs[layer];
        const Matrix& w = params.weights[layer];

        Matrix dw(w.rows, w.cols);
        std::vector<double> db(w.rows, 0.0);
        for (std::size_t i = 0; i < delta.rows; ++i) {
            const double* drow = delta.row(i);
            const double* irow = input.row(i);
            for (std::size_t o = 0; o < w.rows; ++o) {
                const double d = drow[o];
                if (d == 0.0) continue;
                db[o] += d;
                double* dwrow = dw.row(o);
                for (std::size_t k = 0; k < w.cols; ++k) dwrow[k] += d * irow[k];
            }
        }
        grads.weights[layer] = std::move(dw);
        grads.biases[layer] = std::move(db);

        if (layer == 0) break;

        // propagate to the previous layer: through the affine, then the
        // dropout mask and the relu gate cached by forward
        Matrix prev(delta.rows, w.cols);
        for (std::size_t i = 0; i < delta.rows; ++i) {
            const double* drow = delta.row(i);
            double* prow = prev.row(i);
            for (std::size_t o = 0; o < w.rows; ++o) {
                const double d = drow[o];
                if (d == 0.0) continue;
                const double* wr = w.row(o);
                for (std::size_t k = 0; k < w.cols; ++k) prow[k] += d * wr[k];
            }
        }
        const Matrix& pre = trace.pre_activations[layer - 1];
        const Matrix& mask = trace.dropout_masks[layer - 1];
        for (std::size_t idx = 0; idx < prev.data.size(); ++idx) {
            double g = prev.data[idx];
            if (!mask.data.empty()) g *= mask.data[idx];
            prev.data[idx] = pre.data[idx] > 0.0 ? g : 0.0;
        }
        delta = std::move(prev);
    }
    return grads;
}

double cosine_lr(double lr0, std::size_t step, std::size_t total_steps) {
    if (step > total_steps) throw std::invalid_argument("cosine_lr: step exceeds total_steps");
    if (total_steps == 0) return lr0;
    const double phase =
        std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
    const double lr = 0.5 * lr0 * (1.0 + std::cos(phase));
    return lr > 0.0 ? lr : 0.0;
}

AdamW::AdamW(std::vector<std::size_t> sizes, OptimConfig cfg) : config_(cfg) {
    first_moment_.reserve(sizes.size());
    second_moment_.reserve(sizes.size());
    for (std::size_t n : sizes) {
        first_moment_.emplace_back(n, 0.0);
        second_moment_.emplace_back(n, 0.0);
    }
}

double AdamW::current_lr() const {
    return cosine_lr(config_.learning_rate, step_, config_.total_steps);
}

void AdamW::step(const std::vector<double*>& params, const std::vector<const double*>& grads) {
    if (step_ >= config_.total_steps)
        throw std::invalid_argument("AdamW::step: all scheduled steps already taken");
    if (params.size() != first_moment_.size() || grads.size() != first_moment_.size())
        throw std::invalid_argument("AdamW::step: block count mismatch");
    const double lr = current_lr();
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t b = 0; b < params.size(); ++b) {
        double* p = params[b];
        const double* g = grads[b];
        auto& m = first_moment_[b];
        auto& v = second_moment_[b];
        for (std::size_t i = 0; i < m.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            const double update = m_hat / (std::sqrt(v_hat) + config_.epsilon);
            p[i] -= lr * config_.weight_decay * p[i]; // decoupled decay
            p[i] -= lr * update;
        }
    }
}

std::vector<std::size_t> block_sizes(const EncoderConfig& cfg) {
    std::vector<std::size_t> sizes;
    std::size_t in_dim = cfg.input_dim;
    for (std::size_t layer = 0; layer <= cfg.depth; ++layer) {
        const std::size_t out_dim = layer < cfg.depth ? cfg.hidden_width : cfg.output_dim;
        sizes.push_back(out_dim * in_dim);
        sizes.push_back(out_dim);
        in_dim = out_dim;
    }
    return sizes;
}

std::vector<double*> param_blocks(EncoderParams& params) {
    std::vector<double*> blocks;
    for (std::size_t layer = 0; layer < params.weights.size(); ++layer) {
        blocks.push_back(params.weights[layer].data.data());
        blocks.push_back(params.biases[layer].data());
    }
    return blocks;
}

std::vector<const double*> grad_blocks(const Gradients& grads) {
    std::vector<const double*> blocks;
    for (std::size_t layer = 0; layer < grads.weights.size(); ++layer) {
        blocks.push_back(grads.weights[layer].data.data());
        blocks.push_back(grads.biases[layer].data());
    }
    return blocks;
}

XentResult softmax_xent(const Matrix& logits, const std::vector<int>& labels) {
    if (logits.rows != labels.size())
        throw std::invalid_argument("softmax_xent: batch size mismatch");
    const std::size_t batch = logits.rows;
    const std::size_t classes = logits.cols;
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw std::invalid_argument("softmax_xent: label outside logit range");

    XentResult result;
    result.dlogits = Matrix(batch, classes);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const double* row = logits.row(i);
        double* drow = result.dlogits.row(i);
        double max_logit = row[0];
        for (std::size_t c = 1; c < classes; ++c) max_logit = std::max(max_logit, row[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) sum += std::exp(row[c] - max_logit);
        const double log_sum = std::log(sum);
        const auto y = static_cast<std::size_t>(labels[i]);
        loss += -(row[y] - max_logit - log_sum);
        for (std::size_t c = 0; c < classes; ++c) {
            const double p = std::exp(row[c] - max_logit) / sum;
            drow[c] = (p - (c == y ? 1.0 : 0.0)) / static_cast<double>(batch);
        }
    }
    result.loss = loss / static_cast<double>(batch);
    return result;
}

} // namespace tripletflow
