#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vcsfl/errors.hpp"
#include "vcsfl/rng.hpp"

namespace vcsfl {

// A labelled feature matrix.  Features are row-major, size() x input_dim,
// with every value finite.  noise_sigma records the Gaussian feature-noise
// level that has been applied (0 for clean data).
struct Dataset {
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    std::vector<double> features;
    std::vector<std::uint32_t> labels;
    double noise_sigma = 0.0;

    std::size_t size() const { return labels.size(); }
    const double* row(std::size_t i) const { return features.data() + i * input_dim; }

    // Throws FormatError if the invariants above do not hold.
    void validate() const;
};

// Reads an IDX image/label file pair (big-endian, magics 0x00000803 and
// 0x00000801).  Pixels are scaled to [0,1].  If target_dim > 0 the images
// are downsampled to sqrt(target_dim) x sqrt(target_dim) by average
// pooling; target_dim must then be a perfect square.  Bad magic numbers,
// image/label count mismatch, or truncation raise FormatError.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t target_dim = 0);

// Deterministic synthetic classification data: n samples over C Gaussian
// blobs whose means are distinct unit basis vectors (unit-separated), with
// per-coordinate standard deviation kSynthBlobSigma.  Labels are balanced
// round-robin.
inline constexpr double kSynthBlobSigma = 0.25;
Dataset synth_dataset(std::size_t n, std::size_t input_dim, std::size_t num_classes,
                      std::uint64_t seed);

// Returns a copy of ds with N(0, sigma^2) noise added to every feature and
// the result clipped back to the original feature range [min, max].
// sigma == 0 returns a bitwise-identical copy.
Dataset add_gaussian_noise(const Dataset& ds, double sigma, std::uint64_t seed);

// One-hidden-layer perceptron: logits = W2 * tanh(W1 x + b1) + b2.
// hidden_dim == 0 selects the linear special case logits = W1 x + b1.
struct ModelShape {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    std::size_t num_classes = 0;

    std::size_t param_count() const {
        if (hidden_dim == 0) return num_classes * (input_dim + 1);
        return hidden_dim * (input_dim + 1) + num_classes * (hidden_dim + 1);
    }
    bool operator==(const ModelShape&) const = default;
};

// Parameters in one flat vector laid out [W1 row-major, b1, W2 row-major,
// b2] (linear mode: [W1, b1]).  The flat view is what gets quantized,
// hashed, and aggregated.
struct ModelParams {
    ModelShape shape;
    std::vector<double> flat;

    std::size_t size() const { return flat.size(); }
};

ModelParams zero_model(const ModelShape& shape);
// Gaussian init with standard deviation `scale` on every parameter.
ModelParams random_model(const ModelShape& shape, double scale, std::uint64_t seed);

// Hyper-parameters for local SGD and the combined loss.
struct TrainConfig {
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    double lr = 0.05;
    double sce_alpha = 0.1;   // weight of cross-entropy
    double sce_beta = 1.0;    // weight of reverse cross-entropy
    double log_clamp = -4.0;  // stands in for log 0 in the reverse term
    std::uint64_t seed = 0;

    // lr > 0, batch_size >= 1, alpha/beta >= 0 and not both zero,
    // log_clamp < 0; violations raise ConfigError.
    void validate() const;
};

// Loss value plus gradient with respect to the logits.
struct SceLoss {
    double loss = 0.0;
    std::vector<double> grad_logits;
};

// Symmetric cross-entropy alpha*CE + beta*RCE for one sample, where RCE
// treats the one-hot target as the "prediction" and substitutes log_clamp
// for log 0.  The gradient is analytic.
SceLoss sce_loss(std::span<const double> logits, std::uint32_t label,
                 const TrainConfig& cfg);

// Writes the logits for sample x into `logits` (size num_classes); scratch
// must hold hidden_dim values (may be empty in linear mode).
void forward_logits(const ModelParams& m, const double* x,
                    std::span<double> hidden_scratch, std::span<double> logits);

// Mini-batch SGD from `start` (never mutated): per-epoch shuffle driven by
// cfg.seed, batch-averaged gradients, fixed learning rate.  A non-finite
// loss raises DivergenceError carrying the epoch and batch indices.
// epochs == 0 returns `start` unchanged.
ModelParams local_train(const ModelParams& start, const Dataset& data,
                        const TrainConfig& cfg);

// Fraction of samples whose argmax logit matches the label; ties resolve
// to the lowest class index.  Shape/dataset mismatch raises
// DimensionMismatch.
double evaluate_accuracy(const ModelParams& m, const Dataset& data);

// Plain double-precision cosine similarity (reference metric).
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace vcsfl
