#include "vcsfl/learning.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace vcsfl {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

// Big-endian u32 reader over a raw byte buffer.
std::uint32_t take_u32be(const std::vector<std::uint8_t>& b, std::size_t& off,
                         const char* what) {
    if (off + 4 > b.size()) throw FormatError(std::string("truncated idx header: ") + what);
    std::uint32_t v = (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
                      (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
    off += 4;
    return v;
}

}  // namespace

void Dataset::validate() const {
    if (input_dim == 0) throw FormatError("dataset input_dim is zero");
    if (num_classes == 0) throw FormatError("dataset num_classes is zero");
    if (features.size() != labels.size() * input_dim)
        throw FormatError("dataset feature/label count mismatch");
    for (double v : features)
        if (!std::isfinite(v)) throw FormatError("dataset contains non-finite feature");
    for (std::uint32_t l : labels)
        if (l >= num_classes) throw FormatError("dataset label out of range");
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t target_dim) {
    auto img = read_file(images_path);
    std::size_t off = 0;
    std::uint32_t magic = take_u32be(img, off, "image magic");
    if (magic != kIdxImagesMagic) throw FormatError("bad idx image magic");
    std::uint32_t n = take_u32be(img, off, "image count");
    std::uint32_t rows = take_u32be(img, off, "rows");
    std::uint32_t cols = take_u32be(img, off, "cols");
    if (rows == 0 || cols == 0) throw FormatError("idx image with zero dimension");
    std::size_t need = off + std::size_t(n) * rows * cols;
    if (img.size() < need) throw FormatError("truncated idx image data");
    if (img.size() > need) throw FormatError("trailing bytes after idx image data");

    auto lab = read_file(labels_path);
    std::size_t loff = 0;
    std::uint32_t lmagic = take_u32be(lab, loff, "label magic");
    if (lmagic != kIdxLabelsMagic) throw FormatError("bad idx label magic");
    std::uint32_t ln = take_u32be(lab, loff, "label count");
    if (ln != n) throw FormatError("idx image/label count mismatch");
    if (lab.size() < loff + ln) throw FormatError("truncated idx label data");
    if (lab.size() > loff + ln) throw FormatError("trailing bytes after idx label data");

    std::size_t out_rows = rows;
    std::size_t out_cols = cols;
    if (target_dim > 0) {
        std::size_t s = static_cast<std::size_t>(std::llround(std::sqrt(double(target_dim))));
        if (s * s != target_dim)
            throw ConfigError("idx downsample target_dim must be a perfect square");
        if (s > rows || s > cols)
            throw ConfigError("idx downsample target larger than native image");
        out_rows = out_cols = s;
    }

    Dataset ds;
    ds.input_dim = out_rows * out_cols;
    ds.features.resize(std::size_t(n) * ds.input_dim);
    ds.labels.resize(n);

    std::uint32_t max_label = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint8_t* px = img.data() + off + std::size_t(i) * rows * cols;
        double* dst = ds.features.data() + std::size_t(i) * ds.input_dim;
        for (std::size_t r = 0; r < out_rows; ++r) {
            std::size_t r0 = r * rows / out_rows, r1 = (r + 1) * rows / out_rows;
            for (std::size_t c = 0; c < out_cols; ++c) {
                std::size_t c0 = c * cols / out_cols, c1 = (c + 1) * cols / out_cols;
                double sum = 0.0;
                for (std::size_t rr = r0; rr < r1; ++rr)
                    for (std::size_t cc = c0; cc < c1; ++cc)
                        sum += px[rr * cols + cc];
                dst[r * out_cols + c] = sum / (255.0 * double((r1 - r0) * (c1 - c0)));
            }
        }
        ds.labels[i] = lab[loff + i];
        max_label = std::max(max_label, std::uint32_t(lab[loff + i]));
    }
    ds.num_classes = max_label + 1;
    ds.validate();
    return ds;
}

Dataset synth_dataset(std::size_t n, std::size_t input_dim, std::size_t num_classes,
                      std::uint64_t seed) {
    if (n == 0 || input_dim == 0 || num_classes == 0)
        throw ConfigError("synth_dataset needs n, input_dim, num_classes >= 1");
    Dataset ds;
    ds.input_dim = input_dim;
    ds.num_classes = num_classes;
    ds.features.resize(n * input_dim);
    ds.labels.resize(n);
    Rng rng(mix_seed(seed, 0x53594e5448ULL));  // "SYNTH"
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t label = std::uint32_t(i % num_classes);
        std::size_t mean_axis = label % input_dim;
        double* x = ds.features.data() + i * input_dim;
        for (std::size_t j = 0; j < input_dim; ++j)
            x[j] = (j == mean_axis ? 1.0 : 0.0) + kSynthBlobSigma * rng.normal();
        ds.labels[i] = label;
    }
    ds.validate();
    return ds;
}

Dataset add_gaussian_noise(const Dataset& ds, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0");
    Dataset out = ds;
    if (sigma == 0.0 || ds.features.empty()) return out;
    auto [lo_it, hi_it] = std::minmax_element(ds.features.begin(), ds.features.end());
    double lo = *lo_it, hi = *hi_it;
    Rng rng(mix_seed(seed, 0x4e4f495345ULL));  // "NOISE"
    for (double& v : out.features) v = std::clamp(v + sigma * rng.normal(), lo, hi);
    out.noise_sigma = std::hypot(ds.noise_sigma, sigma);
    return out;
}

ModelParams zero_model(const ModelShape& shape) {
    return ModelParams{shape, std::vector<double>(shape.param_count(), 0.0)};
}

ModelParams random_model(const ModelShape& shape, double scale, std::uint64_t seed) {
    ModelParams m{shape, std::vector<double>(shape.param_count())};
    Rng rng(mix_seed(seed, 0x494e4954ULL));  // "INIT"
    for (double& v : m.flat) v = scale * rng.normal();
    return m;
}

void forward_logits(const ModelParams& m, const double* x,
                    std::span<double> hidden_scratch, std::span<double> logits) {
    const ModelShape& s = m.shape;
    const double* p = m.flat.data();
    if (s.hidden_dim == 0) {
        const double* b = p + s.num_classes * s.input_dim;
        for (std::size_t c = 0; c < s.num_classes; ++c) {
            double acc = b[c];
            const double* w = p + c * s.input_dim;
            for (std::size_t i = 0; i < s.input_dim; ++i) acc += w[i] * x[i];
            logits[c] = acc;
        }
        return;
    }
    const double* w1 = p;
    const double* b1 = p + s.hidden_dim * s.input_dim;
    const double* w2 = b1 + s.hidden_dim;
    const double* b2 = w2 + s.num_classes * s.hidden_dim;
    for (std::size_t j = 0; j < s.hidden_dim; ++j) {
        double acc = b1[j];
        const double* w = w1 + j * s.input_dim;
        for (std::size_t i = 0; i < s.input_dim; ++i) acc += w[i] * x[i];
        hidden_scratch[j] = std::tanh(acc);
    }
    for (std::size_t c = 0; c < s.num_classes; ++c) {
        double acc = b2[c];
        const double* w = w2 + c * s.hidden_dim;
        for (std::size_t j = 0; j < s.hidden_dim; ++j) acc += w[j] * hidden_scratch[j];
        logits[c] = acc;
    }
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(sce_alpha >= 0.0) || !(sce_beta >= 0.0))
        throw ConfigError("sce_alpha/sce_beta must be >= 0");
    if (sce_alpha == 0.0 && sce_beta == 0.0)
        throw ConfigError("sce_alpha and sce_beta cannot both be zero");
    if (!(log_clamp < 0.0)) throw ConfigError("log_clamp must be < 0");
}

SceLoss sce_loss(std::span<const double> logits, std::uint32_t label,
                 const TrainConfig& cfg) {
    if (logits.empty() || label >= logits.size())
        throw DimensionMismatch("sce_loss label outside logit range");
    std::size_t c_count = logits.size();
    double zmax = *std::max_element(logits.begin(), logits.end());
    SceLoss out;
    out.grad_logits.resize(c_count);
    double zsum = 0.0;
    for (std::size_t c = 0; c < c_count; ++c) {
        out.grad_logits[c] = std::exp(logits[c] - zmax);  // holds p temporarily
        zsum += out.grad_logits[c];
    }
    for (double& p : out.grad_logits) p /= zsum;
    double p_label = out.grad_logits[label];

    // CE = -log p_y in the numerically stable log-sum-exp form; RCE treats
    // the one-hot target as the prediction, so every wrong-class log 0
    // becomes log_clamp: RCE = -log_clamp * (1 - p_y).
    double ce = zmax + std::log(zsum) - logits[label];
    double rce = -cfg.log_clamp * (1.0 - p_label);
    out.loss = cfg.sce_alpha * ce + cfg.sce_beta * rce;

    // d(CE)/dz = p - onehot; d(RCE)/dz = -log_clamp * p_y * (p - onehot),
    // so both share the (p - onehot) factor with a scalar multiplier.
    double mult = cfg.sce_alpha + cfg.sce_beta * (-cfg.log_clamp) * p_label;
    for (std::size_t c = 0; c < c_count; ++c) {
        double delta = (c == label) ? 1.0 : 0.0;
        out.grad_logits[c] = (out.grad_logits[c] - delta) * mult;
    }
    return out;
}

ModelParams local_train(const ModelParams& start, const Dataset& data,
                        const TrainConfig& cfg) {
    cfg.validate();
    data.validate();
    const ModelShape& s = start.shape;
    if (start.flat.size() != s.param_count())
        throw DimensionMismatch("model flat size disagrees with shape");
    if (data.input_dim != s.input_dim || data.num_classes != s.num_classes)
        throw DimensionMismatch("dataset shape disagrees with model shape");
    ModelParams m = start;
    if (cfg.epochs == 0) return m;

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> hidden(s.hidden_dim), logits(s.num_classes);
    std::vector<double> grad(m.flat.size());
    const bool linear = s.hidden_dim == 0;
    const double* p = m.flat.data();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);
        std::size_t batch = 0;
        for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size, ++batch) {
            std::size_t end = std::min(pos + cfg.batch_size, order.size());
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t k = pos; k < end; ++k) {
                const double* x = data.row(order[k]);
                forward_logits(m, x, hidden, logits);
                SceLoss l = sce_loss(logits, data.labels[order[k]], cfg);
                if (!std::isfinite(l.loss))
                    throw DivergenceError("training loss diverged", epoch, batch);
                const double* g = l.grad_logits.data();
                if (linear) {
                    double* gw = grad.data();
                    double* gb = grad.data() + s.num_classes * s.input_dim;
                    for (std::size_t c = 0; c < s.num_classes; ++c) {
                        for (std::size_t i2 = 0; i2 < s.input_dim; ++i2)
                            gw[c * s.input_dim + i2] += g[c] * x[i2];
                        gb[c] += g[c];
                    }
                } else {
                    const double* w2 = p + s.hidden_dim * (s.input_dim + 1);
                    double* gw1 = grad.data();
                    double* gb1 = grad.data() + s.hidden_dim * s.input_dim;
                    double* gw2 = gb1 + s.hidden_dim;
                    double* gb2 = gw2 + s.num_classes * s.hidden_dim;
                    for (std::size_t c = 0; c < s.num_classes; ++c) {
                        for (std::size_t j = 0; j < s.hidden_dim; ++j)
                            gw2[c * s.hidden_dim + j] += g[c] * hidden[j];
                        gb2[c] += g[c];
                    }
                    for (std::size_t j = 0; j < s.hidden_dim; ++j) {
                        double dh = 0.0;
                        for (std::size_t c = 0; c < s.num_classes; ++c)
                            dh += w2[c * s.hidden_dim + j] * g[c];
                        double dpre = dh * (1.0 - hidden[j] * hidden[j]);
                        for (std::size_t i2 = 0; i2 < s.input_dim; ++i2)
                            gw1[j * s.input_dim + i2] += dpre * x[i2];
                        gb1[j] += dpre;
                    }
                }
            }
            double step = cfg.lr / double(end - pos);
            for (std::size_t i2 = 0; i2 < m.flat.size(); ++i2)
                m.flat[i2] -= step * grad[i2];
        }
    }
    return m;
}

double evaluate_accuracy(const ModelParams& m, const Dataset& data) {
    data.validate();
    const ModelShape& s = m.shape;
    if (m.flat.size() != s.param_count())
        throw DimensionMismatch("model flat size disagrees with shape");
    if (data.input_dim != s.input_dim || data.num_classes != s.num_classes)
        throw DimensionMismatch("dataset shape disagrees with model shape");
    std::vector<double> hidden(s.hidden_dim), logits(s.num_classes);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        forward_logits(m, data.row(i), hidden, logits);
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.size(); ++c)
            if (logits[c] > logits[best]) best = c;  // strict: ties keep lowest index
        hits += (best == data.labels[i]);
    }
    return double(hits) / double(data.size());
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionMismatch("cosine over unequal lengths");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

}  // namespace vcsfl
