#include "latentuq/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <string>

#include "latentuq/binio.hpp"
#include "latentuq/rng.hpp"

namespace luq::nn {

namespace {

constexpr std::uint32_t kModelVersion = 1;
constexpr char kModelMagic[5] = "LCN1";
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr std::size_t kEvalChunk = 512;

void apply_activation(Activation act, std::span<double> values) {
    if (act == Activation::relu)
        for (double& v : values) v = v > 0.0 ? v : 0.0;
}

int argmax_row(std::span<const double> row) {
    int best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
    return best;
}

double logsumexp(std::span<const double> v) {
    const double hi = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += std::exp(x - hi);
    return hi + std::log(sum);
}

/// Per-layer state of one batched pass. `acts` holds the value that flows to
/// the next layer (post-activation, post-mask); `masks` holds the inverted
/// dropout scale per element, empty for layers evaluated without masking.
struct BatchActs {
    std::vector<Matrix> acts;
    std::vector<Matrix> masks;
    Matrix logits;
};

void fill_mask_rows(Matrix& mask, double rate, std::span<std::mt19937_64> row_rngs) {
    const double scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < mask.rows(); ++i) {
        double* m = &mask(i, 0);
        for (std::size_t j = 0; j < mask.cols(); ++j)
            m[j] = rng::uniform01(row_rngs[i]) < rate ? 0.0 : scale;
    }
}

void fill_mask_shared(Matrix& mask, double rate, std::mt19937_64& gen) {
    const double scale = 1.0 / (1.0 - rate);
    for (double& m : mask.data()) m = rng::uniform01(gen) < rate ? 0.0 : scale;
}

/// row_rngs: one generator per batch row (stochastic mode), or empty span for
/// deterministic mode. shared_rng: training mode, masks drawn row-major from
/// one stream.
BatchActs forward_batch_impl(const Network& net, const Matrix& x,
                             std::span<std::mt19937_64> row_rngs,
                             std::mt19937_64* shared_rng) {
    if (x.cols() != net.input_dim)
        throw DimensionMismatch("forward: input dim " + std::to_string(x.cols()) +
                                ", network expects " + std::to_string(net.input_dim));
    BatchActs out;
    const std::size_t n_layers = net.layers.size();
    out.acts.reserve(n_layers);
    out.masks.resize(n_layers);

    const Matrix* input = &x;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const Layer& layer = net.layers[l];
        Matrix z = linalg::matmul_transb(*input, layer.weights);
        for (std::size_t i = 0; i < z.rows(); ++i) {
            double* zi = &z(i, 0);
            for (std::size_t j = 0; j < z.cols(); ++j) zi[j] += layer.biases[j];
        }
        const bool is_output = l + 1 == n_layers;
        if (is_output) {
            out.logits = std::move(z);
            break;
        }
        apply_activation(layer.spec.activation, {z.data().data(), z.data().size()});
        const bool stochastic = (!row_rngs.empty() || shared_rng) && layer.spec.dropout_rate > 0.0;
        if (stochastic) {
            Matrix mask(z.rows(), z.cols());
            if (shared_rng)
                fill_mask_shared(mask, layer.spec.dropout_rate, *shared_rng);
            else
                fill_mask_rows(mask, layer.spec.dropout_rate, row_rngs);
            for (std::size_t i = 0; i < z.data().size(); ++i) z.data()[i] *= mask.data()[i];
            out.masks[l] = std::move(mask);
        }
        out.acts.push_back(std::move(z));
        input = &out.acts.back();
    }
    return out;
}

Matrix one_row(std::span<const double> x) {
    Matrix m(1, x.size());
    std::copy(x.begin(), x.end(), m.row(0).begin());
    return m;
}

LatentTrace trace_from_batch(BatchActs&& acts) {
    LatentTrace t;
    t.hidden.reserve(acts.acts.size());
    for (const Matrix& a : acts.acts) {
        const auto row = a.row(0);
        t.hidden.emplace_back(row.begin(), row.end());
    }
    const auto lr = acts.logits.row(0);
    t.logits.assign(lr.begin(), lr.end());
    t.softmax = softmax(t.logits);
    return t;
}

/// Batched backward pass for softmax cross-entropy. `grad_logits` is
/// (softmax - onehot)/batch.
Gradients backward_batch(const Network& net, const Matrix& x, const BatchActs& acts,
                         Matrix grad_logits) {
    const std::size_t n_layers = net.layers.size();
    Gradients g;
    g.weights.resize(n_layers);
    g.biases.resize(n_layers);

    Matrix grad = std::move(grad_logits); // gradient wrt layer output pre-anything downstream
    for (std::size_t l = n_layers; l-- > 0;) {
        const Layer& layer = net.layers[l];
        const Matrix& input = l == 0 ? x : acts.acts[l - 1];
        g.weights[l] = linalg::matmul_transa(grad, input);
        Vector db(layer.spec.width, 0.0);
        for (std::size_t i = 0; i < grad.rows(); ++i) {
            const double* gi = &grad(i, 0);
            for (std::size_t j = 0; j < grad.cols(); ++j) db[j] += gi[j];
        }
        g.biases[l] = std::move(db);
        if (l == 0) break;

        Matrix upstream = linalg::matmul(grad, layer.weights);
        // through the previous layer's mask and activation
        const Layer& prev = net.layers[l - 1];
        const Matrix& prev_act = acts.acts[l - 1];
        const Matrix& mask = acts.masks[l - 1];
        if (mask.rows() > 0)
            for (std::size_t i = 0; i < upstream.data().size(); ++i)
                upstream.data()[i] *= mask.data()[i];
        if (prev.spec.activation == Activation::relu)
            for (std::size_t i = 0; i < upstream.data().size(); ++i)
                if (prev_act.data()[i] <= 0.0) upstream.data()[i] = 0.0;
        grad = std::move(upstream);
    }
    return g;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto row = logits.row(i);
        const double hi = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            p(i, j) = std::exp(row[j] - hi);
            sum += p(i, j);
        }
        for (std::size_t j = 0; j < row.size(); ++j) p(i, j) /= sum;
    }
    return p;
}

struct AdamState {
    std::vector<Matrix> m_w, v_w;
    std::vector<Vector> m_b, v_b;
    std::uint64_t step = 0;

    explicit AdamState(const Network& net) {
        for (const Layer& layer : net.layers) {
            m_w.emplace_back(layer.weights.rows(), layer.weights.cols());
            v_w.emplace_back(layer.weights.rows(), layer.weights.cols());
            m_b.emplace_back(layer.biases.size(), 0.0);
            v_b.emplace_back(layer.biases.size(), 0.0);
        }
    }

    void update(Network& net, const Gradients& g, double lr) {
        ++step;
        const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            auto apply = [&](double& param, double& m, double& v, double grad) {
                m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grad;
                v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * grad * grad;
                param -= lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps);
            };
            auto& w = net.layers[l].weights.data();
            const auto& gw = g.weights[l].data();
            for (std::size_t i = 0; i < w.size(); ++i)
                apply(w[i], m_w[l].data()[i], v_w[l].data()[i], gw[i]);
            auto& b = net.layers[l].biases;
            for (std::size_t i = 0; i < b.size(); ++i)
                apply(b[i], m_b[l][i], v_b[l][i], g.biases[l][i]);
        }
    }
};

template <typename Sink>
void serialize(const Network& net, Sink& sink) {
    sink.write_magic(kModelMagic);
    sink.write(kModelVersion);
    sink.write(net.seed);
    sink.write(static_cast<std::uint32_t>(net.input_dim));
    sink.write(static_cast<std::uint32_t>(net.layers.size()));
    for (const Layer& layer : net.layers) {
        sink.write(static_cast<std::uint32_t>(layer.spec.width));
        sink.write(static_cast<std::uint8_t>(layer.spec.activation));
        sink.write(layer.spec.dropout_rate);
        sink.write_bytes(layer.weights.data().data(), layer.weights.data().size() * sizeof(double));
        sink.write_bytes(layer.biases.data(), layer.biases.size() * sizeof(double));
    }
}

} // namespace

Network init_network(std::size_t input_dim, const std::vector<LayerSpec>& hidden,
                     std::size_t num_classes, std::uint64_t seed) {
    if (num_classes < 2) throw BadArchitecture("init_network: need at least 2 classes");
    if (hidden.empty()) throw BadArchitecture("init_network: need at least one hidden layer");
    if (input_dim < 1) throw BadArchitecture("init_network: input_dim must be >= 1");
    for (const LayerSpec& s : hidden) {
        if (s.width < 1) throw BadArchitecture("init_network: zero-width layer");
        if (!(s.dropout_rate >= 0.0 && s.dropout_rate < 1.0))
            throw BadArchitecture("init_network: dropout rate must lie in [0, 1)");
    }

    Network net;
    net.input_dim = input_dim;
    net.seed = seed;
    auto gen = rng::engine(seed);

    std::size_t fan_in = input_dim;
    std::vector<LayerSpec> specs = hidden;
    specs.push_back(LayerSpec{num_classes, Activation::identity, 0.0});
    for (const LayerSpec& spec : specs) {
        Layer layer;
        layer.spec = spec;
        layer.weights = Matrix(spec.width, fan_in);
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + spec.width));
        for (double& w : layer.weights.data()) w = rng::uniform(gen, -bound, bound);
        layer.biases.assign(spec.width, 0.0);
        net.layers.push_back(std::move(layer));
        fan_in = spec.width;
    }
    net.fingerprint = fingerprint(net);
    return net;
}

Vector softmax(std::span<const double> logits) {
    Vector p(logits.size());
    const double hi = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        p[j] = std::exp(logits[j] - hi);
        sum += p[j];
    }
    for (double& v : p) v /= sum;
    return p;
}

LatentTrace forward(const Network& net, std::span<const double> x) {
    return trace_from_batch(forward_batch_impl(net, one_row(x), {}, nullptr));
}

LatentTrace forward_dropout(const Network& net, std::span<const double> x, std::uint64_t seed) {
    std::mt19937_64 gen = rng::engine(seed);
    return trace_from_batch(forward_batch_impl(net, one_row(x), {&gen, 1}, nullptr));
}

int predict(const Network& net, std::span<const double> x) {
    const Matrix logits = forward_batch_impl(net, one_row(x), {}, nullptr).logits;
    return argmax_row(logits.row(0));
}

double cross_entropy_loss(const Network& net, std::span<const double> x, int label) {
    const Matrix logits = forward_batch_impl(net, one_row(x), {}, nullptr).logits;
    return logsumexp(logits.row(0)) - logits(0, static_cast<std::size_t>(label));
}

Gradients backprop(const Network& net, std::span<const double> x, int label) {
    const Matrix input = one_row(x);
    BatchActs acts = forward_batch_impl(net, input, {}, nullptr);
    Matrix grad = softmax_rows(acts.logits);
    grad(0, static_cast<std::size_t>(label)) -= 1.0;
    return backward_batch(net, input, acts, std::move(grad));
}

TrainHistory train(Network& net, const dataio::Dataset& data, const TrainConfig& hp) {
    if (data.size() == 0) throw EmptyDataset("train: empty dataset");
    if (hp.batch_size < 1) throw BadParameter("train: batch_size must be >= 1");
    const std::size_t k = net.num_classes();
    for (std::size_t i = 0; i < data.labels.size(); ++i)
        if (data.labels[i] < 0 || static_cast<std::size_t>(data.labels[i]) >= k)
            throw BadParameter("train: label " + std::to_string(data.labels[i]) +
                               " at sample " + std::to_string(i) + " outside 0.." +
                               std::to_string(k - 1));

    const std::size_t n = data.size();
    AdamState adam(net);
    auto gen = rng::engine(rng::substream(hp.seed, 0x747261696Eull));
    TrainHistory history;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < hp.max_epochs; ++epoch) {
        // Fisher-Yates; std::shuffle's sequence is implementation-defined
        for (std::size_t i = n - 1; i > 0; --i) {
            const std::size_t j = gen() % (i + 1);
            std::swap(order[i], order[j]);
        }

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += hp.batch_size) {
            const std::size_t b = std::min(hp.batch_size, n - start);
            Matrix xb(b, data.features.cols());
            std::vector<int> yb(b);
            for (std::size_t i = 0; i < b; ++i) {
                const auto src = data.features.row(order[start + i]);
                std::copy(src.begin(), src.end(), xb.row(i).begin());
                yb[i] = data.labels[order[start + i]];
            }

            BatchActs acts = forward_batch_impl(net, xb, {}, &gen);
            double batch_loss = 0.0;
            for (std::size_t i = 0; i < b; ++i)
                batch_loss += logsumexp(acts.logits.row(i)) -
                              acts.logits(i, static_cast<std::size_t>(yb[i]));
            batch_loss /= static_cast<double>(b);
            if (!std::isfinite(batch_loss)) throw Diverged("train: non-finite loss");
            loss_sum += batch_loss;
            ++batches;

            Matrix grad = softmax_rows(acts.logits);
            for (std::size_t i = 0; i < b; ++i)
                grad(i, static_cast<std::size_t>(yb[i])) -= 1.0;
            for (double& v : grad.data()) v /= static_cast<double>(b);
            const Gradients g = backward_batch(net, xb, acts, std::move(grad));
            adam.update(net, g, hp.learning_rate);
        }

        EpochStats stats;
        stats.loss = loss_sum / static_cast<double>(batches);
        stats.accuracy = accuracy(net, data);
        history.push_back(stats);
        if (stats.accuracy >= hp.early_stop_accuracy) break;
    }

    net.fingerprint = fingerprint(net);
    return history;
}

double accuracy(const Network& net, const dataio::Dataset& data) {
    if (data.size() == 0) throw EmptyDataset("accuracy: empty dataset");
    const std::vector<int> predicted = predict_batch(net, data.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        if (predicted[i] == data.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

BatchTrace forward_batch(const Network& net, const Matrix& x) {
    BatchActs acts = forward_batch_impl(net, x, {}, nullptr);
    return BatchTrace{std::move(acts.acts), std::move(acts.logits)};
}

Matrix logits_batch_dropout(const Network& net, const Matrix& x,
                            std::span<const std::uint64_t> row_seeds) {
    if (row_seeds.size() != x.rows())
        throw DimensionMismatch("logits_batch_dropout: one seed per row required");
    std::vector<std::mt19937_64> rngs;
    rngs.reserve(row_seeds.size());
    for (std::uint64_t s : row_seeds) rngs.push_back(rng::engine(s));
    return forward_batch_impl(net, x, rngs, nullptr).logits;
}

std::vector<int> predict_batch(const Network& net, const Matrix& x) {
    std::vector<int> out(x.rows());
    for (std::size_t start = 0; start < x.rows(); start += kEvalChunk) {
        const std::size_t b = std::min(kEvalChunk, x.rows() - start);
        Matrix chunk(b, x.cols());
        for (std::size_t i = 0; i < b; ++i) {
            const auto src = x.row(start + i);
            std::copy(src.begin(), src.end(), chunk.row(i).begin());
        }
        const Matrix logits = forward_batch_impl(net, chunk, {}, nullptr).logits;
        for (std::size_t i = 0; i < b; ++i) out[start + i] = argmax_row(logits.row(i));
    }
    return out;
}

void save_network(const Network& net, std::ostream& out) {
    binio::CrcWriter writer(out);
    serialize(net, writer);
    writer.write_trailer();
}

void save_network(const Network& net, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw BadFormat("save_network: cannot open " + path.string());
    save_network(net, out);
}

Network load_network(std::istream& in) {
    binio::CrcReader reader(in);
    reader.expect_magic(kModelMagic, "model file");
    const auto version = reader.read<std::uint32_t>();
    if (version != kModelVersion)
        throw VersionMismatch("model file version " + std::to_string(version) +
                              ", expected " + std::to_string(kModelVersion));
    Network net;
    net.seed = reader.read<std::uint64_t>();
    net.input_dim = reader.read<std::uint32_t>();
    const auto n_layers = reader.read<std::uint32_t>();
    if (n_layers < 2) throw BadFormat("model file: fewer than 2 layers");

    std::size_t fan_in = net.input_dim;
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        Layer layer;
        layer.spec.width = reader.read<std::uint32_t>();
        const auto act = reader.read<std::uint8_t>();
        if (act > 1) throw BadFormat("model file: unknown activation code");
        layer.spec.activation = static_cast<Activation>(act);
        layer.spec.dropout_rate = reader.read<double>();
        if (layer.spec.width < 1) throw BadFormat("model file: zero-width layer");
        if (!(layer.spec.dropout_rate >= 0.0 && layer.spec.dropout_rate < 1.0))
            throw BadFormat("model file: dropout rate outside [0, 1)");
        layer.weights = Matrix(layer.spec.width, fan_in);
        reader.read_bytes(layer.weights.data().data(),
                          layer.weights.data().size() * sizeof(double));
        layer.biases.resize(layer.spec.width);
        reader.read_bytes(layer.biases.data(), layer.biases.size() * sizeof(double));
        fan_in = layer.spec.width;
        net.layers.push_back(std::move(layer));
    }
    net.fingerprint = reader.crc();
    reader.verify_trailer("model file");
    return net;
}

Network load_network(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw BadFormat("load_network: cannot open " + path.string());
    return load_network(in);
}

std::uint32_t fingerprint(const Network& net) {
    binio::CrcSink sink;
    serialize(net, sink);
    return sink.crc();
}

} // namespace luq::nn
