#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "textloc/geo.hpp"
#include "textloc/graph.hpp"
#include "textloc/mixture.hpp"
#include "textloc/text.hpp"

namespace textloc {

enum class ModelKind {
    Cmdn,    // convolutional encoder + mixture head
    Mdn,     // pooled-embedding encoder + mixture head
    CnnL2,   // convolutional encoder + linear head, squared loss
    CnnL1,
    MlpL2,   // pooled-embedding encoder + linear head
    MlpL1,
    Enet,    // bag-of-words elastic net
    Mean,    // constant training-mean point
    Median,  // constant training-median point
};

std::string model_kind_name(ModelKind kind);
std::optional<ModelKind> parse_model_kind(const std::string& name);
bool is_density_kind(ModelKind kind);
bool is_neural_kind(ModelKind kind);

// Pairs each model parameter tensor with its leaf node in some graph, in a
// stable order, so the optimizer can route gradients back.
using ParamBind = std::vector<std::pair<Tensor*, NodeId>>;

// Sentence vector: the concatenation of embedding rows for each id, with
// position i occupying slots [i*d, (i+1)*d). Ids are validated against the
// embedding height.
NodeId embed_concat(Graph& g, NodeId embedding, std::span<const int> ids,
                    std::size_t vocab_size, std::size_t embed_dim);

// Convolutional text encoder: per window size, an affine filter bank slid
// over the sentence vector, ReLU, and column-wise 1-max pooling; pooled
// features concatenate in (window order, filter index) layout.
struct CnnEncoder {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 0;
    std::size_t seq_len = 0;
    std::vector<std::size_t> window_sizes;
    std::size_t filters_per_window = 0;
    double dropout_rate = 0.0;

    Tensor embedding;              // [V x d]
    std::vector<Tensor> filter_w;  // per window: [m x (window*d)]
    std::vector<Tensor> filter_b;  // per window: [m]

    std::size_t feature_width() const { return window_sizes.size() * filters_per_window; }
    std::size_t max_window() const;
    void init(Rng& rng);

    struct Bound {
        NodeId embedding = 0;
        std::vector<NodeId> filter_w, filter_b;
    };
    Bound bind(Graph& g, bool trainable, ParamBind* out);
    // Feature vector h of width feature_width(). Dropout applies only when
    // training and only to h.
    NodeId features(Graph& g, const Bound& bound, const EncodedTweet& tweet, bool training,
                    Rng* rng) const;
};

// Pooled-embedding encoder: mean of the word embeddings over the true length
// (the PAD row when the tweet is empty), one ReLU hidden layer.
struct MlpEncoder {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 0;
    std::size_t hidden_dim = 0;
    std::size_t seq_len = 0;
    double dropout_rate = 0.0;

    Tensor embedding;  // [V x d]
    Tensor hidden_w;   // [H x d]
    Tensor hidden_b;   // [H]

    std::size_t feature_width() const { return hidden_dim; }
    void init(Rng& rng);

    struct Bound {
        NodeId embedding = 0, hidden_w = 0, hidden_b = 0;
    };
    Bound bind(Graph& g, bool trainable, ParamBind* out);
    NodeId features(Graph& g, const Bound& bound, const EncodedTweet& tweet, bool training,
                    Rng* rng) const;
};

// Affine map from features to a 2-D point.
struct RegressionHead {
    Tensor w;  // [2 x m]
    Tensor b;  // [2]

    void init(std::size_t feature_width, Rng& rng);
    struct Bound {
        NodeId w = 0, b = 0;
    };
    Bound bind(Graph& g, bool trainable, ParamBind* out);
    NodeId project(Graph& g, const Bound& bound, NodeId features) const;
};

// Affine map from features to the 6K raw mixture parameters, K blocks of
// (weight, mean1, mean2, sigma1, sigma2, rho).
struct MdnHead {
    std::size_t mixture_k = 0;
    Tensor w;  // [6K x m]
    Tensor b;  // [6K]

    void init(std::size_t feature_width, Rng& rng);
    struct Bound {
        NodeId w = 0, b = 0;
    };
    Bound bind(Graph& g, bool trainable, ParamBind* out);
    NodeId project(Graph& g, const Bound& bound, NodeId features) const;
};

// Linear model over bag-of-words counts with l1/l2 penalties, fit by
// proximal gradient descent.
struct EnetModel {
    std::size_t vocab_size = 0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    Tensor weights;  // [2 x V]
    Tensor bias;     // [2]

    std::array<double, 2> predict(std::span<const std::pair<std::size_t, double>> bow) const;
};

double soft_threshold(double x, double t);

// Sparse token counts over the vocabulary (PAD never occurs, OOV maps to
// UNK), ascending by index.
std::vector<std::pair<std::size_t, double>> bag_of_words(const std::vector<std::string>& tokens,
                                                         const Vocab& vocab);

// Minimizes sum_n ||W x_n + b - y_n||^2 + lambda1*|W|_1 + lambda2*|W|_2^2 by
// proximal gradient with a Lipschitz step size; the objective never
// increases. Throws NumericError when the iteration produces non-finite
// values.
EnetModel enet_fit(const std::vector<std::vector<std::pair<std::size_t, double>>>& rows,
                   std::span<const std::array<double, 2>> targets, std::size_t vocab_size,
                   double lambda1, double lambda2, std::size_t steps);

struct ConstantBaselines {
    GeoPoint mean;
    GeoPoint median;
};

// Componentwise mean and median of the training locations; an even count
// averages the middle two. Rejects an empty set.
ConstantBaselines constant_baselines(std::span<const GeoPoint> locations);

// Architecture settings shared by the trainable models. seq_len == 0 asks
// the trainer to derive it from the 95th-percentile training tweet length.
struct ModelConfig {
    std::size_t embed_dim = 32;
    std::size_t filters_per_window = 16;
    std::vector<std::size_t> windows{3, 4, 5};
    std::size_t hidden_dim = 64;
    std::size_t mixture_k = 5;
    std::size_t seq_len = 20;
    double enet_lambda1 = 0.1;
    double enet_lambda2 = 0.1;
    std::size_t enet_steps = 500;
};

// A trained model of any kind plus everything needed to map predictions back
// to degrees. Immutable during evaluation; training mutates it from a single
// thread.
struct TrainedModel {
    ModelKind kind = ModelKind::Mean;
    ModelConfig config;
    std::array<double, 2> target_mean{0.0, 0.0};
    std::array<double, 2> target_std{1.0, 1.0};

    CnnEncoder cnn;
    MlpEncoder mlp;
    RegressionHead reg_head;
    MdnHead mdn_head;
    EnetModel enet;
    GeoPoint constant_point;

    // Stable parameter list (name, tensor) for optimizers and checkpoints.
    std::vector<std::pair<std::string, Tensor*>> parameters();
    std::vector<std::pair<std::string, const Tensor*>> parameters() const;
};

// Fresh, randomly initialized model of the given kind. seq_len must already
// be resolved and at least the largest window for convolutional kinds.
TrainedModel make_model(ModelKind kind, const ModelConfig& config, std::size_t vocab_size,
                        double dropout_rate, Rng& rng);

struct NeuralBinding {
    CnnEncoder::Bound cnn;
    MlpEncoder::Bound mlp;
    RegressionHead::Bound reg;
    MdnHead::Bound mdn;
};

NeuralBinding bind_neural(Graph& g, TrainedModel& model, bool trainable, ParamBind* out);

// Head output for one tweet: a [2] point in standardized space for
// regression kinds, the [6K] raw mixture parameters for density kinds.
NodeId neural_output(Graph& g, const TrainedModel& model, const NeuralBinding& binding,
                     const EncodedTweet& tweet, bool training, Rng* rng);

struct Prediction {
    GeoPoint point;
    bool has_density = false;
    double likelihood = 0.0;  // mixture density at point, degree space
    Gmm2D density;            // degree space, density kinds only
};

// End-to-end single-tweet prediction in degree space. Out-of-range raw
// outputs are clamped to valid coordinates.
Prediction predict_one(const TrainedModel& model, const Vocab& vocab,
                       const std::vector<std::string>& tokens);

std::array<double, 2> standardize(const TrainedModel& model, const GeoPoint& p);
GeoPoint unstandardize_point(const TrainedModel& model, const std::array<double, 2>& y);

// Training-set target statistics; deviations are floored to keep the
// transform invertible on constant data.
void fit_standardization(TrainedModel& model, std::span<const GeoPoint> locations);

}  // namespace textloc
