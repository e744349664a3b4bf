#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "textloc/graph.hpp"
#include "textloc/rng.hpp"

namespace textloc {

// Bivariate Gaussian mixture over (lat, lon) or standardized coordinates.
struct GmmComponent {
    double weight = 1.0;
    std::array<double, 2> mean{0.0, 0.0};
    std::array<double, 2> sigma{1.0, 1.0};
    double rho = 0.0;
};

struct Gmm2D {
    std::vector<GmmComponent> components;

    std::size_t size() const { return components.size(); }
    bool valid(double weight_tol = 1e-12) const;
};

// Raw head outputs are laid out as K consecutive blocks of six:
// (weight, mean1, mean2, sigma1, sigma2, rho).
constexpr std::size_t kParamsPerComponent = 6;

// Lower bound on converted deviations and the bound on |rho|; both keep the
// log-density and its gradient finite when a component collapses onto a
// training point.
constexpr double kSigmaFloor = 1e-6;
constexpr double kRhoBound = 1.0 - 1e-6;

// Weights by softmax over the weight slots, means raw, deviations by
// softplus (floored), correlations by softsign (bounded). Total over any
// finite theta of length 6K.
Gmm2D convert_params(std::span<const double> theta);

double component_log_density(const std::array<double, 2>& y, const GmmComponent& c);
double mixture_log_density(const std::array<double, 2>& y, const Gmm2D& gmm);
double mixture_density(const std::array<double, 2>& y, const Gmm2D& gmm);

struct ModeResult {
    std::array<double, 2> point{0.0, 0.0};
    double density = 0.0;  // mixture density at point, linear scale
};

// Highest-density candidate among the component means; ties break toward the
// lowest component index.
ModeResult mode_approx(const Gmm2D& gmm);

std::vector<std::array<double, 2>> sample(const Gmm2D& gmm, std::size_t count, Rng& rng);

// Per-axis affine map out of z-score space: mean' = mean * scale + shift,
// sigma' = sigma * scale. Densities of the result are densities in the
// destination space (the 1/(scale1*scale2) Jacobian rides on the sigmas).
Gmm2D affine_transform(const Gmm2D& gmm, const std::array<double, 2>& shift,
                       const std::array<double, 2>& scale);

std::string gmm_to_json(const Gmm2D& gmm);

// --- differentiable route -------------------------------------------------
//
// Training evaluates the negative log likelihood through the graph so that
// gradients flow back into the projection head. The node builders apply the
// identical conversion rules as convert_params.

struct GmmNodes {
    NodeId log_weights;  // [K]
    NodeId mean1, mean2;
    NodeId log_sigma1, log_sigma2;
    NodeId rho;
    std::size_t k = 0;
};

GmmNodes convert_params_node(Graph& g, NodeId theta, std::size_t k);

NodeId mixture_log_density_node(Graph& g, const GmmNodes& gmm,
                                const std::array<double, 2>& y);

// Scalar node: -sum_n log p(y_n | theta_n). Rejects an empty batch.
NodeId nll_loss(Graph& g, std::span<const NodeId> thetas,
                std::span<const std::array<double, 2>> targets);

}  // namespace textloc
