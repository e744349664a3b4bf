#include "textloc/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "textloc/util.hpp"

namespace textloc {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

double stable_softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

bool Gmm2D::valid(double weight_tol) const {
    if (components.empty()) return false;
    double total = 0.0;
    for (const GmmComponent& c : components) {
        if (!(c.weight > 0.0 && c.weight < 1.0 + weight_tol)) return false;
        if (!(c.sigma[0] > 0.0 && c.sigma[1] > 0.0)) return false;
        if (!(std::fabs(c.rho) < 1.0)) return false;
        for (double v : c.mean)
            if (!std::isfinite(v)) return false;
        total += c.weight;
    }
    return std::fabs(total - 1.0) <= weight_tol * static_cast<double>(components.size() + 1);
}

Gmm2D convert_params(std::span<const double> theta) {
    if (theta.empty() || theta.size() % kParamsPerComponent != 0)
        throw std::invalid_argument("convert_params: theta length must be a positive multiple of 6");
    const std::size_t k = theta.size() / kParamsPerComponent;

    // softmax over the weight slots with max shift
    double max_w = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i)
        max_w = std::max(max_w, theta[i * kParamsPerComponent]);
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += std::exp(theta[i * kParamsPerComponent] - max_w);

    Gmm2D out;
    out.components.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double* block = theta.data() + i * kParamsPerComponent;
        GmmComponent& c = out.components[i];
        c.weight = std::exp(block[0] - max_w) / z;
        c.mean = {block[1], block[2]};
        c.sigma = {std::max(stable_softplus(block[3]), kSigmaFloor),
                   std::max(stable_softplus(block[4]), kSigmaFloor)};
        const double s = block[5] / (1.0 + std::fabs(block[5]));
        c.rho = std::clamp(s, -kRhoBound, kRhoBound);
    }
    return out;
}

double component_log_density(const std::array<double, 2>& y, const GmmComponent& c) {
    const double u1 = (y[0] - c.mean[0]) / c.sigma[0];
    const double u2 = (y[1] - c.mean[1]) / c.sigma[1];
    const double omr2 = 1.0 - c.rho * c.rho;
    const double z = u1 * u1 + u2 * u2 - 2.0 * c.rho * u1 * u2;
    return -kLogTwoPi - std::log(c.sigma[0]) - std::log(c.sigma[1]) - 0.5 * std::log(omr2) -
           z / (2.0 * omr2);
}

double mixture_log_density(const std::array<double, 2>& y, const Gmm2D& gmm) {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(gmm.size());
    for (std::size_t i = 0; i < gmm.size(); ++i) {
        terms[i] = std::log(gmm.components[i].weight) +
                   component_log_density(y, gmm.components[i]);
        best = std::max(best, terms[i]);
    }
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - best);
    return best + std::log(acc);
}

double mixture_density(const std::array<double, 2>& y, const Gmm2D& gmm) {
    return std::exp(mixture_log_density(y, gmm));
}

ModeResult mode_approx(const Gmm2D& gmm) {
    if (gmm.components.empty()) throw std::invalid_argument("mode_approx: empty mixture");
    ModeResult best;
    double best_log = -std::numeric_limits<double>::infinity();
    for (const GmmComponent& c : gmm.components) {
        const double ld = mixture_log_density(c.mean, gmm);
        if (ld > best_log) {  // strict: ties keep the lowest component index
            best_log = ld;
            best.point = c.mean;
        }
    }
    best.density = std::exp(best_log);
    return best;
}

std::vector<std::array<double, 2>> sample(const Gmm2D& gmm, std::size_t count, Rng& rng) {
    if (!gmm.valid(1e-9)) throw std::invalid_argument("sample: invalid mixture");
    std::vector<std::array<double, 2>> out;
    out.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        double u = rng.uniform();
        std::size_t pick = gmm.size() - 1;
        for (std::size_t i = 0; i < gmm.size(); ++i) {
            u -= gmm.components[i].weight;
            if (u < 0.0) {
                pick = i;
                break;
            }
        }
        const GmmComponent& c = gmm.components[pick];
        // Cholesky factor of the 2x2 covariance
        const double z1 = rng.normal();
        const double z2 = rng.normal();
        const double x1 = c.mean[0] + c.sigma[0] * z1;
        const double x2 =
            c.mean[1] + c.sigma[1] * (c.rho * z1 + std::sqrt(1.0 - c.rho * c.rho) * z2);
        out.push_back({x1, x2});
    }
    return out;
}

Gmm2D affine_transform(const Gmm2D& gmm, const std::array<double, 2>& shift,
                       const std::array<double, 2>& scale) {
    Gmm2D out = gmm;
    for (GmmComponent& c : out.components) {
        for (int i = 0; i < 2; ++i) {
            c.mean[i] = c.mean[i] * scale[i] + shift[i];
            c.sigma[i] = c.sigma[i] * scale[i];
        }
    }
    return out;
}

std::string gmm_to_json(const Gmm2D& gmm) {
    std::ostringstream out;
    auto emit_array = [&](const char* name, auto&& get) {
        out << "\"" << name << "\":[";
        for (std::size_t i = 0; i < gmm.size(); ++i) {
            if (i) out << ",";
            out << get(gmm.components[i]);
        }
        out << "]";
    };
    out << "{";
    emit_array("pi", [](const GmmComponent& c) { return format_double(c.weight); });
    out << ",";
    emit_array("mu", [](const GmmComponent& c) {
        return "[" + format_double(c.mean[0]) + "," + format_double(c.mean[1]) + "]";
    });
    out << ",";
    emit_array("sigma", [](const GmmComponent& c) {
        return "[" + format_double(c.sigma[0]) + "," + format_double(c.sigma[1]) + "]";
    });
    out << ",";
    emit_array("rho", [](const GmmComponent& c) { return format_double(c.rho); });
    out << "}";
    return out.str();
}

GmmNodes convert_params_node(Graph& g, NodeId theta, std::size_t k) {
    if (k == 0 || g.value(theta).size() != k * kParamsPerComponent)
        throw std::invalid_argument("convert_params_node: theta size must be 6K");

    auto slot = [&](std::size_t offset) {
        std::vector<std::size_t> idx(k);
        for (std::size_t i = 0; i < k; ++i) idx[i] = i * kParamsPerComponent + offset;
        return g.gather(theta, std::move(idx), {k});
    };

    GmmNodes nodes;
    nodes.k = k;
    const NodeId raw_w = slot(0);
    const NodeId neg_lse = g.mul_const(g.log_sum_exp(raw_w), -1.0);
    nodes.log_weights = g.add_scalar_node(raw_w, neg_lse);
    nodes.mean1 = slot(1);
    nodes.mean2 = slot(2);
    const double inf = std::numeric_limits<double>::infinity();
    nodes.log_sigma1 = g.log(g.clamp(g.softplus(slot(3)), kSigmaFloor, inf));
    nodes.log_sigma2 = g.log(g.clamp(g.softplus(slot(4)), kSigmaFloor, inf));
    nodes.rho = g.clamp(g.softsign(slot(5)), -kRhoBound, kRhoBound);
    return nodes;
}

NodeId mixture_log_density_node(Graph& g, const GmmNodes& gmm,
                                const std::array<double, 2>& y) {
    const std::size_t k = gmm.k;
    const NodeId y1 = g.constant(Tensor::full({k}, y[0]));
    const NodeId y2 = g.constant(Tensor::full({k}, y[1]));

    const NodeId inv_s1 = g.exp(g.mul_const(gmm.log_sigma1, -1.0));
    const NodeId inv_s2 = g.exp(g.mul_const(gmm.log_sigma2, -1.0));
    const NodeId u1 = g.mul(g.sub(y1, gmm.mean1), inv_s1);
    const NodeId u2 = g.mul(g.sub(y2, gmm.mean2), inv_s2);

    const NodeId omr2 = g.add_const(g.mul_const(g.square(gmm.rho), -1.0), 1.0);
    const NodeId log_omr2 = g.log(omr2);
    const NodeId inv_omr2 = g.exp(g.mul_const(log_omr2, -1.0));

    const NodeId z = g.add(g.add(g.square(u1), g.square(u2)),
                           g.mul_const(g.mul(gmm.rho, g.mul(u1, u2)), -2.0));
    const NodeId quad = g.mul_const(g.mul(z, inv_omr2), 0.5);

    const NodeId log_norm = g.add_const(
        g.mul_const(g.add(g.add(gmm.log_sigma1, gmm.log_sigma2), g.mul_const(log_omr2, 0.5)), -1.0),
        -kLogTwoPi);

    const NodeId log_components = g.sub(log_norm, quad);
    return g.log_sum_exp(g.add(gmm.log_weights, log_components));
}

NodeId nll_loss(Graph& g, std::span<const NodeId> thetas,
                std::span<const std::array<double, 2>> targets) {
    if (thetas.empty()) throw std::invalid_argument("nll_loss: empty batch");
    if (thetas.size() != targets.size())
        throw std::invalid_argument("nll_loss: theta/target count mismatch");

    std::vector<NodeId> log_likelihoods;
    log_likelihoods.reserve(thetas.size());
    for (std::size_t n = 0; n < thetas.size(); ++n) {
        const std::size_t len = g.value(thetas[n]).size();
        if (len == 0 || len % kParamsPerComponent != 0)
            throw std::invalid_argument("nll_loss: theta size must be 6K");
        const GmmNodes gmm = convert_params_node(g, thetas[n], len / kParamsPerComponent);
        log_likelihoods.push_back(mixture_log_density_node(g, gmm, targets[n]));
    }
    return g.mul_const(g.sum(g.concat(log_likelihoods)), -1.0);
}

}  // namespace textloc
