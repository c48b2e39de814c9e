#include "energen/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "energen/common.hpp"

namespace energen {

NoiseSchedule::NoiseSchedule(int T, double beta1, double beta2) : T_(T) {
    if (T < 2) throw config_error("noise schedule needs T >= 2");
    if (!(0.0 < beta1 && beta1 < beta2 && beta2 < 1.0))
        throw config_error("noise schedule needs 0 < beta1 < beta2 < 1");
    size_t n = static_cast<size_t>(T) + 1;
    betas_.assign(n, 0.0);
    alphas_.assign(n, 1.0);
    alpha_bars_.assign(n, 1.0);
    for (int t = 1; t <= T; ++t) {
        auto u = static_cast<size_t>(t);
        betas_[u] = beta1 + (beta2 - beta1) * static_cast<double>(t - 1) / (T - 1);
        alphas_[u] = 1.0 - betas_[u];
        alpha_bars_[u] = alpha_bars_[u - 1] * alphas_[u];
    }
}

size_t NoiseSchedule::check(int t) const {
    if (t < 1 || t > T_)
        throw contract_error("timestep " + std::to_string(t) + " outside [1, " +
                             std::to_string(T_) + "]");
    return static_cast<size_t>(t);
}

double NoiseSchedule::posterior_variance(int t) const {
    check(t);
    return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
}

namespace {

void check_same_shape(const TensorF& a, const TensorF& b, const char* what) {
    if (a.shape() != b.shape())
        throw contract_error(std::string(what) + ": shape " + a.shape_str() +
                             " does not match " + b.shape_str());
}

}  // namespace

TensorF forward_diffuse(const TensorF& x0, int t, const TensorF& epsilon,
                        const NoiseSchedule& sched) {
    check_same_shape(x0, epsilon, "forward_diffuse");
    sched.require_step(t);
    double ab = sched.alpha_bar(t);
    float a = static_cast<float>(std::sqrt(ab));
    float b = static_cast<float>(std::sqrt(1.0 - ab));
    TensorF out(x0.shape());
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = a * x0.data()[i] + b * epsilon.data()[i];
    return out;
}

DiffusionSample make_training_pair(const TensorF& x0, const ConditionVector& condition,
                                   const NoiseSchedule& sched, Rng& rng) {
    DiffusionSample s;
    s.t = rng.uniform_int(1, sched.steps());
    s.epsilon = TensorF(x0.shape());
    rng.fill_normal(s.epsilon.data(), s.epsilon.size());
    s.x_t = forward_diffuse(x0, s.t, s.epsilon, sched);
    s.condition = condition;
    return s;
}

TensorF predict_x0(const TensorF& x_t, int t, const TensorF& eps_hat, const NoiseSchedule& sched,
                   bool clip) {
    check_same_shape(x_t, eps_hat, "predict_x0");
    sched.require_step(t);
    double ab = sched.alpha_bar(t);
    float inv_a = static_cast<float>(1.0 / std::sqrt(ab));
    float b = static_cast<float>(std::sqrt(1.0 - ab));
    TensorF out(x_t.shape());
    for (size_t i = 0; i < out.size(); ++i) {
        float v = (x_t.data()[i] - b * eps_hat.data()[i]) * inv_a;
        out.data()[i] = clip ? std::clamp(v, -1.0f, 1.0f) : v;
    }
    return out;
}

TensorF reverse_step(const TensorF& x_t, int t, const TensorF& eps_hat, const TensorF& z,
                     const NoiseSchedule& sched) {
    check_same_shape(x_t, eps_hat, "reverse_step");
    check_same_shape(x_t, z, "reverse_step");
    TensorF x0_hat = predict_x0(x_t, t, eps_hat, sched, true);
    double ab_prev = sched.alpha_bar(t - 1);
    double ab = sched.alpha_bar(t);
    double beta = sched.beta(t);
    float c0 = static_cast<float>(std::sqrt(ab_prev) * beta / (1.0 - ab));
    float ct = static_cast<float>(std::sqrt(sched.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab));
    float sigma = static_cast<float>(std::sqrt(sched.posterior_variance(t)));
    TensorF out(x_t.shape());
    for (size_t i = 0; i < out.size(); ++i)
        out.data()[i] = c0 * x0_hat.data()[i] + ct * x_t.data()[i] + sigma * z.data()[i];
    return out;
}

TensorF sample(const EpsModel& denoiser, const ConditionVector& condition,
               const NoiseSchedule& sched, uint64_t seed) {
    Rng rng(seed);
    TensorF x({kImageWeeks, kImageHoursPerWeek});
    rng.fill_normal(x.data(), x.size());
    TensorF z(x.shape());
    for (int t = sched.steps(); t >= 1; --t) {
        TensorF eps_hat = denoiser(x, t, condition);
        if (eps_hat.shape() != x.shape())
            throw contract_error("denoiser returned shape " + eps_hat.shape_str() +
                                 ", expected " + x.shape_str());
        if (t > 1)
            rng.fill_normal(z.data(), z.size());
        else
            z.fill(0.0f);
        x = reverse_step(x, t, eps_hat, z, sched);
    }
    for (size_t i = 0; i < x.size(); ++i) x.data()[i] = std::clamp(x.data()[i], -1.0f, 1.0f);
    return x;
}

TensorF sample_batch(const EpsModelBatch& denoiser, const TensorF& conditions,
                     const NoiseSchedule& sched, uint64_t seed, int height, int width) {
    if (conditions.ndim() != 2 || conditions.dim(1) != kConditionDims)
        throw contract_error("sample_batch: conditions must be [N, 13], got " +
                             conditions.shape_str());
    int n = conditions.dim(0);
    size_t cell = static_cast<size_t>(height) * static_cast<size_t>(width);

    Rng base(seed);
    std::vector<Rng> streams;
    streams.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) streams.push_back(base.derive(static_cast<uint64_t>(i)));

    TensorF x({n, height, width});
    for (int i = 0; i < n; ++i)
        streams[static_cast<size_t>(i)].fill_normal(x.data() + static_cast<size_t>(i) * cell, cell);

    TensorF z(x.shape());
    for (int t = sched.steps(); t >= 1; --t) {
        TensorF eps_hat = denoiser(x, t, conditions);
        if (eps_hat.shape() != x.shape())
            throw contract_error("denoiser returned shape " + eps_hat.shape_str() +
                                 ", expected " + x.shape_str());
        if (t > 1)
            for (int i = 0; i < n; ++i)
                streams[static_cast<size_t>(i)].fill_normal(z.data() + static_cast<size_t>(i) * cell,
                                                            cell);
        else
            z.fill(0.0f);
        x = reverse_step(x, t, eps_hat, z, sched);
    }
    for (size_t i = 0; i < x.size(); ++i) x.data()[i] = std::clamp(x.data()[i], -1.0f, 1.0f);
    return x;
}

}  // namespace energen
