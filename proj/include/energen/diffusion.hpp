#pragma once

#include <functional>
#include <vector>

#include "energen/data_pipeline.hpp"
#include "energen/rng.hpp"
#include "energen/tensor.hpp"

namespace energen {

// Tables for the Gaussian noising process, indexed by timestep t in [1, T].
// Index 0 is the identity sentinel: alpha_bar(0) = 1.
class NoiseSchedule {
  public:
    NoiseSchedule(int T, double beta1, double beta2);

    int steps() const { return T_; }
    void require_step(int t) const { check(t); }
    double beta(int t) const { return betas_[check(t)]; }
    double alpha(int t) const { return alphas_[check(t)]; }
    double alpha_bar(int t) const { return alpha_bars_[static_cast<size_t>(t)]; }
    // Variance of the reverse-step noise at t; zero at t = 1.
    double posterior_variance(int t) const;

  private:
    size_t check(int t) const;
    int T_;
    std::vector<double> betas_, alphas_, alpha_bars_;
};

inline NoiseSchedule default_noise_schedule() { return NoiseSchedule(500, 1e-4, 0.02); }

struct DiffusionSample {
    TensorF x_t;
    int t = 1;
    TensorF epsilon;  // the training target under epsilon-prediction
    ConditionVector condition;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
TensorF forward_diffuse(const TensorF& x0, int t, const TensorF& epsilon,
                        const NoiseSchedule& sched);

DiffusionSample make_training_pair(const TensorF& x0, const ConditionVector& condition,
                                   const NoiseSchedule& sched, Rng& rng);

// x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t), clipped to [-1, 1]
TensorF predict_x0(const TensorF& x_t, int t, const TensorF& eps_hat, const NoiseSchedule& sched,
                   bool clip = true);

// Posterior-mean step around the clipped x0_hat plus sigma_t * z.
TensorF reverse_step(const TensorF& x_t, int t, const TensorF& eps_hat, const TensorF& z,
                     const NoiseSchedule& sched);

// eps_hat(x_t, t, condition) with x_t of shape [52, 168]
using EpsModel = std::function<TensorF(const TensorF&, int, const ConditionVector&)>;

TensorF sample(const EpsModel& denoiser, const ConditionVector& condition,
               const NoiseSchedule& sched, uint64_t seed);

// eps_hat for a whole batch: x_t [N, H, W], conditions [N, 13] -> [N, H, W]
using EpsModelBatch = std::function<TensorF(const TensorF&, int, const TensorF&)>;

// Equivalent to calling sample() per row with seed derived from (seed, row):
// each row draws from its own substream, so batching never changes the output.
TensorF sample_batch(const EpsModelBatch& denoiser, const TensorF& conditions,
                     const NoiseSchedule& sched, uint64_t seed, int height = kImageWeeks,
                     int width = kImageHoursPerWeek);

}  // namespace energen
