#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "energen/baselines.hpp"
#include "energen/data_pipeline.hpp"
#include "energen/denoiser.hpp"
#include "energen/diffusion.hpp"

namespace energen {

enum class ModelKind { cvae, cgan, diffusion };

const char* to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

// Zeros / negative values mean "use the model family's default", filled in by
// resolved(): epochs 100 / 15000 / 1000, learning rate 1e-3 / 1e-4 / 1e-3,
// batch size 64 / 64 / 10 for cvae / cgan / diffusion.
struct TrainConfig {
    ModelKind model_kind = ModelKind::diffusion;
    int epochs = -1;
    double learning_rate = 0.0;
    int batch_size = 0;
    uint64_t seed = 0;
    int eval_every = 0;  // 0 disables the evaluation hook

    DenoiserConfig denoiser;
    CVAEConfig cvae;
    CGANConfig cgan;
    double beta_start = 1e-4;  // diffusion noise schedule over denoiser.total_steps
    double beta_end = 0.02;

    TrainConfig resolved() const;
    void validate() const;  // call on a resolved config
};

struct EpochMetrics {
    int epoch = 0;  // 1-based
    double loss = 0.0;
    std::map<std::string, double> parts;
};

struct Checkpoint {
    ModelKind kind = ModelKind::diffusion;
    TrainConfig config;  // resolved
    int epochs_completed = 0;
    LatLonBounds bounds;  // geo scaling the conditions were encoded with
    std::vector<EpochMetrics> history;
    std::vector<std::pair<std::string, TensorF>> tensors;

    const TensorF& tensor(const std::string& name) const;
    size_t param_count() const;
};

// Conditional sampler: conditions [N, 13] -> images [N, 52, 168] in [-1, 1].
// Row i draws from the substream derived from (seed, i), so splitting a batch
// across calls with the same seed changes nothing.
using SampleFn = std::function<TensorF(const TensorF& conditions, uint64_t seed)>;

struct TrainHooks {
    std::function<void(const EpochMetrics&)> on_epoch;
    // Called after epochs eval_every, 2*eval_every, ... with a sampler bound
    // to the live model.
    std::function<void(int epoch, const SampleFn& sampler)> on_eval;
};

// Runs the configured optimization on the dataset's train split and returns
// the final parameters plus per-epoch mean losses. Loss parts by family:
// cvae {recon, kl}, cgan {disc, gen} with disc as the primary loss,
// diffusion {} with epsilon-prediction MSE as the primary loss.
// A non-finite batch loss aborts with a runtime error naming epoch and batch.
Checkpoint train(const ProcessedDataset& dataset, const TrainConfig& config,
                 const TrainHooks& hooks = {});

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

// Rebuild the trained model; throws a contract error when the checkpoint holds
// a different model family.
DenoiserNetF restore_denoiser(const Checkpoint& ckpt);
CVAENetF restore_cvae(const Checkpoint& ckpt);
CGANNetF restore_cgan(const Checkpoint& ckpt);

// Family-dispatched conditional sampler over a restored copy of the model.
SampleFn make_sampler(const Checkpoint& ckpt);

}  // namespace energen
