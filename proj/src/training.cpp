#include "energen/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "energen/blob.hpp"

namespace energen {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* to_string(ModelKind k) {
    switch (k) {
        case ModelKind::cvae: return "cvae";
        case ModelKind::cgan: return "cgan";
        case ModelKind::diffusion: return "diffusion";
    }
    throw contract_error("invalid model kind");
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "cvae") return ModelKind::cvae;
    if (s == "cgan") return ModelKind::cgan;
    if (s == "diffusion") return ModelKind::diffusion;
    throw parse_error("unknown model kind: '" + s + "'");
}

TrainConfig TrainConfig::resolved() const {
    TrainConfig r = *this;
    switch (model_kind) {
        case ModelKind::cvae:
            if (r.epochs < 0) r.epochs = 100;
            if (r.learning_rate <= 0.0) r.learning_rate = 1e-3;
            if (r.batch_size <= 0) r.batch_size = 64;
            break;
        case ModelKind::cgan:
            if (r.epochs < 0) r.epochs = 15000;
            if (r.learning_rate <= 0.0) r.learning_rate = 1e-4;
            if (r.batch_size <= 0) r.batch_size = 64;
            break;
        case ModelKind::diffusion:
            if (r.epochs < 0) r.epochs = 1000;
            if (r.learning_rate <= 0.0) r.learning_rate = 1e-3;
            if (r.batch_size <= 0) r.batch_size = 10;
            break;
    }
    return r;
}

void TrainConfig::validate() const {
    if (epochs < 0) throw config_error("train: epochs must be >= 0");
    if (learning_rate <= 0.0) throw config_error("train: learning rate must be positive");
    if (batch_size < 1) throw config_error("train: batch size must be >= 1");
    if (eval_every < 0) throw config_error("train: eval_every must be >= 0");
    if (beta_start <= 0.0 || beta_end <= beta_start || beta_end >= 1.0)
        throw config_error("train: need 0 < beta_start < beta_end < 1");
    denoiser.validate();
    cvae.validate();
    cgan.validate();
}

const TensorF& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw contract_error("checkpoint has no tensor named '" + name + "'");
}

size_t Checkpoint::param_count() const {
    size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
}

namespace {

// Batch gather: rows `rows` of the dataset as images [B,1,H,W] and
// conditions [B,13].
void gather_batch(const ProcessedDataset& ds, const std::vector<int>& rows, TensorF* x,
                  TensorF* cond) {
    int b = static_cast<int>(rows.size());
    int h = ds.images.dim(1), w = ds.images.dim(2);
    *x = TensorF({b, 1, h, w});
    *cond = TensorF({b, kConditionDims});
    for (int i = 0; i < b; ++i) {
        const float* src = ds.images.data() + ds.images.offset(rows[static_cast<size_t>(i)]);
        std::copy(src, src + static_cast<size_t>(h) * w, x->data() + x->offset(i));
        const float* cs =
            ds.conditions.data() + ds.conditions.offset(rows[static_cast<size_t>(i)]);
        std::copy(cs, cs + kConditionDims, cond->data() + cond->offset(i));
    }
}

void check_finite(double loss, const std::map<std::string, double>& parts, int epoch, int batch) {
    bool bad = !std::isfinite(loss);
    for (const auto& [k, v] : parts) bad = bad || !std::isfinite(v);
    if (!bad) return;
    std::ostringstream msg;
    msg << "training diverged: non-finite loss at epoch " << epoch << " batch " << batch
        << " (loss " << loss;
    for (const auto& [k, v] : parts) msg << ", " << k << " " << v;
    msg << ")";
    throw runtime_error(msg.str());
}

std::vector<std::pair<std::string, TensorF>> snapshot_params(nn::ParamSet<float>& params) {
    std::vector<std::pair<std::string, TensorF>> out;
    out.reserve(params.refs().size());
    for (const auto& r : params.refs()) out.emplace_back(r.name, *r.value);
    return out;
}

// One model family's epoch loop plumbing: shuffle, batch, step, record.
struct EpochDriver {
    const ProcessedDataset& ds;
    const TrainConfig& cfg;
    const TrainHooks& hooks;
    std::vector<int> train_rows;
    std::vector<int> test_rows;
    std::vector<EpochMetrics> history;

    EpochDriver(const ProcessedDataset& d, const TrainConfig& c, const TrainHooks& h)
        : ds(d), cfg(c), hooks(h), train_rows(d.indices_of(SplitLabel::train)),
          test_rows(d.indices_of(SplitLabel::test)) {
        if (train_rows.empty()) throw contract_error("train: dataset has no train split rows");
    }

    // Held-out loss with draws fixed across epochs, so the curve moves only
    // when the model does.
    template <typename TestLoss>
    double heldout_mean(TestLoss test_loss, uint64_t seed) {
        Rng rng(seed);
        double sum = 0.0;
        size_t seen = 0;
        for (size_t off = 0; off < test_rows.size(); off += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(test_rows.size(), off + static_cast<size_t>(cfg.batch_size));
            std::vector<int> rows(test_rows.begin() + static_cast<long>(off),
                                  test_rows.begin() + static_cast<long>(end));
            TensorF x, cond;
            gather_batch(ds, rows, &x, &cond);
            sum += test_loss(x, cond, rng) * static_cast<double>(rows.size());
            seen += rows.size();
        }
        return sum / static_cast<double>(seen);
    }

    // step(batch_x, batch_cond, epoch_rng) -> (loss, parts); sampler builds a
    // SampleFn over the live model for the evaluation hook; test_loss scores
    // one batch without touching gradients or optimizer state.
    template <typename Step, typename MakeLiveSampler, typename TestLoss>
    void run(Step step, MakeLiveSampler live_sampler, TestLoss test_loss) {
        Rng base(cfg.seed);
        const uint64_t heldout_seed = base.derive_seed(0x7E57);
        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            Rng erng = base.derive(static_cast<uint64_t>(epoch));
            std::vector<int> perm = train_rows;
            for (size_t i = perm.size(); i > 1; --i)
                std::swap(perm[i - 1], perm[static_cast<size_t>(erng.below(i))]);

            double loss_sum = 0.0;
            std::map<std::string, double> part_sums;
            size_t seen = 0;
            int batch_index = 0;
            for (size_t off = 0; off < perm.size(); off += static_cast<size_t>(cfg.batch_size)) {
                size_t end = std::min(perm.size(), off + static_cast<size_t>(cfg.batch_size));
                std::vector<int> rows(perm.begin() + static_cast<long>(off),
                                      perm.begin() + static_cast<long>(end));
                TensorF x, cond;
                gather_batch(ds, rows, &x, &cond);
                auto [loss, parts] = step(x, cond, erng);
                check_finite(loss, parts, epoch, batch_index);
                loss_sum += loss * static_cast<double>(rows.size());
                for (const auto& [k, v] : parts)
                    part_sums[k] += v * static_cast<double>(rows.size());
                seen += rows.size();
                ++batch_index;
            }

            EpochMetrics m;
            m.epoch = epoch;
            m.loss = loss_sum / static_cast<double>(seen);
            for (const auto& [k, v] : part_sums) m.parts[k] = v / static_cast<double>(seen);
            if (cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !test_rows.empty())
                m.parts["test_loss"] = heldout_mean(test_loss, heldout_seed);
            history.push_back(m);
            if (hooks.on_epoch) hooks.on_epoch(m);
            if (cfg.eval_every > 0 && hooks.on_eval && epoch % cfg.eval_every == 0)
                hooks.on_eval(epoch, live_sampler());
        }
    }
};

TensorF strip_channel(const TensorF& x) {
    return x.reshaped({x.dim(0), x.dim(2), x.dim(3)});
}

// Per-row latent draws come from substreams of (seed, row), matching the
// batching-invariance contract of SampleFn.
TensorF fill_row_normals(int rows, int dim, uint64_t seed) {
    TensorF out({rows, dim});
    Rng base(seed);
    for (int i = 0; i < rows; ++i) {
        Rng r = base.derive(static_cast<uint64_t>(i));
        r.fill_normal(out.data() + out.offset(i), static_cast<size_t>(dim));
    }
    return out;
}

SampleFn cvae_sampler(std::shared_ptr<CVAENetF> net) {
    return [net](const TensorF& conditions, uint64_t seed) {
        TensorF z = fill_row_normals(conditions.dim(0), net->config().latent_dim, seed);
        return strip_channel(net->decode(z, conditions));
    };
}

SampleFn cgan_sampler(std::shared_ptr<CGANNetF> net) {
    return [net](const TensorF& conditions, uint64_t seed) {
        TensorF noise = fill_row_normals(conditions.dim(0), net->config().noise_dim, seed);
        return strip_channel(net->generate(noise, conditions));
    };
}

SampleFn diffusion_sampler(std::shared_ptr<DenoiserNetF> net, NoiseSchedule sched) {
    return [net, sched](const TensorF& conditions, uint64_t seed) {
        EpsModelBatch model = [&net](const TensorF& x_t, int t, const TensorF& cond) {
            TensorF x4 = x_t.reshaped({x_t.dim(0), 1, x_t.dim(1), x_t.dim(2)});
            std::vector<int> ts(static_cast<size_t>(x_t.dim(0)), t);
            return strip_channel(net->forward(x4, ts, cond));
        };
        return sample_batch(model, conditions, sched, seed, net->config().input_h,
                            net->config().input_w);
    };
}

Checkpoint train_cvae(const ProcessedDataset& ds, const TrainConfig& cfg,
                      const TrainHooks& hooks) {
    auto net = std::make_shared<CVAENetF>(cfg.cvae);
    Rng base(cfg.seed);
    net->init(base.derive_seed(0));
    auto params = net->params();
    nn::Adam<float> adam(cfg.learning_rate);

    EpochDriver driver(ds, cfg, hooks);
    driver.run(
        [&](const TensorF& x, const TensorF& cond, Rng& erng) {
            auto out = net->forward_train(x, cond, erng);
            params.zero_grads();
            CVAELossParts parts = net->loss_and_backward(x, cond, out);
            adam.step(params);
            return std::pair<double, std::map<std::string, double>>(
                parts.total, {{"recon", parts.recon_mse}, {"kl", parts.kl}});
        },
        [&] { return cvae_sampler(net); },
        [&](const TensorF& x, const TensorF& cond, Rng& rng) {
            auto out = net->forward_train(x, cond, rng);
            return CVAENetF::loss_only(x, out, cfg.cvae.kl_weight).total;
        });

    Checkpoint ckpt;
    ckpt.kind = ModelKind::cvae;
    ckpt.config = cfg;
    ckpt.epochs_completed = cfg.epochs;
    ckpt.bounds = ds.bounds;
    ckpt.history = std::move(driver.history);
    ckpt.tensors = snapshot_params(params);
    return ckpt;
}

Checkpoint train_cgan(const ProcessedDataset& ds, const TrainConfig& cfg,
                      const TrainHooks& hooks) {
    auto net = std::make_shared<CGANNetF>(cfg.cgan);
    Rng base(cfg.seed);
    net->init(base.derive_seed(0));
    auto gen_params = net->gen_params();
    auto disc_params = net->disc_params();
    nn::Adam<float> adam_gen(cfg.learning_rate);
    nn::Adam<float> adam_disc(cfg.learning_rate);
    int noise_dim = cfg.cgan.noise_dim;

    EpochDriver driver(ds, cfg, hooks);
    driver.run(
        [&](const TensorF& x, const TensorF& cond, Rng& erng) {
            int b = x.dim(0);

            // discriminator: real up, fake down
            disc_params.zero_grads();
            TensorF d_real;
            double loss_real = nn::bce_loss(net->discriminate(x, cond), 1.0, &d_real);
            net->discriminate_backward(d_real);
            TensorF noise({b, noise_dim});
            erng.fill_normal(noise.data(), noise.size());
            TensorF fake = net->generate(noise, cond);
            TensorF d_fake;
            double loss_fake = nn::bce_loss(net->discriminate(fake, cond), 0.0, &d_fake);
            net->discriminate_backward(d_fake);
            adam_disc.step(disc_params);

            // generator: fool the updated discriminator
            gen_params.zero_grads();
            erng.fill_normal(noise.data(), noise.size());
            TensorF y = net->generate(noise, cond);
            TensorF dp;
            double loss_gen = nn::bce_loss(net->discriminate(y, cond), 1.0, &dp);
            net->generate_backward(net->discriminate_backward(dp));
            adam_gen.step(gen_params);

            double disc_loss = loss_real + loss_fake;
            return std::pair<double, std::map<std::string, double>>(
                disc_loss, {{"disc", disc_loss}, {"gen", loss_gen}});
        },
        [&] { return cgan_sampler(net); },
        [&](const TensorF& x, const TensorF& cond, Rng& rng) {
            double real = nn::bce_loss(net->discriminate(x, cond), 1.0);
            TensorF noise({x.dim(0), noise_dim});
            rng.fill_normal(noise.data(), noise.size());
            double fake = nn::bce_loss(net->discriminate(net->generate(noise, cond), cond), 0.0);
            return real + fake;
        });

    Checkpoint ckpt;
    ckpt.kind = ModelKind::cgan;
    ckpt.config = cfg;
    ckpt.epochs_completed = cfg.epochs;
    ckpt.bounds = ds.bounds;
    ckpt.history = std::move(driver.history);
    ckpt.tensors = snapshot_params(gen_params);
    auto disc_tensors = snapshot_params(disc_params);
    ckpt.tensors.insert(ckpt.tensors.end(), disc_tensors.begin(), disc_tensors.end());
    return ckpt;
}

Checkpoint train_diffusion(const ProcessedDataset& ds, const TrainConfig& cfg,
                           const TrainHooks& hooks) {
    auto net = std::make_shared<DenoiserNetF>(cfg.denoiser);
    Rng base(cfg.seed);
    net->init(base.derive_seed(0));
    auto params = net->params();
    nn::Adam<float> adam(cfg.learning_rate);
    NoiseSchedule sched(cfg.denoiser.total_steps, cfg.beta_start, cfg.beta_end);
    int h = cfg.denoiser.input_h, w = cfg.denoiser.input_w;

    EpochDriver driver(ds, cfg, hooks);
    driver.run(
        [&](const TensorF& x, const TensorF& cond, Rng& erng) {
            int b = x.dim(0);
            TensorF x_t({b, 1, h, w}), eps({b, 1, h, w});
            std::vector<int> ts(static_cast<size_t>(b));
            for (int i = 0; i < b; ++i) {
                TensorF x0({h, w});
                std::copy(x.data() + x.offset(i), x.data() + x.offset(i) + x0.size(),
                          x0.data());
                ConditionVector cv{};
                std::copy(cond.data() + cond.offset(i), cond.data() + cond.offset(i) + kConditionDims,
                          cv.values.begin());
                DiffusionSample s = make_training_pair(x0, cv, sched, erng);
                ts[static_cast<size_t>(i)] = s.t;
                std::copy(s.x_t.data(), s.x_t.data() + s.x_t.size(),
                          x_t.data() + x_t.offset(i));
                std::copy(s.epsilon.data(), s.epsilon.data() + s.epsilon.size(),
                          eps.data() + eps.offset(i));
            }
            TensorF eps_hat = net->forward(x_t, ts, cond);
            params.zero_grads();
            TensorF d;
            double loss = nn::mse_loss(eps_hat, eps, &d);
            net->backward(d);
            adam.step(params);
            return std::pair<double, std::map<std::string, double>>(loss, {});
        },
        [&] { return diffusion_sampler(net, sched); },
        [&](const TensorF& x, const TensorF& cond, Rng& rng) {
            int b = x.dim(0);
            TensorF x_t({b, 1, h, w}), eps({b, 1, h, w});
            std::vector<int> ts(static_cast<size_t>(b));
            for (int i = 0; i < b; ++i) {
                TensorF x0({h, w});
                std::copy(x.data() + x.offset(i), x.data() + x.offset(i) + x0.size(), x0.data());
                ConditionVector cv{};
                std::copy(cond.data() + cond.offset(i),
                          cond.data() + cond.offset(i) + kConditionDims, cv.values.begin());
                DiffusionSample s = make_training_pair(x0, cv, sched, rng);
                ts[static_cast<size_t>(i)] = s.t;
                std::copy(s.x_t.data(), s.x_t.data() + s.x_t.size(), x_t.data() + x_t.offset(i));
                std::copy(s.epsilon.data(), s.epsilon.data() + s.epsilon.size(),
                          eps.data() + eps.offset(i));
            }
            return nn::mse_loss(net->forward(x_t, ts, cond), eps);
        });

    Checkpoint ckpt;
    ckpt.kind = ModelKind::diffusion;
    ckpt.config = cfg;
    ckpt.epochs_completed = cfg.epochs;
    ckpt.bounds = ds.bounds;
    ckpt.history = std::move(driver.history);
    ckpt.tensors = snapshot_params(params);
    return ckpt;
}

}  // namespace

Checkpoint train(const ProcessedDataset& dataset, const TrainConfig& config,
                 const TrainHooks& hooks) {
    if (dataset.images.empty() || dataset.images.ndim() != 3)
        throw contract_error("train: dataset images must be [N,H,W]");
    int n = dataset.images.dim(0);
    if (dataset.conditions.ndim() != 2 || dataset.conditions.dim(0) != n ||
        dataset.conditions.dim(1) != kConditionDims)
        throw contract_error("train: dataset conditions must be [N," +
                             std::to_string(kConditionDims) + "]");
    if (dataset.split_labels.size() != static_cast<size_t>(n))
        throw contract_error("train: split labels disagree with image count");
    TrainConfig cfg = config.resolved();
    cfg.validate();
    switch (cfg.model_kind) {
        case ModelKind::cvae: return train_cvae(dataset, cfg, hooks);
        case ModelKind::cgan: return train_cgan(dataset, cfg, hooks);
        case ModelKind::diffusion: return train_diffusion(dataset, cfg, hooks);
    }
    throw contract_error("invalid model kind");
}

namespace {

json condition_schema_json(const LatLonBounds& b) {
    json layout;
    layout["dims"] = kConditionDims;
    layout["scalar_fields"] = {"year_code", "lat_scaled", "lon_scaled"};
    layout["meter_types"] = json::array();
    for (int i = 0; i < kNumMeterTypes; ++i)
        layout["meter_types"].push_back(to_string(static_cast<MeterType>(i)));
    layout["building_types"] = json::array();
    for (int i = 0; i < kNumBuildingTypes; ++i)
        layout["building_types"].push_back(to_string(static_cast<BuildingType>(i)));
    layout["year_codes"] = {{"2016", -1.0}, {"2017", 1.0}};
    layout["lat_lon_bounds"] = {{"lat_min", b.lat_min},
                                {"lat_max", b.lat_max},
                                {"lon_min", b.lon_min},
                                {"lon_max", b.lon_max}};
    return layout;
}

json config_json(const TrainConfig& cfg) {
    json j;
    j["model_kind"] = to_string(cfg.model_kind);
    j["epochs"] = cfg.epochs;
    j["learning_rate"] = cfg.learning_rate;
    j["batch_size"] = cfg.batch_size;
    j["seed"] = cfg.seed;
    j["eval_every"] = cfg.eval_every;
    switch (cfg.model_kind) {
        case ModelKind::cvae:
            j["cvae"] = {{"encoder_filters", cfg.cvae.encoder_filters},
                         {"dense_dim", cfg.cvae.dense_dim},
                         {"latent_dim", cfg.cvae.latent_dim},
                         {"decoder_filters", cfg.cvae.decoder_filters},
                         {"context_dim", cfg.cvae.context_dim},
                         {"input_h", cfg.cvae.input_h},
                         {"input_w", cfg.cvae.input_w},
                         {"kl_weight", cfg.cvae.kl_weight}};
            break;
        case ModelKind::cgan:
            j["cgan"] = {{"disc_filters", cfg.cgan.disc_filters},
                         {"gen_filters", cfg.cgan.gen_filters},
                         {"noise_dim", cfg.cgan.noise_dim},
                         {"context_dim", cfg.cgan.context_dim},
                         {"input_h", cfg.cgan.input_h},
                         {"input_w", cfg.cgan.input_w}};
            break;
        case ModelKind::diffusion:
            j["denoiser"] = {{"hidden_features", cfg.denoiser.hidden_features},
                             {"context_dim", cfg.denoiser.context_dim},
                             {"time_embed_dim", cfg.denoiser.time_embed_dim},
                             {"input_h", cfg.denoiser.input_h},
                             {"input_w", cfg.denoiser.input_w},
                             {"total_steps", cfg.denoiser.total_steps}};
            j["beta_start"] = cfg.beta_start;
            j["beta_end"] = cfg.beta_end;
            break;
    }
    return j;
}

TrainConfig config_from_json(const json& j, ModelKind kind) {
    TrainConfig cfg;
    cfg.model_kind = kind;
    cfg.epochs = j.at("epochs").get<int>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.eval_every = j.at("eval_every").get<int>();
    switch (kind) {
        case ModelKind::cvae: {
            const json& c = j.at("cvae");
            c.at("encoder_filters").get_to(cfg.cvae.encoder_filters);
            cfg.cvae.dense_dim = c.at("dense_dim").get<int>();
            cfg.cvae.latent_dim = c.at("latent_dim").get<int>();
            c.at("decoder_filters").get_to(cfg.cvae.decoder_filters);
            cfg.cvae.context_dim = c.at("context_dim").get<int>();
            cfg.cvae.input_h = c.at("input_h").get<int>();
            cfg.cvae.input_w = c.at("input_w").get<int>();
            cfg.cvae.kl_weight = c.at("kl_weight").get<double>();
            break;
        }
        case ModelKind::cgan: {
            const json& c = j.at("cgan");
            c.at("disc_filters").get_to(cfg.cgan.disc_filters);
            c.at("gen_filters").get_to(cfg.cgan.gen_filters);
            cfg.cgan.noise_dim = c.at("noise_dim").get<int>();
            cfg.cgan.context_dim = c.at("context_dim").get<int>();
            cfg.cgan.input_h = c.at("input_h").get<int>();
            cfg.cgan.input_w = c.at("input_w").get<int>();
            break;
        }
        case ModelKind::diffusion: {
            const json& c = j.at("denoiser");
            cfg.denoiser.hidden_features = c.at("hidden_features").get<int>();
            cfg.denoiser.context_dim = c.at("context_dim").get<int>();
            cfg.denoiser.time_embed_dim = c.at("time_embed_dim").get<int>();
            cfg.denoiser.input_h = c.at("input_h").get<int>();
            cfg.denoiser.input_w = c.at("input_w").get<int>();
            cfg.denoiser.total_steps = c.at("total_steps").get<int>();
            cfg.beta_start = j.at("beta_start").get<double>();
            cfg.beta_end = j.at("beta_end").get<double>();
            break;
        }
    }
    return cfg;
}

std::string tensor_file_name(size_t index, const std::string& name) {
    std::ostringstream s;
    s << "p" << index << "_" << name << ".etb";
    return s.str();
}

constexpr int kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "params");

    json manifest;
    manifest["schema_version"] = kCheckpointVersion;
    manifest["container"] = "checkpoint";
    manifest["model_kind"] = to_string(ckpt.kind);
    manifest["epochs_completed"] = ckpt.epochs_completed;
    manifest["config"] = config_json(ckpt.config);
    manifest["condition_schema"] = condition_schema_json(ckpt.bounds);

    json hist = json::array();
    for (const auto& m : ckpt.history) {
        json e;
        e["epoch"] = m.epoch;
        e["loss"] = m.loss;
        e["parts"] = m.parts;
        hist.push_back(std::move(e));
    }
    manifest["history"] = std::move(hist);

    json tensors = json::array();
    for (size_t i = 0; i < ckpt.tensors.size(); ++i) {
        const auto& [name, t] = ckpt.tensors[i];
        std::string file = tensor_file_name(i, name);
        tensors.push_back({{"name", name}, {"file", "params/" + file}});
        save_tensor_blob((fs::path(dir) / "params" / file).string(), name, t);
    }
    manifest["tensors"] = std::move(tensors);

    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw io_error("cannot write checkpoint manifest in " + dir);
    mf << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw io_error("cannot open checkpoint manifest in " + dir);
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw format_error("corrupt checkpoint manifest in " + dir + ": " + e.what());
    }

    try {
        if (manifest.value("container", "") != "checkpoint")
            throw format_error("not a checkpoint container: " + dir);
        int version = manifest.at("schema_version").get<int>();
        if (version != kCheckpointVersion)
            throw format_error("checkpoint schema version " + std::to_string(version) +
                               " unsupported (expected " + std::to_string(kCheckpointVersion) +
                               ")");
        if (!manifest.contains("condition_schema"))
            throw format_error("checkpoint manifest missing condition_schema");

        Checkpoint ckpt;
        ckpt.kind = model_kind_from_string(manifest.at("model_kind").get<std::string>());
        ckpt.config = config_from_json(manifest.at("config"), ckpt.kind);
        ckpt.epochs_completed = manifest.at("epochs_completed").get<int>();

        const json& bounds = manifest.at("condition_schema").at("lat_lon_bounds");
        ckpt.bounds.lat_min = bounds.at("lat_min").get<double>();
        ckpt.bounds.lat_max = bounds.at("lat_max").get<double>();
        ckpt.bounds.lon_min = bounds.at("lon_min").get<double>();
        ckpt.bounds.lon_max = bounds.at("lon_max").get<double>();

        for (const json& e : manifest.at("history")) {
            EpochMetrics m;
            m.epoch = e.at("epoch").get<int>();
            m.loss = e.at("loss").get<double>();
            for (const auto& [k, v] : e.at("parts").items()) m.parts[k] = v.get<double>();
            ckpt.history.push_back(std::move(m));
        }

        for (const json& e : manifest.at("tensors")) {
            std::string name = e.at("name").get<std::string>();
            std::string file = e.at("file").get<std::string>();
            auto [blob_name, t] = load_tensor_blob((fs::path(dir) / file).string());
            if (blob_name != name)
                throw format_error("checkpoint tensor name mismatch: manifest '" + name +
                                   "' vs blob '" + blob_name + "'");
            ckpt.tensors.emplace_back(std::move(name), std::move(t));
        }
        return ckpt;
    } catch (const json::exception& e) {
        throw format_error("invalid checkpoint manifest in " + dir + ": " + e.what());
    }
}

namespace {

void load_params(nn::ParamSet<float>& params, const Checkpoint& ckpt) {
    for (const auto& r : params.refs()) {
        bool found = false;
        for (const auto& [name, t] : ckpt.tensors) {
            if (name != r.name) continue;
            if (t.shape() != r.value->shape())
                throw format_error("checkpoint tensor '" + name + "' has shape " +
                                   t.shape_str() + ", model expects " + r.value->shape_str());
            *r.value = t;
            found = true;
            break;
        }
        if (!found) throw format_error("checkpoint is missing tensor '" + r.name + "'");
    }
}

void require_kind(const Checkpoint& ckpt, ModelKind want) {
    if (ckpt.kind != want)
        throw contract_error(std::string("checkpoint holds a ") + to_string(ckpt.kind) +
                             " model, not " + to_string(want));
}

}  // namespace

DenoiserNetF restore_denoiser(const Checkpoint& ckpt) {
    require_kind(ckpt, ModelKind::diffusion);
    DenoiserNetF net(ckpt.config.denoiser);
    auto params = net.params();
    load_params(params, ckpt);
    return net;
}

CVAENetF restore_cvae(const Checkpoint& ckpt) {
    require_kind(ckpt, ModelKind::cvae);
    CVAENetF net(ckpt.config.cvae);
    auto params = net.params();
    load_params(params, ckpt);
    return net;
}

CGANNetF restore_cgan(const Checkpoint& ckpt) {
    require_kind(ckpt, ModelKind::cgan);
    CGANNetF net(ckpt.config.cgan);
    auto gen = net.gen_params();
    load_params(gen, ckpt);
    auto disc = net.disc_params();
    load_params(disc, ckpt);
    return net;
}

SampleFn make_sampler(const Checkpoint& ckpt) {
    switch (ckpt.kind) {
        case ModelKind::cvae:
            return cvae_sampler(std::make_shared<CVAENetF>(restore_cvae(ckpt)));
        case ModelKind::cgan:
            return cgan_sampler(std::make_shared<CGANNetF>(restore_cgan(ckpt)));
        case ModelKind::diffusion:
            return diffusion_sampler(
                std::make_shared<DenoiserNetF>(restore_denoiser(ckpt)),
                NoiseSchedule(ckpt.config.denoiser.total_steps, ckpt.config.beta_start,
                              ckpt.config.beta_end));
    }
    throw contract_error("invalid model kind");
}

}  // namespace energen
