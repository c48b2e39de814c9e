#pragma once

#include <cmath>
#include <vector>

#include "energen/nn.hpp"

namespace energen {

struct DenoiserConfig {
    int hidden_features = 64;
    int context_dim = kConditionDims;
    int time_embed_dim = 64;  // width of both the time and context embeddings
    int input_h = kImageWeeks;
    int input_w = kImageHoursPerWeek;
    int total_steps = 500;

    void validate() const {
        if (hidden_features < 1) throw config_error("denoiser: hidden_features must be >= 1");
        if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
            throw config_error("denoiser: time_embed_dim must be a positive even number");
        if (context_dim < 1) throw config_error("denoiser: context_dim must be >= 1");
        if (total_steps < 2) throw config_error("denoiser: total_steps must be >= 2");
    }
};

// Sinusoidal embedding of u = t/T: [sin(w_k u), cos(w_k u)] with geometric
// frequencies w_k from T down to T/10000, so the k=0 angle is just t.
template <typename T>
Tensor<T> time_embedding(int t, int total_steps, int dim) {
    if (dim < 2 || dim % 2 != 0) throw config_error("time embedding dim must be even");
    if (t < 1 || t > total_steps)
        throw contract_error("time embedding: t=" + std::to_string(t) + " outside [1, " +
                             std::to_string(total_steps) + "]");
    int half = dim / 2;
    Tensor<T> emb({dim});
    double u = static_cast<double>(t) / static_cast<double>(total_steps);
    for (int k = 0; k < half; ++k) {
        double expo = half == 1 ? 0.0 : static_cast<double>(k) / (half - 1);
        double w = static_cast<double>(total_steps) * std::pow(10000.0, -expo);
        emb.data()[k] = static_cast<T>(std::sin(w * u));
        emb.data()[half + k] = static_cast<T>(std::cos(w * u));
    }
    return emb;
}

// Context-conditioned U-Net epsilon-predictor. Two stride-2 stages down and
// back up with additive skips; each decoder stage is FiLM-modulated (scale
// from the context embedding, shift from the time embedding). Inputs whose
// spatial dims are not multiples of 4 are edge-padded and the output cropped.
template <typename T>
class DenoiserNet {
  public:
    explicit DenoiserNet(const DenoiserConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        int h = cfg.hidden_features, e = cfg.time_embed_dim;
        enc0_ = nn::Conv2D<T>(1, h, 3, 1, 1);
        down1_ = nn::Conv2D<T>(h, h, 3, 2, 1);
        down2_ = nn::Conv2D<T>(h, h, 3, 2, 1);
        up1_ = nn::ConvT2D<T>(h, h, 3, 2, 1);
        up2_ = nn::ConvT2D<T>(h, h, 3, 2, 1);
        out_ = nn::Conv2D<T>(h, 1, 3, 1, 1);
        ctx_dense_ = nn::Dense<T>(cfg.context_dim, e);
        time_dense_ = nn::Dense<T>(e, e);
        film1_ = nn::Film<T>(e, h);
        film2_ = nn::Film<T>(e, h);
    }

    void init(uint64_t seed) {
        Rng rng(seed);
        enc0_.init(rng.derive(0));
        down1_.init(rng.derive(1));
        down2_.init(rng.derive(2));
        up1_.init(rng.derive(3));
        up2_.init(rng.derive(4));
        out_.init(rng.derive(5), 1.0);
        ctx_dense_.init(rng.derive(6));
        time_dense_.init(rng.derive(7));
        film1_.init(rng.derive(8));
        film2_.init(rng.derive(9));
        init_seed_ = seed;
    }

    nn::ParamSet<T> params() {
        nn::ParamSet<T> set;
        enc0_.collect("enc0", set);
        down1_.collect("down1", set);
        down2_.collect("down2", set);
        up1_.collect("up1", set);
        up2_.collect("up2", set);
        out_.collect("out", set);
        ctx_dense_.collect("ctx", set);
        time_dense_.collect("time", set);
        film1_.collect("film1", set);
        film2_.collect("film2", set);
        return set;
    }

    // x [N,1,H,W], ts one timestep per sample, cond [N, context_dim]
    Tensor<T> forward(const Tensor<T>& x, const std::vector<int>& ts, const Tensor<T>& cond) {
        nn::check_input(x, 4, "denoiser");
        if (x.dim(1) != 1 || x.dim(2) != cfg_.input_h || x.dim(3) != cfg_.input_w)
            throw contract_error("denoiser: expected [N,1," + std::to_string(cfg_.input_h) + "," +
                                 std::to_string(cfg_.input_w) + "], got " + x.shape_str());
        int n = x.dim(0);
        if (static_cast<int>(ts.size()) != n || cond.ndim() != 2 || cond.dim(0) != n ||
            cond.dim(1) != cfg_.context_dim)
            throw contract_error("denoiser: batch size mismatch between x, t, and condition");

        int e = cfg_.time_embed_dim;
        Tensor<T> temb_raw({n, e});
        for (int i = 0; i < n; ++i) {
            Tensor<T> emb = time_embedding<T>(ts[i], cfg_.total_steps, e);
            std::copy(emb.data(), emb.data() + e, temb_raw.data() + static_cast<size_t>(i) * e);
        }
        time_emb_ = time_act_.forward(time_dense_.forward(temb_raw));
        ctx_emb_ = ctx_act_.forward(ctx_dense_.forward(cond));

        Tensor<T> xp = nn::pad_replicate(x, 4);
        hp_ = xp.dim(2);
        wp_ = xp.dim(3);
        a0_ = act0_.forward(enc0_.forward(xp));
        a1_ = act1_.forward(down1_.forward(a0_));
        Tensor<T> a2 = act2_.forward(down2_.forward(a1_));

        Tensor<T> h1 = film1_.forward(up1_.forward(a2), ctx_emb_, time_emb_);
        for (size_t i = 0; i < h1.size(); ++i) h1.data()[i] += a1_.data()[i];
        Tensor<T> b1 = actu1_.forward(h1);

        Tensor<T> h2 = film2_.forward(up2_.forward(b1), ctx_emb_, time_emb_);
        for (size_t i = 0; i < h2.size(); ++i) h2.data()[i] += a0_.data()[i];
        Tensor<T> b2 = actu2_.forward(h2);

        return nn::crop(out_.forward(b2), cfg_.input_h, cfg_.input_w);
    }

    // d_eps has the forward output's shape; parameter gradients accumulate.
    void backward(const Tensor<T>& d_eps) {
        Tensor<T> dctx = Tensor<T>::zeros(ctx_emb_.shape());
        Tensor<T> dtime = Tensor<T>::zeros(time_emb_.shape());

        Tensor<T> db2 = out_.backward(nn::crop_backward(d_eps, hp_, wp_));
        Tensor<T> dh2 = actu2_.backward(db2);
        // dh2 splits into the decoder branch and the a0 skip
        Tensor<T> db1 = up2_.backward(film2_.backward(dh2, dctx, dtime));
        Tensor<T> dh1 = actu1_.backward(db1);
        Tensor<T> da2 = up1_.backward(film1_.backward(dh1, dctx, dtime));

        Tensor<T> da1 = down2_.backward(act2_.backward(da2));
        for (size_t i = 0; i < da1.size(); ++i) da1.data()[i] += dh1.data()[i];  // a1 skip
        Tensor<T> da0 = down1_.backward(act1_.backward(da1));
        for (size_t i = 0; i < da0.size(); ++i) da0.data()[i] += dh2.data()[i];  // a0 skip
        enc0_.backward(act0_.backward(da0));

        ctx_dense_.backward(ctx_act_.backward(dctx));
        time_dense_.backward(time_act_.backward(dtime));
    }

    const DenoiserConfig& config() const { return cfg_; }
    uint64_t init_seed() const { return init_seed_; }

  private:
    DenoiserConfig cfg_;
    uint64_t init_seed_ = 0;
    nn::Conv2D<T> enc0_, down1_, down2_, out_;
    nn::ConvT2D<T> up1_, up2_;
    nn::Dense<T> ctx_dense_, time_dense_;
    nn::Film<T> film1_, film2_;
    nn::ReLU<T> act0_, act1_, act2_, actu1_, actu2_, ctx_act_, time_act_;
    Tensor<T> a0_, a1_, ctx_emb_, time_emb_;
    int hp_ = 0, wp_ = 0;
};

using DenoiserNetF = DenoiserNet<float>;

}  // namespace energen
