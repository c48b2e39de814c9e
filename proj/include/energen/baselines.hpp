#pragma once

#include <array>
#include <vector>

#include "energen/nn.hpp"

namespace energen {

struct CVAEConfig {
    std::array<int, 3> encoder_filters{16, 32, 64};
    int dense_dim = 64;
    int latent_dim = 512;
    std::array<int, 3> decoder_filters{64, 32, 16};
    int context_dim = kConditionDims;
    int input_h = kImageWeeks;
    int input_w = kImageHoursPerWeek;
    double kl_weight = 1.0;

    void validate() const {
        for (int f : encoder_filters)
            if (f < 1) throw config_error("cvae: encoder filters must be >= 1");
        for (int f : decoder_filters)
            if (f < 1) throw config_error("cvae: decoder filters must be >= 1");
        if (latent_dim < 1 || dense_dim < 1) throw config_error("cvae: dims must be >= 1");
    }
};

struct CVAELossParts {
    double total = 0.0;
    double recon_mse = 0.0;
    double kl = 0.0;
};

// Gaussian KL to the unit prior, averaged over batch and latent dims.
// d_mu and d_logvar, when given, receive the gradients (overwritten).
template <typename T>
double gaussian_kl(const Tensor<T>& mu, const Tensor<T>& logvar, Tensor<T>* d_mu = nullptr,
                   Tensor<T>* d_logvar = nullptr) {
    if (mu.shape() != logvar.shape())
        throw contract_error("gaussian_kl: mu " + mu.shape_str() + " vs logvar " +
                             logvar.shape_str());
    double sum = 0.0;
    size_t n = mu.size();
    if (d_mu) *d_mu = Tensor<T>(mu.shape());
    if (d_logvar) *d_logvar = Tensor<T>(logvar.shape());
    for (size_t i = 0; i < n; ++i) {
        double m = mu.data()[i], lv = logvar.data()[i];
        sum += 1.0 + lv - m * m - std::exp(lv);
        if (d_mu) d_mu->data()[i] = static_cast<T>(m / static_cast<double>(n));
        if (d_logvar)
            d_logvar->data()[i] = static_cast<T>(-0.5 * (1.0 - std::exp(lv)) / static_cast<double>(n));
    }
    return -0.5 * sum / static_cast<double>(n);
}

// Conditional VAE. The condition enters the encoder as broadcast channels and
// the decoder as extra latent-vector columns. Spatial dims are edge-padded to
// multiples of 8 (three stride-2 stages) and cropped on the way out.
template <typename T>
class CVAENet {
  public:
    struct Output {
        Tensor<T> recon;          // [N,1,H,W]
        Tensor<T> mu, logvar, z;  // [N, latent]
        Tensor<T> eta;            // the stored reparameterization draw
    };

    explicit CVAENet(const CVAEConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        hp_ = nn::padded_dim(cfg.input_h, 8);
        wp_ = nn::padded_dim(cfg.input_w, 8);
        bh_ = hp_ / 8;
        bw_ = wp_ / 8;
        auto [e0, e1, e2] = cfg.encoder_filters;
        auto [d0, d1, d2] = cfg.decoder_filters;
        enc1_ = nn::Conv2D<T>(1 + cfg.context_dim, e0, 3, 2, 1);
        enc2_ = nn::Conv2D<T>(e0, e1, 3, 2, 1);
        enc3_ = nn::Conv2D<T>(e1, e2, 3, 2, 1);
        enc_dense_ = nn::Dense<T>(e2 * bh_ * bw_, cfg.dense_dim);
        mu_head_ = nn::Dense<T>(cfg.dense_dim, cfg.latent_dim);
        logvar_head_ = nn::Dense<T>(cfg.dense_dim, cfg.latent_dim);
        dec_dense1_ = nn::Dense<T>(cfg.latent_dim + cfg.context_dim, cfg.dense_dim);
        dec_dense2_ = nn::Dense<T>(cfg.dense_dim, d0 * bh_ * bw_);
        dec_t1_ = nn::ConvT2D<T>(d0, d1, 3, 2, 1);
        dec_t2_ = nn::ConvT2D<T>(d1, d2, 3, 2, 1);
        dec_t3_ = nn::ConvT2D<T>(d2, 1, 3, 2, 1);
    }

    void init(uint64_t seed) {
        Rng rng(seed);
        enc1_.init(rng.derive(0));
        enc2_.init(rng.derive(1));
        enc3_.init(rng.derive(2));
        enc_dense_.init(rng.derive(3));
        mu_head_.init(rng.derive(4), 1.0);
        logvar_head_.init(rng.derive(5), 1.0);
        dec_dense1_.init(rng.derive(6));
        dec_dense2_.init(rng.derive(7));
        dec_t1_.init(rng.derive(8));
        dec_t2_.init(rng.derive(9));
        dec_t3_.init(rng.derive(10), 1.0);
        init_seed_ = seed;
    }

    nn::ParamSet<T> params() {
        nn::ParamSet<T> set;
        enc1_.collect("enc1", set);
        enc2_.collect("enc2", set);
        enc3_.collect("enc3", set);
        enc_dense_.collect("enc_dense", set);
        mu_head_.collect("mu", set);
        logvar_head_.collect("logvar", set);
        dec_dense1_.collect("dec_dense1", set);
        dec_dense2_.collect("dec_dense2", set);
        dec_t1_.collect("dec_t1", set);
        dec_t2_.collect("dec_t2", set);
        dec_t3_.collect("dec_t3", set);
        return set;
    }

    // Encoder half: (mu, logvar, z) with z = mu + exp(logvar/2) * eta.
    Output encode(const Tensor<T>& x, const Tensor<T>& cond, Rng& rng) {
        Output out;
        encode_heads(x, cond, &out.mu, &out.logvar);
        out.eta = Tensor<T>(out.mu.shape());
        rng.fill_normal(out.eta.data(), out.eta.size());
        out.z = reparameterize(out.mu, out.logvar, out.eta);
        return out;
    }

    Tensor<T> decode(const Tensor<T>& z, const Tensor<T>& cond) {
        Tensor<T> zc = nn::concat_cols(z, cond);
        Tensor<T> h = dec_act1_.forward(dec_dense1_.forward(zc));
        Tensor<T> flat = dec_act2_.forward(dec_dense2_.forward(h));
        Tensor<T> grid =
            flat.reshaped({flat.dim(0), cfg_.decoder_filters[0], bh_, bw_});
        Tensor<T> u1 = dec_tact1_.forward(dec_t1_.forward(grid));
        Tensor<T> u2 = dec_tact2_.forward(dec_t2_.forward(u1));
        Tensor<T> y = out_act_.forward(dec_t3_.forward(u2));
        return nn::crop(y, cfg_.input_h, cfg_.input_w);
    }

    Output forward_train(const Tensor<T>& x, const Tensor<T>& cond, Rng& rng) {
        Output out = encode(x, cond, rng);
        out.recon = decode(out.z, cond);
        return out;
    }

    // Loss and full parameter-gradient accumulation for one batch.
    CVAELossParts loss_and_backward(const Tensor<T>& x, const Tensor<T>& cond, const Output& out) {
        CVAELossParts parts;
        Tensor<T> d_recon;
        parts.recon_mse = nn::mse_loss(out.recon, x, &d_recon);
        Tensor<T> d_mu_kl, d_logvar_kl;
        parts.kl = gaussian_kl(out.mu, out.logvar, &d_mu_kl, &d_logvar_kl);
        parts.total = parts.recon_mse + cfg_.kl_weight * parts.kl;

        Tensor<T> dz = decode_backward(d_recon);
        // reparameterization: z = mu + exp(logvar/2) * eta
        Tensor<T> d_mu(out.mu.shape()), d_logvar(out.logvar.shape());
        for (size_t i = 0; i < dz.size(); ++i) {
            double sd = std::exp(0.5 * static_cast<double>(out.logvar.data()[i]));
            d_mu.data()[i] =
                dz.data()[i] + static_cast<T>(cfg_.kl_weight) * d_mu_kl.data()[i];
            d_logvar.data()[i] =
                static_cast<T>(dz.data()[i] * 0.5 * sd * out.eta.data()[i]) +
                static_cast<T>(cfg_.kl_weight) * d_logvar_kl.data()[i];
        }
        encode_backward(d_mu, d_logvar);
        return parts;
    }

    static CVAELossParts loss_only(const Tensor<T>& x, const Output& out, double kl_weight) {
        CVAELossParts parts;
        parts.recon_mse = nn::mse_loss(out.recon, x);
        parts.kl = gaussian_kl(out.mu, out.logvar);
        parts.total = parts.recon_mse + kl_weight * parts.kl;
        return parts;
    }

    static Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar,
                                    const Tensor<T>& eta) {
        Tensor<T> z(mu.shape());
        for (size_t i = 0; i < z.size(); ++i)
            z.data()[i] = mu.data()[i] +
                          static_cast<T>(std::exp(0.5 * static_cast<double>(logvar.data()[i]))) *
                              eta.data()[i];
        return z;
    }

    const CVAEConfig& config() const { return cfg_; }
    uint64_t init_seed() const { return init_seed_; }

  private:
    void encode_heads(const Tensor<T>& x, const Tensor<T>& cond, Tensor<T>* mu,
                      Tensor<T>* logvar) {
        nn::check_input(x, 4, "cvae encode");
        if (x.dim(2) != cfg_.input_h || x.dim(3) != cfg_.input_w || x.dim(1) != 1)
            throw contract_error("cvae: expected [N,1," + std::to_string(cfg_.input_h) + "," +
                                 std::to_string(cfg_.input_w) + "], got " + x.shape_str());
        if (cond.dim(0) != x.dim(0) || cond.dim(1) != cfg_.context_dim)
            throw contract_error("cvae: condition shape " + cond.shape_str() + " mismatch");
        Tensor<T> xp = nn::pad_replicate(x, 8);
        Tensor<T> cin = nn::concat_channels(xp, nn::broadcast_channels(cond, hp_, wp_));
        Tensor<T> h1 = enc_act1_.forward(enc1_.forward(cin));
        Tensor<T> h2 = enc_act2_.forward(enc2_.forward(h1));
        Tensor<T> h3 = enc_act3_.forward(enc3_.forward(h2));
        Tensor<T> flat = h3.reshaped({h3.dim(0), cfg_.encoder_filters[2] * bh_ * bw_});
        Tensor<T> hd = enc_dact_.forward(enc_dense_.forward(flat));
        *mu = mu_head_.forward(hd);
        *logvar = logvar_head_.forward(hd);
    }

    Tensor<T> decode_backward(const Tensor<T>& d_recon) {
        Tensor<T> dy = nn::crop_backward(d_recon, hp_, wp_);
        Tensor<T> du2 = dec_t3_.backward(out_act_.backward(dy));
        Tensor<T> du1 = dec_t2_.backward(dec_tact2_.backward(du2));
        Tensor<T> dgrid = dec_t1_.backward(dec_tact1_.backward(du1));
        Tensor<T> dflat =
            dgrid.reshaped({dgrid.dim(0), cfg_.decoder_filters[0] * bh_ * bw_});
        Tensor<T> dh = dec_dense2_.backward(dec_act2_.backward(dflat));
        Tensor<T> dzc = dec_dense1_.backward(dec_act1_.backward(dh));
        // drop the condition columns
        int n = dzc.dim(0);
        Tensor<T> dz({n, cfg_.latent_dim});
        for (int i = 0; i < n; ++i)
            std::copy(dzc.data() + dzc.offset(i), dzc.data() + dzc.offset(i) + cfg_.latent_dim,
                      dz.data() + dz.offset(i));
        return dz;
    }

    void encode_backward(const Tensor<T>& d_mu, const Tensor<T>& d_logvar) {
        Tensor<T> dhd = mu_head_.backward(d_mu);
        Tensor<T> dhd2 = logvar_head_.backward(d_logvar);
        for (size_t i = 0; i < dhd.size(); ++i) dhd.data()[i] += dhd2.data()[i];
        Tensor<T> dflat = enc_dense_.backward(enc_dact_.backward(dhd));
        Tensor<T> dh3 = dflat.reshaped({dflat.dim(0), cfg_.encoder_filters[2], bh_, bw_});
        Tensor<T> dh2 = enc3_.backward(enc_act3_.backward(dh3));
        Tensor<T> dh1 = enc2_.backward(enc_act2_.backward(dh2));
        enc1_.backward(enc_act1_.backward(dh1));
    }

    CVAEConfig cfg_;
    uint64_t init_seed_ = 0;
    int hp_ = 0, wp_ = 0, bh_ = 0, bw_ = 0;
    nn::Conv2D<T> enc1_, enc2_, enc3_;
    nn::Dense<T> enc_dense_, mu_head_, logvar_head_, dec_dense1_, dec_dense2_;
    nn::ConvT2D<T> dec_t1_, dec_t2_, dec_t3_;
    nn::ReLU<T> enc_act1_, enc_act2_, enc_act3_, enc_dact_, dec_act1_, dec_act2_, dec_tact1_,
        dec_tact2_;
    nn::Tanh<T> out_act_;
};

struct CGANConfig {
    std::array<int, 3> disc_filters{32, 64, 128};
    std::array<int, 3> gen_filters{128, 64, 32};
    int noise_dim = 100;
    int context_dim = kConditionDims;
    int input_h = kImageWeeks;
    int input_w = kImageHoursPerWeek;

    void validate() const {
        if (noise_dim < 1) throw config_error("cgan: noise_dim must be >= 1");
        for (int f : disc_filters)
            if (f < 1) throw config_error("cgan: disc filters must be >= 1");
        for (int f : gen_filters)
            if (f < 1) throw config_error("cgan: gen filters must be >= 1");
    }
};

// Conditional GAN. The generator concatenates noise and condition into one
// vector; the discriminator sees the condition as broadcast channels.
template <typename T>
class CGANNet {
  public:
    explicit CGANNet(const CGANConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        hp_ = nn::padded_dim(cfg.input_h, 8);
        wp_ = nn::padded_dim(cfg.input_w, 8);
        bh_ = hp_ / 8;
        bw_ = wp_ / 8;
        auto [g0, g1, g2] = cfg.gen_filters;
        auto [d0, d1, d2] = cfg.disc_filters;
        gen_dense_ = nn::Dense<T>(cfg.noise_dim + cfg.context_dim, g0 * bh_ * bw_);
        gen_t1_ = nn::ConvT2D<T>(g0, g1, 3, 2, 1);
        gen_t2_ = nn::ConvT2D<T>(g1, g2, 3, 2, 1);
        gen_t3_ = nn::ConvT2D<T>(g2, 1, 3, 2, 1);
        disc_c1_ = nn::Conv2D<T>(1 + cfg.context_dim, d0, 3, 2, 1);
        disc_c2_ = nn::Conv2D<T>(d0, d1, 3, 2, 1);
        disc_c3_ = nn::Conv2D<T>(d1, d2, 3, 2, 1);
        disc_dense_ = nn::Dense<T>(d2 * bh_ * bw_, 1);
    }

    void init(uint64_t seed) {
        Rng rng(seed);
        gen_dense_.init(rng.derive(0));
        gen_t1_.init(rng.derive(1));
        gen_t2_.init(rng.derive(2));
        gen_t3_.init(rng.derive(3), 1.0);
        disc_c1_.init(rng.derive(4));
        disc_c2_.init(rng.derive(5));
        disc_c3_.init(rng.derive(6));
        disc_dense_.init(rng.derive(7), 1.0);
        init_seed_ = seed;
    }

    nn::ParamSet<T> gen_params() {
        nn::ParamSet<T> set;
        gen_dense_.collect("gen_dense", set);
        gen_t1_.collect("gen_t1", set);
        gen_t2_.collect("gen_t2", set);
        gen_t3_.collect("gen_t3", set);
        return set;
    }

    nn::ParamSet<T> disc_params() {
        nn::ParamSet<T> set;
        disc_c1_.collect("disc_c1", set);
        disc_c2_.collect("disc_c2", set);
        disc_c3_.collect("disc_c3", set);
        disc_dense_.collect("disc_dense", set);
        return set;
    }

    // noise [N, noise_dim], cond [N, context_dim] -> image [N,1,H,W] in [-1,1]
    Tensor<T> generate(const Tensor<T>& noise, const Tensor<T>& cond) {
        if (noise.ndim() != 2 || noise.dim(1) != cfg_.noise_dim)
            throw contract_error("cgan: noise must be [N," + std::to_string(cfg_.noise_dim) +
                                 "], got " + noise.shape_str());
        if (cond.dim(0) != noise.dim(0) || cond.dim(1) != cfg_.context_dim)
            throw contract_error("cgan: condition shape " + cond.shape_str() + " mismatch");
        Tensor<T> nc = nn::concat_cols(noise, cond);
        Tensor<T> flat = gen_act0_.forward(gen_dense_.forward(nc));
        Tensor<T> grid = flat.reshaped({flat.dim(0), cfg_.gen_filters[0], bh_, bw_});
        Tensor<T> u1 = gen_act1_.forward(gen_t1_.forward(grid));
        Tensor<T> u2 = gen_act2_.forward(gen_t2_.forward(u1));
        Tensor<T> y = gen_out_act_.forward(gen_t3_.forward(u2));
        return nn::crop(y, cfg_.input_h, cfg_.input_w);
    }

    void generate_backward(const Tensor<T>& dy) {
        Tensor<T> d = nn::crop_backward(dy, hp_, wp_);
        Tensor<T> du2 = gen_t3_.backward(gen_out_act_.backward(d));
        Tensor<T> du1 = gen_t2_.backward(gen_act2_.backward(du2));
        Tensor<T> dgrid = gen_t1_.backward(gen_act1_.backward(du1));
        Tensor<T> dflat = dgrid.reshaped({dgrid.dim(0), cfg_.gen_filters[0] * bh_ * bw_});
        gen_dense_.backward(gen_act0_.backward(dflat));
    }

    // x [N,1,H,W] -> probability of "real", [N,1], strictly inside (0,1)
    Tensor<T> discriminate(const Tensor<T>& x, const Tensor<T>& cond) {
        nn::check_input(x, 4, "cgan discriminate");
        if (x.dim(2) != cfg_.input_h || x.dim(3) != cfg_.input_w)
            throw contract_error("cgan: expected images [N,1," + std::to_string(cfg_.input_h) +
                                 "," + std::to_string(cfg_.input_w) + "], got " + x.shape_str());
        Tensor<T> xp = nn::pad_replicate(x, 8);
        Tensor<T> cin = nn::concat_channels(xp, nn::broadcast_channels(cond, hp_, wp_));
        Tensor<T> h1 = disc_act1_.forward(disc_c1_.forward(cin));
        Tensor<T> h2 = disc_act2_.forward(disc_c2_.forward(h1));
        Tensor<T> h3 = disc_act3_.forward(disc_c3_.forward(h2));
        Tensor<T> flat = h3.reshaped({h3.dim(0), cfg_.disc_filters[2] * bh_ * bw_});
        return disc_out_act_.forward(disc_dense_.forward(flat));
    }

    // Returns d(loss)/d(x) cropped to the generator's output shape so the
    // generator update can continue the chain.
    Tensor<T> discriminate_backward(const Tensor<T>& dprobs) {
        Tensor<T> dflat = disc_dense_.backward(disc_out_act_.backward(dprobs));
        Tensor<T> dh3 = dflat.reshaped({dflat.dim(0), cfg_.disc_filters[2], bh_, bw_});
        Tensor<T> dh2 = disc_c3_.backward(disc_act3_.backward(dh3));
        Tensor<T> dh1 = disc_c2_.backward(disc_act2_.backward(dh2));
        Tensor<T> dcin = disc_c1_.backward(disc_act1_.backward(dh1));
        Tensor<T> dxp = nn::slice_channels(dcin, 0, 1);
        return nn::pad_replicate_backward(dxp, cfg_.input_h, cfg_.input_w);
    }

    const CGANConfig& config() const { return cfg_; }
    uint64_t init_seed() const { return init_seed_; }

  private:
    CGANConfig cfg_;
    uint64_t init_seed_ = 0;
    int hp_ = 0, wp_ = 0, bh_ = 0, bw_ = 0;
    nn::Dense<T> gen_dense_, disc_dense_;
    nn::ConvT2D<T> gen_t1_, gen_t2_, gen_t3_;
    nn::Conv2D<T> disc_c1_, disc_c2_, disc_c3_;
    nn::ReLU<T> gen_act0_, gen_act1_, gen_act2_;
    nn::LeakyReLU<T> disc_act1_, disc_act2_, disc_act3_;
    nn::Tanh<T> gen_out_act_;
    nn::Sigmoid<T> disc_out_act_;
};

using CVAENetF = CVAENet<float>;
using CGANNetF = CGANNet<float>;

}  // namespace energen
