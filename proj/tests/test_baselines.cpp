#include <doctest.h>

#include <cmath>

#include "energen/baselines.hpp"
#include "grad_check.hpp"

using namespace energen;
using testutil::random_tensor;

namespace {

CVAEConfig tiny_cvae() {
    CVAEConfig cfg;
    cfg.encoder_filters = {2, 3, 4};
    cfg.decoder_filters = {4, 3, 2};
    cfg.dense_dim = 5;
    cfg.latent_dim = 6;
    cfg.context_dim = 3;
    cfg.input_h = 8;
    cfg.input_w = 8;
    return cfg;
}

CGANConfig tiny_cgan() {
    CGANConfig cfg;
    cfg.disc_filters = {3, 4, 5};
    cfg.gen_filters = {5, 4, 3};
    cfg.noise_dim = 6;
    cfg.context_dim = 3;
    cfg.input_h = 8;
    cfg.input_w = 8;
    return cfg;
}

}  // namespace

TEST_CASE("gaussian kl against hand-computed values") {
    TensorD mu = TensorD::zeros({1, 3}), lv = TensorD::zeros({1, 3});
    CHECK(gaussian_kl(mu, lv) == doctest::Approx(0.0).epsilon(1e-12));

    mu.at(0, 0) = 1.0;
    mu.at(0, 1) = 0.0;
    mu.at(0, 2) = -2.0;
    TensorD dmu, dlv;
    double kl = gaussian_kl(mu, lv, &dmu, &dlv);
    // per-element -0.5*(1 + 0 - m^2 - 1) = m^2/2, mean over 3
    CHECK(kl == doctest::Approx((1.0 + 0.0 + 4.0) / 2.0 / 3.0).epsilon(1e-12));
    CHECK(dmu.at(0, 0) == doctest::Approx(1.0 / 3.0));
    CHECK(dmu.at(0, 2) == doctest::Approx(-2.0 / 3.0));
    CHECK(dlv.at(0, 1) == doctest::Approx(0.0));

    lv.at(0, 0) = std::log(4.0);
    gaussian_kl(mu, lv, &dmu, &dlv);
    CHECK(dlv.at(0, 0) == doctest::Approx(-0.5 * (1.0 - 4.0) / 3.0).epsilon(1e-12));

    CHECK_THROWS_AS(gaussian_kl(TensorD::zeros({1, 1}), lv), Error);
}

TEST_CASE("gaussian kl is nonnegative for random inputs") {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        auto mu = random_tensor({4, 8}, rng);
        auto lv = random_tensor({4, 8}, rng);
        CHECK(gaussian_kl(mu, lv) >= -1e-12);
    }
}

TEST_CASE("reparameterization is exact arithmetic") {
    TensorD mu({1, 2}), lv({1, 2}), eta({1, 2});
    mu.at(0, 0) = 0.3;
    mu.at(0, 1) = -1.0;
    lv.at(0, 0) = 0.0;
    lv.at(0, 1) = 2.0 * std::log(2.0);
    eta.at(0, 0) = 0.0;
    eta.at(0, 1) = 1.0;
    auto z = CVAENet<double>::reparameterize(mu, lv, eta);
    CHECK(z.at(0, 0) == doctest::Approx(0.3).epsilon(1e-12));   // eta 0 -> z = mu
    CHECK(z.at(0, 1) == doctest::Approx(-1.0 + 2.0).epsilon(1e-12));
}

TEST_CASE("cvae default configuration matches the published architecture") {
    CVAEConfig cfg;
    CHECK(cfg.latent_dim == 512);
    CHECK(cfg.encoder_filters == std::array<int, 3>{16, 32, 64});
    CHECK(cfg.decoder_filters == std::array<int, 3>{64, 32, 16});
    CHECK(cfg.kl_weight == 1.0);

    CVAENet<float> net(cfg);
    net.init(5);
    Rng rng(6);
    TensorF z({2, 512});
    rng.fill_normal(z.data(), z.size());
    TensorF cond = TensorF::zeros({2, 13});
    cond.at(0, 3) = 1.0f;
    cond.at(1, 4) = 1.0f;
    auto y = net.decode(z, cond);
    CHECK(y.shape() == std::vector<int>{2, 1, 52, 168});
    for (size_t i = 0; i < y.size(); ++i) {
        CHECK(y.data()[i] >= -1.0f);
        CHECK(y.data()[i] <= 1.0f);
    }

    // same latent, different condition: decoder must react
    TensorF z1({1, 512});
    std::copy(z.data(), z.data() + 512, z1.data());
    TensorF c1 = TensorF::zeros({1, 13}), c2 = TensorF::zeros({1, 13});
    c1.at(0, 3) = 1.0f;
    c2.at(0, 5) = 1.0f;
    auto y1 = net.decode(z1, c1);
    auto y2 = net.decode(z1, c2);
    float maxdiff = 0.0f;
    for (size_t i = 0; i < y1.size(); ++i)
        maxdiff = std::max(maxdiff, std::abs(y1.data()[i] - y2.data()[i]));
    CHECK(maxdiff > 1e-6f);
}

TEST_CASE("cvae encode and train step produce coherent shapes") {
    auto cfg = tiny_cvae();
    CVAENet<double> net(cfg);
    net.init(7);
    Rng rng(8);
    auto x = random_tensor({2, 1, 8, 8}, rng);
    auto cond = random_tensor({2, 3}, rng);

    Rng draw(1000);
    auto out = net.forward_train(x, cond, draw);
    CHECK(out.mu.shape() == std::vector<int>{2, 6});
    CHECK(out.logvar.shape() == std::vector<int>{2, 6});
    CHECK(out.z.shape() == std::vector<int>{2, 6});
    CHECK(out.recon.shape() == x.shape());

    // same draw seed reproduces the whole output
    Rng draw2(1000);
    auto out2 = net.forward_train(x, cond, draw2);
    for (size_t i = 0; i < out.recon.size(); ++i)
        CHECK(out.recon.data()[i] == out2.recon.data()[i]);
}

TEST_CASE("cvae loss parts against hand-computed values") {
    CVAENet<double>::Output out;
    TensorD x = TensorD::zeros({1, 1, 2, 2});
    out.recon = TensorD::zeros({1, 1, 2, 2});
    out.mu = TensorD::zeros({1, 3});
    out.logvar = TensorD::zeros({1, 3});
    auto parts = CVAENet<double>::loss_only(x, out, 1.0);
    CHECK(parts.recon_mse == doctest::Approx(0.0));
    CHECK(parts.kl == doctest::Approx(0.0));
    CHECK(parts.total == doctest::Approx(0.0));

    for (int j = 0; j < 3; ++j) out.mu.at(0, j) = 1.0;
    out.recon.at(0, 0, 0, 0) = 1.0;  // one wrong cell of four
    parts = CVAENet<double>::loss_only(x, out, 1.0);
    CHECK(parts.recon_mse == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(parts.kl == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(parts.total == doctest::Approx(0.75).epsilon(1e-12));

    parts = CVAENet<double>::loss_only(x, out, 0.25);
    CHECK(parts.total == doctest::Approx(0.25 + 0.125).epsilon(1e-12));
}

TEST_CASE("cvae gradients match finite differences") {
    auto cfg = tiny_cvae();
    CVAENet<double> net(cfg);
    net.init(2025);
    Rng rng(9);
    auto x = random_tensor({2, 1, 8, 8}, rng);
    auto cond = random_tensor({2, 3}, rng);

    auto params = net.params();
    testutil::jitter_params(params, rng);
    auto loss = [&] {
        Rng draw(424242);
        auto out = net.forward_train(x, cond, draw);
        return CVAENet<double>::loss_only(x, out, cfg.kl_weight).total;
    };
    params.zero_grads();
    Rng draw(424242);
    auto out = net.forward_train(x, cond, draw);
    auto parts = net.loss_and_backward(x, cond, out);
    CHECK(parts.total == doctest::Approx(loss()).epsilon(1e-12));
    testutil::check_gradients(params, loss, 2);
}

TEST_CASE("cgan generator is deterministic and bounded") {
    CGANConfig cfg;
    CHECK(cfg.noise_dim == 100);
    CHECK(cfg.disc_filters == std::array<int, 3>{32, 64, 128});
    CHECK(cfg.gen_filters == std::array<int, 3>{128, 64, 32});

    CGANNet<float> net(cfg);
    net.init(11);
    Rng rng(12);
    TensorF noise({2, 100});
    rng.fill_normal(noise.data(), noise.size());
    TensorF cond = TensorF::zeros({2, 13});
    cond.at(0, 3) = 1.0f;
    cond.at(1, 8) = 1.0f;
    auto y = net.generate(noise, cond);
    CHECK(y.shape() == std::vector<int>{2, 1, 52, 168});
    for (size_t i = 0; i < y.size(); ++i) {
        CHECK(y.data()[i] >= -1.0f);
        CHECK(y.data()[i] <= 1.0f);
    }
    auto y_again = net.generate(noise, cond);
    for (size_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == y_again.data()[i]);

    // the two rows saw different noise and conditions, so they must differ
    float maxdiff = 0.0f;
    for (size_t i = 0; i < y.size() / 2; ++i)
        maxdiff = std::max(maxdiff, std::abs(y.data()[i] - y.data()[y.size() / 2 + i]));
    CHECK(maxdiff > 1e-6f);

    auto p = net.discriminate(y, cond);
    CHECK(p.shape() == std::vector<int>{2, 1});
    for (size_t i = 0; i < p.size(); ++i) {
        CHECK(p.data()[i] > 0.0f);
        CHECK(p.data()[i] < 1.0f);
    }
}

TEST_CASE("cgan noise input is live") {
    auto cfg = tiny_cgan();
    CGANNet<double> net(cfg);
    net.init(13);
    Rng rng(14);
    auto n1 = random_tensor({1, 6}, rng);
    auto n2 = random_tensor({1, 6}, rng);
    TensorD cond = TensorD::zeros({1, 3});
    cond.at(0, 1) = 1.0;
    auto y1 = net.generate(n1, cond);
    auto y2 = net.generate(n2, cond);
    double maxdiff = 0.0;
    for (size_t i = 0; i < y1.size(); ++i)
        maxdiff = std::max(maxdiff, std::abs(y1.data()[i] - y2.data()[i]));
    CHECK(maxdiff > 1e-6);
}

TEST_CASE("bce loss at one half is ln 2") {
    TensorD p({2, 1});
    p.at(0, 0) = 0.5;
    p.at(1, 0) = 0.5;
    TensorD d;
    CHECK(nn::bce_loss(p, 1.0, &d) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(nn::bce_loss(p, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // d/dp of -log(p)/n at p=0.5, n=2: -1/(0.5*2) = -1
    CHECK(d.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("cgan discriminator gradients match finite differences") {
    auto cfg = tiny_cgan();
    CGANNet<double> net(cfg);
    net.init(2026);
    Rng rng(15);
    auto x = random_tensor({2, 1, 8, 8}, rng);
    auto cond = random_tensor({2, 3}, rng);

    auto params = net.disc_params();
    testutil::jitter_params(params, rng);
    auto loss = [&] { return nn::bce_loss(net.discriminate(x, cond), 1.0); };
    params.zero_grads();
    TensorD dp;
    nn::bce_loss(net.discriminate(x, cond), 1.0, &dp);
    net.discriminate_backward(dp);
    testutil::check_gradients(params, loss, 2);
}

TEST_CASE("cgan generator gradients flow through the discriminator") {
    auto cfg = tiny_cgan();
    CGANNet<double> net(cfg);
    net.init(2027);
    Rng rng(16);
    auto noise = random_tensor({2, 6}, rng);
    auto cond = random_tensor({2, 3}, rng);

    auto params = net.gen_params();
    testutil::jitter_params(params, rng);
    auto loss = [&] {
        return nn::bce_loss(net.discriminate(net.generate(noise, cond), cond), 1.0);
    };
    params.zero_grads();
    auto y = net.generate(noise, cond);
    TensorD dp;
    nn::bce_loss(net.discriminate(y, cond), 1.0, &dp);
    auto dx = net.discriminate_backward(dp);
    CHECK(dx.shape() == y.shape());
    net.generate_backward(dx);
    testutil::check_gradients(params, loss, 2);
}
