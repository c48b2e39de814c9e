#include <doctest.h>

#include <cmath>

#include "energen/nn.hpp"
#include "grad_check.hpp"

using namespace energen;
using testutil::dot;
using testutil::random_tensor;

TEST_CASE("convolution output sizes follow the stride formula") {
    CHECK(nn::conv_out_dim(56, 3, 1, 1) == 56);
    CHECK(nn::conv_out_dim(56, 3, 2, 1) == 28);
    CHECK(nn::conv_out_dim(28, 3, 2, 1) == 14);
    CHECK(nn::conv_out_dim(14, 3, 2, 1) == 7);
    CHECK(nn::conv_out_dim(168, 3, 2, 1) == 84);
    CHECK(nn::conv_out_dim(21, 3, 2, 1) == 11);
}

TEST_CASE("all-ones 3x3 kernel sums the neighborhood") {
    nn::Conv2D<double> conv(1, 1, 3, 1, 1);
    conv.W.fill(1.0);
    conv.b.fill(0.0);
    TensorD x({1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) x.data()[i] = i + 1;  // 1..9
    auto y = conv.forward(x);
    CHECK(y.at(0, 0, 1, 1) == 45.0);       // full 3x3 sum
    CHECK(y.at(0, 0, 0, 0) == 1 + 2 + 4 + 5);  // corner sees a 2x2 patch
}

TEST_CASE("conv forward and backward-data are adjoint") {
    Rng rng(5);
    nn::Conv2D<double> conv(3, 4, 3, 2, 1);
    conv.init(Rng(7));
    conv.b.fill(0.0);
    auto x = random_tensor({2, 3, 8, 8}, rng);
    auto y = conv.forward(x);
    auto u = random_tensor(y.shape(), rng);
    auto dx = conv.backward(u);
    CHECK(dot(y, u) == doctest::Approx(dot(x, dx)).epsilon(1e-10));
}

TEST_CASE("transposed conv doubles the spatial dims and is conv's adjoint") {
    Rng rng(6);
    nn::ConvT2D<double> tconv(4, 3, 3, 2, 1);
    tconv.init(Rng(8));
    tconv.b.fill(0.0);
    auto x = random_tensor({2, 4, 4, 4}, rng);
    auto y = tconv.forward(x);
    REQUIRE(y.shape() == std::vector<int>{2, 3, 8, 8});
    auto u = random_tensor(y.shape(), rng);
    auto dx = tconv.backward(u);
    CHECK(dot(y, u) == doctest::Approx(dot(x, dx)).epsilon(1e-10));

    // against a Conv2D with transposed weights: conv(A->B) and tconv(B->A)
    nn::Conv2D<double> conv(3, 4, 3, 2, 1);
    conv.W = tconv.W;  // same layout [in_c=4... conv W is [out_c=4, 3*3*3]]
    conv.b.fill(0.0);
    auto big = random_tensor({1, 3, 8, 8}, rng);
    auto small = conv.forward(big);
    auto lifted = tconv.forward(small);
    // <conv(big), small'> == <big, tconv(small')> for any small'
    auto small2 = random_tensor(small.shape(), rng);
    auto lifted2 = tconv.forward(small2);
    CHECK(dot(small, small2) == doctest::Approx(dot(big, lifted2)).epsilon(1e-10));
}

TEST_CASE("dense layer matches hand arithmetic") {
    nn::Dense<double> d(2, 3);
    // W rows are output neurons
    d.W.data()[0] = 1;
    d.W.data()[1] = 2;  // y0 = x0 + 2 x1
    d.W.data()[2] = 0;
    d.W.data()[3] = 1;  // y1 = x1
    d.W.data()[4] = -1;
    d.W.data()[5] = 0;  // y2 = -x0
    d.b.data()[0] = 0.5;
    TensorD x({1, 2});
    x.data()[0] = 3;
    x.data()[1] = 4;
    auto y = d.forward(x);
    CHECK(y.data()[0] == 11.5);
    CHECK(y.data()[1] == 4.0);
    CHECK(y.data()[2] == -3.0);
}

TEST_CASE("layer gradients match finite differences") {
    Rng rng(31);

    SUBCASE("conv") {
        nn::Conv2D<double> conv(2, 3, 3, 2, 1);
        conv.init(Rng(1));
        auto x = random_tensor({2, 2, 8, 8}, rng);
        auto target = random_tensor({2, 3, 4, 4}, rng);
        nn::ParamSet<double> params;
        conv.collect("conv", params);
        auto loss = [&] { return nn::mse_loss(conv.forward(x), target); };
        params.zero_grads();
        TensorD d;
        nn::mse_loss(conv.forward(x), target, &d);
        conv.backward(d);
        testutil::check_gradients(params, loss, 4);
    }

    SUBCASE("tconv") {
        nn::ConvT2D<double> tconv(3, 2, 3, 2, 1);
        tconv.init(Rng(2));
        auto x = random_tensor({2, 3, 4, 4}, rng);
        auto target = random_tensor({2, 2, 8, 8}, rng);
        nn::ParamSet<double> params;
        tconv.collect("tconv", params);
        auto loss = [&] { return nn::mse_loss(tconv.forward(x), target); };
        params.zero_grads();
        TensorD d;
        nn::mse_loss(tconv.forward(x), target, &d);
        tconv.backward(d);
        testutil::check_gradients(params, loss, 4);
    }

    SUBCASE("dense with activations") {
        nn::Dense<double> d1(5, 7), d2(7, 2);
        d1.init(Rng(3));
        d2.init(Rng(4));
        nn::Tanh<double> act1;
        nn::Sigmoid<double> act2;
        auto x = random_tensor({3, 5}, rng);
        auto target = random_tensor({3, 2}, rng);
        nn::ParamSet<double> params;
        d1.collect("d1", params);
        d2.collect("d2", params);
        auto fwd = [&] { return act2.forward(d2.forward(act1.forward(d1.forward(x)))); };
        auto loss = [&] { return nn::mse_loss(fwd(), target); };
        params.zero_grads();
        TensorD d;
        nn::mse_loss(fwd(), target, &d);
        d1.backward(act1.backward(d2.backward(act2.backward(d))));
        testutil::check_gradients(params, loss, 4);
    }
}

TEST_CASE("padding and cropping are exact adjoints") {
    Rng rng(9);
    auto x = random_tensor({2, 3, 5, 6}, rng);
    auto xp = nn::pad_replicate(x, 4);
    REQUIRE(xp.shape() == std::vector<int>{2, 3, 8, 8});
    // replicated rows repeat the last source row
    CHECK(xp.at(0, 0, 7, 0) == x.at(0, 0, 4, 0));
    CHECK(xp.at(0, 0, 0, 7) == x.at(0, 0, 0, 5));

    auto u = random_tensor(xp.shape(), rng);
    auto folded = nn::pad_replicate_backward(u, 5, 6);
    CHECK(dot(xp, u) == doctest::Approx(dot(x, folded)).epsilon(1e-12));

    auto cropped = nn::crop(xp, 5, 6);
    for (size_t i = 0; i < x.size(); ++i) CHECK(cropped.data()[i] == x.data()[i]);

    auto v = random_tensor({2, 3, 5, 6}, rng);
    auto lifted = nn::crop_backward(v, 8, 8);
    CHECK(dot(cropped, v) == doctest::Approx(dot(xp, lifted)).epsilon(1e-12));
}

TEST_CASE("channel broadcast, concat, and slice round-trip") {
    Rng rng(10);
    TensorD v({2, 3});
    for (size_t i = 0; i < v.size(); ++i) v.data()[i] = static_cast<double>(i);
    auto bc = nn::broadcast_channels(v, 4, 5);
    REQUIRE(bc.shape() == std::vector<int>{2, 3, 4, 5});
    CHECK(bc.at(1, 2, 3, 4) == 5.0);
    CHECK(bc.at(0, 1, 0, 0) == 1.0);

    auto a = random_tensor({2, 2, 4, 5}, rng);
    auto joined = nn::concat_channels(a, bc);
    REQUIRE(joined.shape() == std::vector<int>{2, 5, 4, 5});
    auto back = nn::slice_channels(joined, 0, 2);
    for (size_t i = 0; i < a.size(); ++i) CHECK(back.data()[i] == a.data()[i]);
    auto tail = nn::slice_channels(joined, 2, 3);
    for (size_t i = 0; i < bc.size(); ++i) CHECK(tail.data()[i] == bc.data()[i]);

    TensorD p({2, 2}), q({2, 1});
    p.data()[0] = 1;
    p.data()[1] = 2;
    p.data()[2] = 3;
    p.data()[3] = 4;
    q.data()[0] = 9;
    q.data()[1] = 8;
    auto cols = nn::concat_cols(p, q);
    CHECK(cols.at(0, 2) == 9.0);
    CHECK(cols.at(1, 0) == 3.0);
}

TEST_CASE("losses match hand-computed values") {
    TensorD a({2, 2}), b({2, 2});
    a.fill(1.0);
    b.fill(0.0);
    CHECK(nn::mse_loss(a, b) == doctest::Approx(1.0));
    b.fill(1.0);
    CHECK(nn::mse_loss(a, b) == 0.0);

    TensorD p({1, 1});
    p.data()[0] = 0.5;
    CHECK(nn::bce_loss(p, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    CHECK(nn::bce_loss(p, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    p.data()[0] = 0.999999999;
    CHECK(nn::bce_loss(p, 1.0) < 1e-6);
}

TEST_CASE("adam descends a quadratic bowl deterministically") {
    TensorD w({4}), g({4});
    for (int i = 0; i < 4; ++i) w.data()[i] = 5.0 + i;
    nn::ParamSet<double> params;
    params.add("w", &w, &g);
    nn::Adam<double> opt(0.1);
    for (int step = 0; step < 500; ++step) {
        params.zero_grads();
        for (int i = 0; i < 4; ++i) g.data()[i] = 2.0 * w.data()[i];
        opt.step(params);
    }
    for (int i = 0; i < 4; ++i) CHECK(std::abs(w.data()[i]) < 1e-3);

    // two optimizers with identical seeds of updates stay bit-identical
    TensorD w2({4}), g2({4});
    for (int i = 0; i < 4; ++i) w2.data()[i] = 5.0 + i;
    nn::ParamSet<double> params2;
    params2.add("w", &w2, &g2);
    nn::Adam<double> opt2(0.1);
    for (int step = 0; step < 500; ++step) {
        params2.zero_grads();
        for (int i = 0; i < 4; ++i) g2.data()[i] = 2.0 * w2.data()[i];
        opt2.step(params2);
    }
    for (int i = 0; i < 4; ++i) CHECK(w.data()[i] == w2.data()[i]);
}

TEST_CASE("film modulation applies context scale and time shift") {
    nn::Film<double> film(4, 2);
    film.init(Rng(11));
    Rng rng(12);
    auto h = random_tensor({1, 2, 3, 3}, rng);
    auto ctx = random_tensor({1, 4}, rng);
    auto tim = random_tensor({1, 4}, rng);
    auto y = film.forward(h, ctx, tim);
    REQUIRE(y.shape() == h.shape());

    // reproduce by hand through the heads
    auto scale = film.scale_head.forward(ctx);
    auto shift = film.shift_head.forward(tim);
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 9; ++i) {
            double want = h.data()[c * 9 + i] * (1.0 + scale.data()[c]) + shift.data()[c];
            CHECK(y.data()[c * 9 + i] == doctest::Approx(want).epsilon(1e-12));
        }

    // gradient check through the film heads
    auto target = random_tensor(h.shape(), rng);
    nn::ParamSet<double> params;
    film.collect("film", params);
    auto loss = [&] { return nn::mse_loss(film.forward(h, ctx, tim), target); };
    params.zero_grads();
    TensorD d;
    nn::mse_loss(film.forward(h, ctx, tim), target, &d);
    TensorD dctx = TensorD::zeros(ctx.shape());
    TensorD dtim = TensorD::zeros(tim.shape());
    film.backward(d, dctx, dtim);
    testutil::check_gradients(params, loss, 4);
}
