#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "energen/common.hpp"
#include "energen/rng.hpp"
#include "energen/tensor.hpp"

// Minimal layer library with explicit backward passes. Everything is templated
// on the scalar so gradient checks can run the exact same code in double
// precision. Convolutions go through im2col and a GEMM.
namespace energen::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* value;
    Tensor<T>* grad;
};

template <typename T>
class ParamSet {
  public:
    void add(std::string name, Tensor<T>* value, Tensor<T>* grad) {
        refs_.push_back({std::move(name), value, grad});
    }
    const std::vector<ParamRef<T>>& refs() const { return refs_; }

    size_t count() const {
        size_t n = 0;
        for (const auto& r : refs_) n += r.value->size();
        return n;
    }
    void zero_grads() {
        for (auto& r : refs_) r.grad->fill(T(0));
    }
    bool all_finite() const {
        for (const auto& r : refs_)
            for (size_t i = 0; i < r.value->size(); ++i)
                if (!std::isfinite(static_cast<double>(r.value->data()[i]))) return false;
        return true;
    }

  private:
    std::vector<ParamRef<T>> refs_;
};

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Bit-reproducible matrix products. Eigen's packed gemm kernels accumulate in
// an order fixed by the shapes alone, but its vector-shaped products (any unit
// result dimension) peel by runtime pointer alignment, making low bits depend
// on heap addresses. Those shapes take a fixed-order scalar loop instead.
template <typename Dst, typename A, typename B>
void product_set(Dst&& dst, const A& a, const B& b) {
    if (a.rows() == 1 || b.cols() == 1) {
        for (Eigen::Index r = 0; r < a.rows(); ++r)
            for (Eigen::Index c = 0; c < b.cols(); ++c) {
                typename std::remove_reference_t<Dst>::Scalar s = 0;
                for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(r, k) * b(k, c);
                dst(r, c) = s;
            }
    } else {
        dst.noalias() = a * b;
    }
}

template <typename Dst, typename A, typename B>
void product_add(Dst&& dst, const A& a, const B& b) {
    if (a.rows() == 1 || b.cols() == 1) {
        for (Eigen::Index r = 0; r < a.rows(); ++r)
            for (Eigen::Index c = 0; c < b.cols(); ++c) {
                typename std::remove_reference_t<Dst>::Scalar s = 0;
                for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(r, k) * b(k, c);
                dst(r, c) += s;
            }
    } else {
        dst.noalias() += a * b;
    }
}

// col has shape [C*k*k, Ho*Wo] for one sample.
template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* col) {
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + (static_cast<size_t>(c) * k * k + static_cast<size_t>(ky) * k + kx) *
                                   (static_cast<size_t>(Ho) * Wo);
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) {
                        for (int ox = 0; ox < Wo; ++ox) row[oy * Wo + ox] = T(0);
                        continue;
                    }
                    const T* src = x + (static_cast<size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride + kx - pad;
                        row[oy * Wo + ox] = (ix < 0 || ix >= W) ? T(0) : src[ix];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates into x (caller zeroes first).
template <typename T>
void col2im(const T* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* x) {
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + (static_cast<size_t>(c) * k * k +
                                      static_cast<size_t>(ky) * k + kx) *
                                         (static_cast<size_t>(Ho) * Wo);
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = x + (static_cast<size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) dst[ix] += row[oy * Wo + ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void check_input(const Tensor<T>& x, int ndim, const char* who) {
    if (x.ndim() != ndim)
        throw contract_error(std::string(who) + ": expected " + std::to_string(ndim) +
                             "-d input, got " + x.shape_str());
}

// 3x3-style convolution, weights [out_c, in_c*k*k].
template <typename T>
class Conv2D {
  public:
    Conv2D() = default;
    Conv2D(int in_c, int out_c, int k, int stride, int pad)
        : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad) {
        W = Tensor<T>({out_c, in_c * k * k});
        b = Tensor<T>::zeros({out_c});
        gW = Tensor<T>::zeros(W.shape());
        gb = Tensor<T>::zeros(b.shape());
    }

    void init(Rng rng, double gain = 2.0) {
        double std = std::sqrt(gain / static_cast<double>(in_c_ * k_ * k_));
        for (size_t i = 0; i < W.size(); ++i) W.data()[i] = static_cast<T>(rng.normal() * std);
        b.fill(T(0));
    }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        out.add(prefix + ".W", &W, &gW);
        out.add(prefix + ".b", &b, &gb);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        check_input(x, 4, "Conv2D");
        if (x.dim(1) != in_c_)
            throw contract_error("Conv2D: expected " + std::to_string(in_c_) + " channels, got " +
                                 x.shape_str());
        x_cache = x;
        int n = x.dim(0), H = x.dim(2), Wd = x.dim(3);
        int Ho = conv_out_dim(H, k_, stride_, pad_), Wo = conv_out_dim(Wd, k_, stride_, pad_);
        Tensor<T> y({n, out_c_, Ho, Wo});
        size_t cols = static_cast<size_t>(Ho) * Wo;
        col_.assign(static_cast<size_t>(in_c_ * k_ * k_) * cols, T(0));
        CMapM<T> Wm(W.data(), out_c_, in_c_ * k_ * k_);
        for (int i = 0; i < n; ++i) {
            im2col(x.data() + x.offset(i), in_c_, H, Wd, k_, stride_, pad_, Ho, Wo, col_.data());
            CMapM<T> cm(col_.data(), in_c_ * k_ * k_, static_cast<Eigen::Index>(cols));
            MapM<T> ym(y.data() + y.offset(i), out_c_, static_cast<Eigen::Index>(cols));
            product_set(ym, Wm, cm);
            for (int c = 0; c < out_c_; ++c) ym.row(c).array() += b.data()[c];
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        int n = x_cache.dim(0), H = x_cache.dim(2), Wd = x_cache.dim(3);
        int Ho = dy.dim(2), Wo = dy.dim(3);
        size_t cols = static_cast<size_t>(Ho) * Wo;
        Tensor<T> dx = Tensor<T>::zeros(x_cache.shape());
        MapM<T> gWm(gW.data(), out_c_, in_c_ * k_ * k_);
        CMapM<T> Wm(W.data(), out_c_, in_c_ * k_ * k_);
        std::vector<T> dcol(static_cast<size_t>(in_c_ * k_ * k_) * cols);
        for (int i = 0; i < n; ++i) {
            CMapM<T> dym(dy.data() + dy.offset(i), out_c_, static_cast<Eigen::Index>(cols));
            im2col(x_cache.data() + x_cache.offset(i), in_c_, H, Wd, k_, stride_, pad_, Ho, Wo,
                   col_.data());
            CMapM<T> cm(col_.data(), in_c_ * k_ * k_, static_cast<Eigen::Index>(cols));
            product_add(gWm, dym, cm.transpose());
            for (int c = 0; c < out_c_; ++c) {
                T s = T(0);
                for (Eigen::Index j = 0; j < dym.cols(); ++j) s += dym(c, j);
                gb.data()[c] += s;
            }
            MapM<T> dcm(dcol.data(), in_c_ * k_ * k_, static_cast<Eigen::Index>(cols));
            product_set(dcm, Wm.transpose(), dym);
            col2im(dcol.data(), in_c_, H, Wd, k_, stride_, pad_, Ho, Wo, dx.data() + dx.offset(i));
        }
        return dx;
    }

    Tensor<T> W, b, gW, gb;

  private:
    int in_c_ = 0, out_c_ = 0, k_ = 3, stride_ = 1, pad_ = 1;
    Tensor<T> x_cache;
    std::vector<T> col_;
};

// Transposed convolution; maps [N, in_c, H, W] -> [N, out_c, H*stride, W*stride]
// for k=3, pad=1 geometry. Weights [in_c, out_c*k*k] (the conjugate conv layout).
template <typename T>
class ConvT2D {
  public:
    ConvT2D() = default;
    ConvT2D(int in_c, int out_c, int k, int stride, int pad)
        : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad) {
        W = Tensor<T>({in_c, out_c * k * k});
        b = Tensor<T>::zeros({out_c});
        gW = Tensor<T>::zeros(W.shape());
        gb = Tensor<T>::zeros(b.shape());
    }

    void init(Rng rng, double gain = 2.0) {
        double std = std::sqrt(gain / static_cast<double>(in_c_ * k_ * k_));
        for (size_t i = 0; i < W.size(); ++i) W.data()[i] = static_cast<T>(rng.normal() * std);
        b.fill(T(0));
    }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        out.add(prefix + ".W", &W, &gW);
        out.add(prefix + ".b", &b, &gb);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        check_input(x, 4, "ConvT2D");
        if (x.dim(1) != in_c_)
            throw contract_error("ConvT2D: expected " + std::to_string(in_c_) +
                                 " channels, got " + x.shape_str());
        x_cache = x;
        int n = x.dim(0), Hb = x.dim(2), Wb = x.dim(3);
        int Ha = Hb * stride_, Wa = Wb * stride_;
        if (conv_out_dim(Ha, k_, stride_, pad_) != Hb || conv_out_dim(Wa, k_, stride_, pad_) != Wb)
            throw contract_error("ConvT2D: geometry not invertible for " + x.shape_str());
        Tensor<T> y = Tensor<T>::zeros({n, out_c_, Ha, Wa});
        size_t cols = static_cast<size_t>(Hb) * Wb;
        std::vector<T> col(static_cast<size_t>(out_c_ * k_ * k_) * cols);
        CMapM<T> Wm(W.data(), in_c_, out_c_ * k_ * k_);
        for (int i = 0; i < n; ++i) {
            CMapM<T> xm(x.data() + x.offset(i), in_c_, static_cast<Eigen::Index>(cols));
            MapM<T> cm(col.data(), out_c_ * k_ * k_, static_cast<Eigen::Index>(cols));
            product_set(cm, Wm.transpose(), xm);
            col2im(col.data(), out_c_, Ha, Wa, k_, stride_, pad_, Hb, Wb, y.data() + y.offset(i));
            T* yp = y.data() + y.offset(i);
            for (int c = 0; c < out_c_; ++c) {
                T bias = b.data()[c];
                T* p = yp + static_cast<size_t>(c) * Ha * Wa;
                for (int j = 0; j < Ha * Wa; ++j) p[j] += bias;
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        int n = x_cache.dim(0), Hb = x_cache.dim(2), Wb = x_cache.dim(3);
        int Ha = dy.dim(2), Wa = dy.dim(3);
        size_t cols = static_cast<size_t>(Hb) * Wb;
        Tensor<T> dx({n, in_c_, Hb, Wb});
        std::vector<T> dcol(static_cast<size_t>(out_c_ * k_ * k_) * cols);
        CMapM<T> Wm(W.data(), in_c_, out_c_ * k_ * k_);
        MapM<T> gWm(gW.data(), in_c_, out_c_ * k_ * k_);
        for (int i = 0; i < n; ++i) {
            im2col(dy.data() + dy.offset(i), out_c_, Ha, Wa, k_, stride_, pad_, Hb, Wb,
                   dcol.data());
            CMapM<T> dcm(dcol.data(), out_c_ * k_ * k_, static_cast<Eigen::Index>(cols));
            CMapM<T> xm(x_cache.data() + x_cache.offset(i), in_c_, static_cast<Eigen::Index>(cols));
            product_add(gWm, xm, dcm.transpose());
            MapM<T> dxm(dx.data() + dx.offset(i), in_c_, static_cast<Eigen::Index>(cols));
            product_set(dxm, Wm, dcm);
            const T* dyp = dy.data() + dy.offset(i);
            for (int c = 0; c < out_c_; ++c) {
                const T* p = dyp + static_cast<size_t>(c) * Ha * Wa;
                T s = T(0);
                for (int j = 0; j < Ha * Wa; ++j) s += p[j];
                gb.data()[c] += s;
            }
        }
        return dx;
    }

    Tensor<T> W, b, gW, gb;

  private:
    int in_c_ = 0, out_c_ = 0, k_ = 3, stride_ = 1, pad_ = 1;
    Tensor<T> x_cache;
};

// y = x W^T + b with x [N, in], W [out, in].
template <typename T>
class Dense {
  public:
    Dense() = default;
    Dense(int in, int out) : in_(in), out_(out) {
        W = Tensor<T>({out, in});
        b = Tensor<T>::zeros({out});
        gW = Tensor<T>::zeros(W.shape());
        gb = Tensor<T>::zeros(b.shape());
    }

    void init(Rng rng, double gain = 2.0) {
        double std = std::sqrt(gain / static_cast<double>(in_));
        for (size_t i = 0; i < W.size(); ++i) W.data()[i] = static_cast<T>(rng.normal() * std);
        b.fill(T(0));
    }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        out.add(prefix + ".W", &W, &gW);
        out.add(prefix + ".b", &b, &gb);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        check_input(x, 2, "Dense");
        if (x.dim(1) != in_)
            throw contract_error("Dense: expected width " + std::to_string(in_) + ", got " +
                                 x.shape_str());
        x_cache = x;
        int n = x.dim(0);
        Tensor<T> y({n, out_});
        // row-at-a-time so each row's result is independent of the batch it
        // arrived in (samplers promise batching never changes a row)
        for (int i = 0; i < n; ++i) {
            const T* xi = x.data() + static_cast<size_t>(i) * in_;
            T* yi = y.data() + static_cast<size_t>(i) * out_;
            for (int o = 0; o < out_; ++o) {
                const T* w = W.data() + static_cast<size_t>(o) * in_;
                T s = b.data()[o];
                for (int k = 0; k < in_; ++k) s += w[k] * xi[k];
                yi[o] = s;
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        int n = x_cache.dim(0);
        CMapM<T> dym(dy.data(), n, out_);
        CMapM<T> xm(x_cache.data(), n, in_);
        MapM<T> gWm(gW.data(), out_, in_);
        product_add(gWm, dym.transpose(), xm);
        for (int o = 0; o < out_; ++o) {
            T s = T(0);
            for (int i = 0; i < n; ++i) s += dym(i, o);
            gb.data()[o] += s;
        }
        Tensor<T> dx({n, in_});
        MapM<T> dxm(dx.data(), n, in_);
        CMapM<T> Wm(W.data(), out_, in_);
        product_set(dxm, dym, Wm);
        return dx;
    }

    Tensor<T> W, b, gW, gb;

  private:
    int in_ = 0, out_ = 0;
    Tensor<T> x_cache;
};

template <typename T>
class ReLU {
  public:
    Tensor<T> forward(const Tensor<T>& x) {
        y_cache = x;
        for (size_t i = 0; i < y_cache.size(); ++i)
            if (y_cache.data()[i] < T(0)) y_cache.data()[i] = T(0);
        return y_cache;
    }
    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(dy.shape());
        for (size_t i = 0; i < dx.size(); ++i)
            dx.data()[i] = y_cache.data()[i] > T(0) ? dy.data()[i] : T(0);
        return dx;
    }

  private:
    Tensor<T> y_cache;
};

template <typename T>
class LeakyReLU {
  public:
    explicit LeakyReLU(double alpha = 0.2) : alpha_(static_cast<T>(alpha)) {}
    Tensor<T> forward(const Tensor<T>& x) {
        x_cache = x;
        Tensor<T> y(x.shape());
        for (size_t i = 0; i < y.size(); ++i) {
            T v = x.data()[i];
            y.data()[i] = v > T(0) ? v : alpha_ * v;
        }
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(dy.shape());
        for (size_t i = 0; i < dx.size(); ++i)
            dx.data()[i] = x_cache.data()[i] > T(0) ? dy.data()[i] : alpha_ * dy.data()[i];
        return dx;
    }

  private:
    T alpha_;
    Tensor<T> x_cache;
};

template <typename T>
class Tanh {
  public:
    Tensor<T> forward(const Tensor<T>& x) {
        y_cache = Tensor<T>(x.shape());
        for (size_t i = 0; i < x.size(); ++i) y_cache.data()[i] = std::tanh(x.data()[i]);
        return y_cache;
    }
    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(dy.shape());
        for (size_t i = 0; i < dx.size(); ++i) {
            T y = y_cache.data()[i];
            dx.data()[i] = dy.data()[i] * (T(1) - y * y);
        }
        return dx;
    }

  private:
    Tensor<T> y_cache;
};

template <typename T>
class Sigmoid {
  public:
    Tensor<T> forward(const Tensor<T>& x) {
        y_cache = Tensor<T>(x.shape());
        for (size_t i = 0; i < x.size(); ++i)
            y_cache.data()[i] = T(1) / (T(1) + std::exp(-x.data()[i]));
        return y_cache;
    }
    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(dy.shape());
        for (size_t i = 0; i < dx.size(); ++i) {
            T y = y_cache.data()[i];
            dx.data()[i] = dy.data()[i] * y * (T(1) - y);
        }
        return dx;
    }

  private:
    Tensor<T> y_cache;
};

// Edge-replication padding of the two spatial dims up to multiples of `multiple`.
inline int padded_dim(int d, int multiple) {
    int r = d % multiple;
    return r == 0 ? d : d + (multiple - r);
}

template <typename T>
Tensor<T> pad_replicate(const Tensor<T>& x, int multiple) {
    check_input(x, 4, "pad_replicate");
    int n = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int Hp = padded_dim(H, multiple), Wp = padded_dim(W, multiple);
    if (Hp == H && Wp == W) return x;
    Tensor<T> y({n, C, Hp, Wp});
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < C; ++c)
            for (int yy = 0; yy < Hp; ++yy) {
                int sy = std::min(yy, H - 1);
                const T* src = x.data() + ((static_cast<size_t>(i) * C + c) * H + sy) * W;
                T* dst = y.data() + ((static_cast<size_t>(i) * C + c) * Hp + yy) * Wp;
                for (int xx = 0; xx < Wp; ++xx) dst[xx] = src[std::min(xx, W - 1)];
            }
    return y;
}

// Adjoint of pad_replicate: folds gradient of replicated rows/cols back onto
// the source edge.
template <typename T>
Tensor<T> pad_replicate_backward(const Tensor<T>& dy, int H, int W) {
    int n = dy.dim(0), C = dy.dim(1), Hp = dy.dim(2), Wp = dy.dim(3);
    Tensor<T> dx = Tensor<T>::zeros({n, C, H, W});
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < C; ++c)
            for (int yy = 0; yy < Hp; ++yy) {
                int sy = std::min(yy, H - 1);
                const T* src = dy.data() + ((static_cast<size_t>(i) * C + c) * Hp + yy) * Wp;
                T* dst = dx.data() + ((static_cast<size_t>(i) * C + c) * H + sy) * W;
                for (int xx = 0; xx < Wp; ++xx) dst[std::min(xx, W - 1)] += src[xx];
            }
    return dx;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, int H, int W) {
    check_input(x, 4, "crop");
    int n = x.dim(0), C = x.dim(1), Hp = x.dim(2), Wp = x.dim(3);
    if (Hp == H && Wp == W) return x;
    Tensor<T> y({n, C, H, W});
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < C; ++c)
            for (int yy = 0; yy < H; ++yy) {
                const T* src = x.data() + ((static_cast<size_t>(i) * C + c) * Hp + yy) * Wp;
                T* dst = y.data() + ((static_cast<size_t>(i) * C + c) * H + yy) * W;
                std::copy(src, src + W, dst);
            }
    return y;
}

// Adjoint of crop: zero-pads the gradient back to the padded size.
template <typename T>
Tensor<T> crop_backward(const Tensor<T>& dy, int Hp, int Wp) {
    int n = dy.dim(0), C = dy.dim(1), H = dy.dim(2), W = dy.dim(3);
    if (Hp == H && Wp == W) return dy;
    Tensor<T> dx = Tensor<T>::zeros({n, C, Hp, Wp});
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < C; ++c)
            for (int yy = 0; yy < H; ++yy) {
                const T* src = dy.data() + ((static_cast<size_t>(i) * C + c) * H + yy) * W;
                T* dst = dx.data() + ((static_cast<size_t>(i) * C + c) * Hp + yy) * Wp;
                std::copy(src, src + W, dst);
            }
    return dx;
}

// Broadcasts a per-sample vector [N, D] into D constant channels [N, D, H, W].
template <typename T>
Tensor<T> broadcast_channels(const Tensor<T>& v, int H, int W) {
    check_input(v, 2, "broadcast_channels");
    int n = v.dim(0), D = v.dim(1);
    Tensor<T> y({n, D, H, W});
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < D; ++d) {
            T val = v.at(i, d);
            T* dst = y.data() + ((static_cast<size_t>(i) * D + d) * H) * W;
            std::fill(dst, dst + static_cast<size_t>(H) * W, val);
        }
    return y;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    check_input(a, 4, "concat_channels");
    check_input(b, 4, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw contract_error("concat_channels: " + a.shape_str() + " vs " + b.shape_str());
    int n = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    Tensor<T> y({n, Ca + Cb, H, W});
    size_t plane = static_cast<size_t>(H) * W;
    for (int i = 0; i < n; ++i) {
        std::copy(a.data() + a.offset(i), a.data() + a.offset(i) + Ca * plane,
                  y.data() + y.offset(i));
        std::copy(b.data() + b.offset(i), b.data() + b.offset(i) + Cb * plane,
                  y.data() + y.offset(i) + Ca * plane);
    }
    return y;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int from, int count) {
    int n = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (from < 0 || from + count > C) throw contract_error("slice_channels out of range");
    Tensor<T> y({n, count, H, W});
    size_t plane = static_cast<size_t>(H) * W;
    for (int i = 0; i < n; ++i)
        std::copy(x.data() + x.offset(i) + static_cast<size_t>(from) * plane,
                  x.data() + x.offset(i) + static_cast<size_t>(from + count) * plane,
                  y.data() + y.offset(i));
    return y;
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
    check_input(a, 2, "concat_cols");
    check_input(b, 2, "concat_cols");
    if (a.dim(0) != b.dim(0))
        throw contract_error("concat_cols: " + a.shape_str() + " vs " + b.shape_str());
    int n = a.dim(0), Da = a.dim(1), Db = b.dim(1);
    Tensor<T> y({n, Da + Db});
    for (int i = 0; i < n; ++i) {
        std::copy(a.data() + static_cast<size_t>(i) * Da, a.data() + static_cast<size_t>(i + 1) * Da,
                  y.data() + static_cast<size_t>(i) * (Da + Db));
        std::copy(b.data() + static_cast<size_t>(i) * Db, b.data() + static_cast<size_t>(i + 1) * Db,
                  y.data() + static_cast<size_t>(i) * (Da + Db) + Da);
    }
    return y;
}

// Feature-wise modulation: y = h * (1 + scale_head(ctx)) + shift_head(time),
// with the scale and shift broadcast over the spatial dims.
template <typename T>
class Film {
  public:
    Film() = default;
    Film(int embed_dim, int channels) : channels_(channels), scale_head(embed_dim, channels),
                                        shift_head(embed_dim, channels) {}

    void init(Rng rng) {
        scale_head.init(rng.derive(0), 1.0);
        shift_head.init(rng.derive(1), 1.0);
    }

    void collect(const std::string& prefix, ParamSet<T>& out) {
        scale_head.collect(prefix + ".scale", out);
        shift_head.collect(prefix + ".shift", out);
    }

    Tensor<T> forward(const Tensor<T>& h, const Tensor<T>& ctx_emb, const Tensor<T>& time_emb) {
        h_cache = h;
        scale_ = scale_head.forward(ctx_emb);  // [N, C]
        Tensor<T> shift = shift_head.forward(time_emb);
        int n = h.dim(0), C = h.dim(1), H = h.dim(2), W = h.dim(3);
        size_t plane = static_cast<size_t>(H) * W;
        Tensor<T> y(h.shape());
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < C; ++c) {
                T s = T(1) + scale_.at(i, c);
                T t = shift.at(i, c);
                const T* src = h.data() + h.offset(i) + static_cast<size_t>(c) * plane;
                T* dst = y.data() + y.offset(i) + static_cast<size_t>(c) * plane;
                for (size_t j = 0; j < plane; ++j) dst[j] = src[j] * s + t;
            }
        return y;
    }

    // Returns dh; accumulates dctx_emb and dtime_emb into the given tensors.
    Tensor<T> backward(const Tensor<T>& dy, Tensor<T>& dctx_emb, Tensor<T>& dtime_emb) {
        int n = dy.dim(0), C = dy.dim(1), H = dy.dim(2), W = dy.dim(3);
        size_t plane = static_cast<size_t>(H) * W;
        Tensor<T> dscale({n, C}), dshift({n, C});
        Tensor<T> dh(dy.shape());
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < C; ++c) {
                T s = T(1) + scale_.at(i, c);
                const T* dyp = dy.data() + dy.offset(i) + static_cast<size_t>(c) * plane;
                const T* hp = h_cache.data() + h_cache.offset(i) + static_cast<size_t>(c) * plane;
                T* dhp = dh.data() + dh.offset(i) + static_cast<size_t>(c) * plane;
                T ds = T(0), dt = T(0);
                for (size_t j = 0; j < plane; ++j) {
                    ds += dyp[j] * hp[j];
                    dt += dyp[j];
                    dhp[j] = dyp[j] * s;
                }
                dscale.at(i, c) = ds;
                dshift.at(i, c) = dt;
            }
        Tensor<T> d1 = scale_head.backward(dscale);
        Tensor<T> d2 = shift_head.backward(dshift);
        for (size_t i = 0; i < d1.size(); ++i) dctx_emb.data()[i] += d1.data()[i];
        for (size_t i = 0; i < d2.size(); ++i) dtime_emb.data()[i] += d2.data()[i];
        return dh;
    }

    Dense<T> scale_head, shift_head;

  private:
    int channels_ = 0;
    Tensor<T> h_cache, scale_;
};

template <typename T>
class Adam {
  public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamSet<T>& params) {
        if (m_.empty()) {
            for (const auto& r : params.refs()) {
                m_.emplace_back(r.value->size(), T(0));
                v_.emplace_back(r.value->size(), T(0));
            }
        }
        if (m_.size() != params.refs().size())
            throw contract_error("Adam: parameter set changed between steps");
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t p = 0; p < params.refs().size(); ++p) {
            const auto& r = params.refs()[p];
            T* w = r.value->data();
            const T* g = r.grad->data();
            T* m = m_[p].data();
            T* v = v_[p].data();
            for (size_t i = 0; i < r.value->size(); ++i) {
                m[i] = static_cast<T>(beta1_ * m[i] + (1.0 - beta1_) * g[i]);
                v[i] = static_cast<T>(beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i]);
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                w[i] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    double learning_rate() const { return lr_; }
    long steps_taken() const { return t_; }

  private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

// Mean squared error over all elements; writes d(loss)/d(pred) into dpred.
template <typename T>
double mse_loss(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* dpred = nullptr) {
    if (pred.shape() != target.shape())
        throw contract_error("mse_loss: " + pred.shape_str() + " vs " + target.shape_str());
    double sum = 0.0;
    size_t n = pred.size();
    if (dpred) *dpred = Tensor<T>(pred.shape());
    for (size_t i = 0; i < n; ++i) {
        double d = static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]);
        sum += d * d;
        if (dpred) dpred->data()[i] = static_cast<T>(2.0 * d / static_cast<double>(n));
    }
    return sum / static_cast<double>(n);
}

// Binary cross-entropy against a constant label; probs in (0,1).
// Gradient is with respect to the probabilities.
template <typename T>
double bce_loss(const Tensor<T>& probs, double label, Tensor<T>* dprobs = nullptr) {
    double sum = 0.0;
    size_t n = probs.size();
    if (dprobs) *dprobs = Tensor<T>(probs.shape());
    for (size_t i = 0; i < n; ++i) {
        double p = std::clamp(static_cast<double>(probs.data()[i]), 1e-12, 1.0 - 1e-12);
        sum += -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
        if (dprobs)
            dprobs->data()[i] =
                static_cast<T>((-(label / p) + (1.0 - label) / (1.0 - p)) / static_cast<double>(n));
    }
    return sum / static_cast<double>(n);
}

}  // namespace energen::nn
