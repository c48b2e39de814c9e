#include <energen/evaluation.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>

namespace energen {

using json = nlohmann::json;

const char* to_string(ExtractorKind k) {
    switch (k) {
    case ExtractorKind::seeded_random_conv: return "seeded_random_conv";
    case ExtractorKind::external_pretrained: return "external_pretrained";
    }
    throw contract_error("unknown extractor kind");
}

ExtractorKind extractor_kind_from_string(const std::string& s) {
    if (s == "seeded_random_conv") return ExtractorKind::seeded_random_conv;
    if (s == "external_pretrained") return ExtractorKind::external_pretrained;
    throw parse_error("unknown extractor kind: " + s);
}

namespace {

TensorF random_conv_features(const FeatureExtractor& ex, const TensorF& images) {
    int n = images.dim(0), h = images.dim(1), w = images.dim(2);
    nn::Conv2D<float> c1(1, 16, 3, 2, 1), c2(16, 32, 3, 2, 1), c3(32, ex.output_dim, 3, 2, 1);
    Rng rng(ex.seed);
    c1.init(rng.derive(1));
    c2.init(rng.derive(2));
    c3.init(rng.derive(3));

    TensorF x({n, 1, h, w});
    std::memcpy(x.data(), images.data(), images.size() * sizeof(float));
    x = nn::pad_replicate(x, 8);

    auto relu = [](TensorF& t) {
        for (size_t i = 0; i < t.size(); ++i)
            if (t.data()[i] < 0.0f) t.data()[i] = 0.0f;
    };
    TensorF y = c1.forward(x);
    relu(y);
    y = c2.forward(y);
    relu(y);
    y = c3.forward(y);

    // global average pool, one feature per channel
    int ho = y.dim(2), wo = y.dim(3);
    size_t plane = static_cast<size_t>(ho) * wo;
    TensorF feats({n, ex.output_dim});
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < ex.output_dim; ++c) {
            const float* p = y.data() + y.offset(i) + static_cast<size_t>(c) * plane;
            double s = 0.0;
            for (size_t j = 0; j < plane; ++j) s += p[j];
            feats.at(i, c) = static_cast<float>(s / static_cast<double>(plane));
        }
    return feats;
}

} // namespace

TensorF extract_features(const FeatureExtractor& extractor, const TensorF& images) {
    if (images.ndim() != 3)
        throw contract_error("extract_features: expected [N,H,W] images, got " +
                             images.shape_str());
    if (images.dim(0) < 1) throw contract_error("extract_features: empty batch");
    if (extractor.output_dim < 1)
        throw contract_error("extract_features: output_dim must be positive");

    if (extractor.kind == ExtractorKind::external_pretrained) {
        if (!extractor.external_fn)
            throw contract_error("extract_features: external extractor has no function attached");
        TensorF y = extractor.external_fn(images);
        if (y.ndim() != 2 || y.dim(0) != images.dim(0) || y.dim(1) != extractor.output_dim)
            throw contract_error("extract_features: external extractor returned " + y.shape_str() +
                                 ", expected [" + std::to_string(images.dim(0)) + "," +
                                 std::to_string(extractor.output_dim) + "]");
        return y;
    }
    return random_conv_features(extractor, images);
}

void symmetric_eigen(const Eigen::MatrixXd& a, Eigen::VectorXd& values, Eigen::MatrixXd& vectors) {
    const Eigen::Index n = a.rows();
    if (n == 0 || a.cols() != n)
        throw contract_error("symmetric_eigen: need a nonempty square matrix");

    Eigen::MatrixXd m = 0.5 * (a + a.transpose());
    vectors = Eigen::MatrixXd::Identity(n, n);

    double frob = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) frob += m(i, j) * m(i, j);
    const double stop = 1e-28 * std::max(frob, 1e-300);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) off += m(p, q) * m(p, q);
        if (off <= stop) break;

        for (Eigen::Index p = 0; p < n - 1; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) {
                double apq = m(p, q);
                if (apq == 0.0) continue;
                double tau = (m(q, q) - m(p, p)) / (2.0 * apq);
                double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = t * c;

                double app = m(p, p), aqq = m(q, q);
                m(p, p) = c * c * app - 2.0 * s * c * apq + s * s * aqq;
                m(q, q) = s * s * app + 2.0 * s * c * apq + c * c * aqq;
                m(p, q) = 0.0;
                m(q, p) = 0.0;
                for (Eigen::Index k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    double akp = m(k, p), akq = m(k, q);
                    m(k, p) = c * akp - s * akq;
                    m(p, k) = m(k, p);
                    m(k, q) = s * akp + c * akq;
                    m(q, k) = m(k, q);
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    double vkp = vectors(k, p), vkq = vectors(k, q);
                    vectors(k, p) = c * vkp - s * vkq;
                    vectors(k, q) = s * vkp + c * vkq;
                }
            }
    }

    values.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) values(i) = m(i, i);

    std::vector<Eigen::Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index(0));
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index i, Eigen::Index j) { return values(i) < values(j); });
    Eigen::VectorXd sv(n);
    Eigen::MatrixXd sm(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        sv(i) = values(order[static_cast<size_t>(i)]);
        sm.col(i) = vectors.col(order[static_cast<size_t>(i)]);
    }
    values = sv;
    vectors = sm;
}

namespace {

// Column means and (n-1)-normalized covariance with fixed-order accumulation.
void gaussian_fit(const TensorF& feats, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    const int n = feats.dim(0), d = feats.dim(1);
    mu.resize(d);
    for (int c = 0; c < d; ++c) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += static_cast<double>(feats.at(i, c));
        mu(c) = s / n;
    }
    Eigen::MatrixXd centered(n, d);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c) centered(i, c) = static_cast<double>(feats.at(i, c)) - mu(c);
    cov.resize(d, d);
    if (d >= 2) {
        cov.noalias() = centered.transpose() * centered;
    } else {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += centered(i, 0) * centered(i, 0);
        cov(0, 0) = s;
    }
    cov /= static_cast<double>(n - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
    Eigen::VectorXd w;
    Eigen::MatrixXd v;
    symmetric_eigen(a, w, v);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = std::sqrt(std::max(w(i), 0.0));
    return v * w.asDiagonal() * v.transpose();
}

} // namespace

double compute_fid(const TensorF& real_feats, const TensorF& synth_feats) {
    if (real_feats.ndim() != 2 || synth_feats.ndim() != 2)
        throw contract_error("compute_fid: expected [N,d] feature matrices");
    const int d = real_feats.dim(1);
    if (synth_feats.dim(1) != d)
        throw contract_error("compute_fid: feature dims differ, " + real_feats.shape_str() +
                             " vs " + synth_feats.shape_str());
    const int nr = real_feats.dim(0), ns = synth_feats.dim(0);
    if (nr < 2 || ns < 2)
        throw contract_error("compute_fid: insufficient data, need at least 2 samples per side "
                             "(got " +
                             std::to_string(nr) + " and " + std::to_string(ns) + ")");

    Eigen::VectorXd mu_r, mu_s;
    Eigen::MatrixXd cov_r, cov_s;
    gaussian_fit(real_feats, mu_r, cov_r);
    gaussian_fit(synth_feats, mu_s, cov_s);

    if (nr < d + 1 || ns < d + 1) {
        for (int i = 0; i < d; ++i) {
            cov_r(i, i) += 1e-6;
            cov_s(i, i) += 1e-6;
        }
    }

    Eigen::MatrixXd s_half = psd_sqrt(cov_s);
    Eigen::MatrixXd prod = s_half * cov_r * s_half;
    prod = 0.5 * (prod + prod.transpose());
    Eigen::VectorXd w;
    Eigen::MatrixXd v;
    symmetric_eigen(prod, w, v);

    double tr_sqrt = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) tr_sqrt += std::sqrt(std::max(w(i), 0.0));
    double mean_term = 0.0;
    for (int i = 0; i < d; ++i) {
        double diff = mu_r(i) - mu_s(i);
        mean_term += diff * diff;
    }
    double tr_r = 0.0, tr_s = 0.0;
    for (int i = 0; i < d; ++i) {
        tr_r += cov_r(i, i);
        tr_s += cov_s(i, i);
    }
    return std::max(mean_term + tr_r + tr_s - 2.0 * tr_sqrt, 0.0);
}

double compute_kl(const std::vector<float>& real_values, const std::vector<float>& synth_values,
                  int bins, float lo, float hi, double epsilon) {
    if (real_values.empty() || synth_values.empty())
        throw contract_error("compute_kl: empty value pool");
    if (bins < 1) throw contract_error("compute_kl: bins must be positive");
    if (!(lo < hi)) throw contract_error("compute_kl: bad range");

    auto histogram = [&](const std::vector<float>& vals) {
        std::vector<double> h(static_cast<size_t>(bins), 0.0);
        const double scale = bins / (static_cast<double>(hi) - lo);
        for (float v : vals) {
            int idx = static_cast<int>((static_cast<double>(v) - lo) * scale);
            idx = std::clamp(idx, 0, bins - 1);
            h[static_cast<size_t>(idx)] += 1.0;
        }
        const double total = static_cast<double>(vals.size());
        const double norm = 1.0 + epsilon * bins;
        for (double& x : h) x = (x / total + epsilon) / norm;
        return h;
    };

    std::vector<double> p = histogram(real_values), q = histogram(synth_values);
    double kl = 0.0;
    for (int i = 0; i < bins; ++i)
        kl += p[static_cast<size_t>(i)] * std::log(p[static_cast<size_t>(i)] / q[static_cast<size_t>(i)]);
    return kl;
}

RmseR2 compute_rmse_r2(const TensorF& real, const TensorF& synth) {
    if (real.shape() != synth.shape())
        throw contract_error("compute_rmse_r2: shape mismatch, " + real.shape_str() + " vs " +
                             synth.shape_str());
    if (real.size() == 0) throw contract_error("compute_rmse_r2: empty input");

    const size_t n = real.size();
    double mean = 0.0;
    for (size_t i = 0; i < n; ++i) mean += static_cast<double>(real.data()[i]);
    mean /= static_cast<double>(n);

    double ss_res = 0.0, ss_tot = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double r = static_cast<double>(real.data()[i]);
        double s = static_cast<double>(synth.data()[i]);
        ss_res += (r - s) * (r - s);
        ss_tot += (r - mean) * (r - mean);
    }
    RmseR2 out;
    out.rmse = std::sqrt(ss_res / static_cast<double>(n));
    if (ss_tot == 0.0 && ss_res == 0.0)
        out.r2 = 1.0;
    else
        out.r2 = 1.0 - ss_res / ss_tot;
    return out;
}

namespace {

struct Slice {
    std::string name;
    std::vector<int> rows; // positions within the test-ordered tensors
};

TensorF gather_rows(const TensorF& src, const std::vector<int>& rows) {
    std::vector<int> shape = src.shape();
    shape[0] = static_cast<int>(rows.size());
    TensorF out(shape);
    size_t stride = src.size() / static_cast<size_t>(src.dim(0));
    for (size_t i = 0; i < rows.size(); ++i)
        std::memcpy(out.data() + i * stride,
                    src.data() + static_cast<size_t>(rows[i]) * stride, stride * sizeof(float));
    return out;
}

std::vector<float> pool_values(const TensorF& images, const std::vector<int>& rows) {
    size_t stride = images.size() / static_cast<size_t>(images.dim(0));
    std::vector<float> pool;
    pool.reserve(rows.size() * stride);
    for (int r : rows) {
        const float* p = images.data() + static_cast<size_t>(r) * stride;
        pool.insert(pool.end(), p, p + stride);
    }
    return pool;
}

MetricStat finalize(const std::vector<double>& xs) {
    MetricStat st;
    const size_t r = xs.size();
    double s = 0.0;
    for (double x : xs) s += x;
    st.mean = s / static_cast<double>(r);
    if (r >= 2) {
        double acc = 0.0;
        for (double x : xs) acc += (x - st.mean) * (x - st.mean);
        st.std = std::sqrt(acc / static_cast<double>(r - 1));
        st.has_std = true;
    }
    return st;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

json stat_json(const MetricStat& st) {
    json j;
    j["mean"] = st.mean;
    if (st.has_std) j["std"] = st.std;
    return j;
}

} // namespace

const EvalEntry* EvalReport::find(const std::string& slice) const {
    for (const EvalEntry& e : entries)
        if (e.slice == slice) return &e;
    return nullptr;
}

std::string EvalReport::to_json() const {
    json j;
    j["schema_version"] = 1;
    j["container"] = "eval_report";
    j["model"] = model;
    j["base_seed"] = base_seed;
    j["repetitions"] = repetitions;
    j["test_meters"] = test_meters;
    j["extractor"] = {{"kind", to_string(extractor_kind)},
                      {"output_dim", extractor_dim},
                      {"seed", extractor_seed}};
    json arr = json::array();
    for (const EvalEntry& e : entries) {
        json je;
        je["slice"] = e.slice;
        je["meters"] = e.meters;
        je["fid"] = stat_json(e.fid);
        je["kl"] = stat_json(e.kl);
        je["rmse"] = stat_json(e.rmse);
        je["r2"] = stat_json(e.r2);
        arr.push_back(je);
    }
    j["entries"] = arr;
    return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
    std::string out = "model,slice,metric,mean,std,repetitions\n";
    auto row = [&](const std::string& slice, const char* metric, const MetricStat& st) {
        out += model + "," + slice + "," + metric + "," + format_double(st.mean) + ",";
        if (st.has_std) out += format_double(st.std);
        out += "," + std::to_string(repetitions) + "\n";
    };
    for (const EvalEntry& e : entries) {
        row(e.slice, "fid", e.fid);
        row(e.slice, "kl", e.kl);
        row(e.slice, "rmse", e.rmse);
        row(e.slice, "r2", e.r2);
    }
    return out;
}

namespace {

double number_or_nan(const json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    return j.get<double>();
}

MetricStat stat_from_json(const json& j) {
    MetricStat st;
    st.mean = number_or_nan(j.at("mean"));
    if (j.contains("std")) {
        st.std = number_or_nan(j.at("std"));
        st.has_std = true;
    }
    return st;
}

} // namespace

EvalReport eval_report_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw parse_error(std::string("eval report: ") + e.what());
    }
    try {
        if (j.at("container") != "eval_report")
            throw format_error("eval report: unexpected container");
        EvalReport r;
        r.model = j.at("model").get<std::string>();
        r.base_seed = j.at("base_seed").get<uint64_t>();
        r.repetitions = j.at("repetitions").get<int>();
        r.test_meters = j.at("test_meters").get<int>();
        const json& ex = j.at("extractor");
        r.extractor_kind = extractor_kind_from_string(ex.at("kind").get<std::string>());
        r.extractor_dim = ex.at("output_dim").get<int>();
        r.extractor_seed = ex.at("seed").get<uint64_t>();
        for (const json& je : j.at("entries")) {
            EvalEntry e;
            e.slice = je.at("slice").get<std::string>();
            e.meters = je.at("meters").get<int>();
            e.fid = stat_from_json(je.at("fid"));
            e.kl = stat_from_json(je.at("kl"));
            e.rmse = stat_from_json(je.at("rmse"));
            e.r2 = stat_from_json(je.at("r2"));
            r.entries.push_back(std::move(e));
        }
        return r;
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw format_error(std::string("eval report: ") + e.what());
    }
}

namespace {

// Deterministic cost cap: keep two meters of every present meter and building
// type first, then round-robin across meter types until k rows are chosen.
std::vector<int> balanced_subset(const ProcessedDataset& data, const std::vector<int>& rows,
                                 size_t k) {
    std::vector<char> taken(rows.size(), 0);
    std::vector<int> picked;
    auto take = [&](size_t pos) {
        if (!taken[pos] && picked.size() < k) {
            taken[pos] = 1;
            picked.push_back(static_cast<int>(pos));
        }
    };
    for (int t = 0; t < kNumMeterTypes; ++t) {
        int need = 2;
        for (size_t i = 0; i < rows.size() && need > 0; ++i)
            if (!taken[i] &&
                data.meter_types[static_cast<size_t>(rows[i])] == static_cast<MeterType>(t)) {
                take(i);
                --need;
            }
    }
    for (int t = 0; t < kNumBuildingTypes; ++t) {
        int have = 0;
        for (size_t i = 0; i < rows.size(); ++i)
            if (taken[i] &&
                data.building_types[static_cast<size_t>(rows[i])] == static_cast<BuildingType>(t))
                ++have;
        bool present = false;
        for (size_t i = 0; i < rows.size(); ++i)
            if (data.building_types[static_cast<size_t>(rows[i])] == static_cast<BuildingType>(t))
                present = true;
        if (!present) continue;
        for (size_t i = 0; i < rows.size() && have < 2; ++i)
            if (!taken[i] &&
                data.building_types[static_cast<size_t>(rows[i])] == static_cast<BuildingType>(t)) {
                take(i);
                ++have;
            }
    }
    bool progress = true;
    while (picked.size() < k && progress) {
        progress = false;
        for (int t = 0; t < kNumMeterTypes && picked.size() < k; ++t)
            for (size_t i = 0; i < rows.size(); ++i)
                if (!taken[i] &&
                    data.meter_types[static_cast<size_t>(rows[i])] == static_cast<MeterType>(t)) {
                    take(i);
                    progress = true;
                    break;
                }
    }
    std::sort(picked.begin(), picked.end());
    std::vector<int> out;
    out.reserve(picked.size());
    for (int p : picked) out.push_back(rows[static_cast<size_t>(p)]);
    return out;
}

} // namespace

EvalReport evaluate_all(const Checkpoint& ckpt, const ProcessedDataset& data,
                        const FeatureExtractor& extractor, int repetitions, uint64_t base_seed,
                        int max_meters) {
    if (repetitions < 1) throw contract_error("evaluate_all: repetitions must be >= 1");
    std::vector<int> test_rows = data.indices_of(SplitLabel::test);
    if (test_rows.empty()) throw contract_error("evaluate_all: test split is empty");
    if (max_meters > 0 && static_cast<size_t>(max_meters) < test_rows.size())
        test_rows = balanced_subset(data, test_rows, static_cast<size_t>(max_meters));
    const int m = static_cast<int>(test_rows.size());
    const int h = data.images.dim(1), w = data.images.dim(2);

    TensorF real({m, h, w});
    TensorF conds({m, kConditionDims});
    size_t stride = static_cast<size_t>(h) * w;
    for (int i = 0; i < m; ++i) {
        std::memcpy(real.data() + static_cast<size_t>(i) * stride,
                    data.images.data() + static_cast<size_t>(test_rows[i]) * stride,
                    stride * sizeof(float));
        std::memcpy(conds.data() + static_cast<size_t>(i) * kConditionDims,
                    data.conditions.data() +
                        static_cast<size_t>(test_rows[i]) * kConditionDims,
                    kConditionDims * sizeof(float));
    }

    std::vector<Slice> slices;
    slices.push_back({"overall", {}});
    for (int i = 0; i < m; ++i) slices[0].rows.push_back(i);
    for (int t = 0; t < kNumMeterTypes; ++t) {
        Slice s{std::string("meter:") + to_string(static_cast<MeterType>(t)), {}};
        for (int i = 0; i < m; ++i)
            if (data.meter_types[static_cast<size_t>(test_rows[i])] == static_cast<MeterType>(t))
                s.rows.push_back(i);
        if (!s.rows.empty()) slices.push_back(std::move(s));
    }
    for (int t = 0; t < kNumBuildingTypes; ++t) {
        Slice s{std::string("building:") + to_string(static_cast<BuildingType>(t)), {}};
        for (int i = 0; i < m; ++i)
            if (data.building_types[static_cast<size_t>(test_rows[i])] ==
                static_cast<BuildingType>(t))
                s.rows.push_back(i);
        if (!s.rows.empty()) slices.push_back(std::move(s));
    }

    TensorF real_feats = extract_features(extractor, real);
    std::vector<TensorF> real_slice_feats, real_slice_imgs;
    std::vector<std::vector<float>> real_slice_pool;
    for (const Slice& s : slices) {
        real_slice_feats.push_back(gather_rows(real_feats, s.rows));
        real_slice_imgs.push_back(gather_rows(real, s.rows));
        real_slice_pool.push_back(pool_values(real, s.rows));
    }

    SampleFn sampler = make_sampler(ckpt);
    std::vector<std::vector<double>> fid_acc(slices.size()), kl_acc(slices.size()),
        rmse_acc(slices.size()), r2_acc(slices.size());

    for (int rep = 0; rep < repetitions; ++rep) {
        TensorF synth;
        try {
            synth = sampler(conds, base_seed + static_cast<uint64_t>(rep));
        } catch (const Error& e) {
            throw Error(e.kind(), "generation repetition " + std::to_string(rep) + ": " + e.what());
        }
        TensorF synth_feats = extract_features(extractor, synth);
        for (size_t si = 0; si < slices.size(); ++si) {
            TensorF sf = gather_rows(synth_feats, slices[si].rows);
            TensorF simg = gather_rows(synth, slices[si].rows);
            fid_acc[si].push_back(slices[si].rows.size() >= 2
                                      ? compute_fid(real_slice_feats[si], sf)
                                      : std::numeric_limits<double>::quiet_NaN());
            kl_acc[si].push_back(compute_kl(real_slice_pool[si], pool_values(synth, slices[si].rows)));
            RmseR2 rr = compute_rmse_r2(real_slice_imgs[si], simg);
            rmse_acc[si].push_back(rr.rmse);
            r2_acc[si].push_back(rr.r2);
        }
    }

    EvalReport report;
    report.model = to_string(ckpt.kind);
    report.base_seed = base_seed;
    report.repetitions = repetitions;
    report.test_meters = m;
    report.extractor_kind = extractor.kind;
    report.extractor_dim = extractor.output_dim;
    report.extractor_seed = extractor.seed;
    for (size_t si = 0; si < slices.size(); ++si) {
        EvalEntry e;
        e.slice = slices[si].name;
        e.meters = static_cast<int>(slices[si].rows.size());
        e.fid = finalize(fid_acc[si]);
        e.kl = finalize(kl_acc[si]);
        e.rmse = finalize(rmse_acc[si]);
        e.r2 = finalize(r2_acc[si]);
        report.entries.push_back(std::move(e));
    }
    return report;
}

} // namespace energen
