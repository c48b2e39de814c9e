#pragma once

// Metric suite for judging generated meter images against held-out real data:
// FID over features from a seeded untrained conv stack, KL divergence of the
// pooled hourly value distribution, and paired RMSE / R^2. evaluate_all runs
// the whole suite over repeated generations and slices the results by meter
// and building type.

#include <energen/data_pipeline.hpp>
#include <energen/nn.hpp>
#include <energen/training.hpp>

#include <functional>
#include <string>
#include <vector>

namespace energen {

enum class ExtractorKind { seeded_random_conv, external_pretrained };

const char* to_string(ExtractorKind k);
ExtractorKind extractor_kind_from_string(const std::string& s); // throws on unknown value

struct FeatureExtractor {
    ExtractorKind kind = ExtractorKind::seeded_random_conv;
    int output_dim = 64;
    uint64_t seed = 0;
    // Used only for external_pretrained: maps [N,H,W] in [-1,1] to [N,output_dim].
    std::function<TensorF(const TensorF&)> external_fn;
};

// [N,H,W] in [-1,1] -> [N,output_dim]. The same (kind, output_dim, seed) always
// produces the same feature map; any FID comparison must reuse one extractor
// for both sides.
TensorF extract_features(const FeatureExtractor& extractor, const TensorF& images);

// Frechet distance between Gaussian fits of two feature sets [N,d]:
// ||mu_r - mu_s||^2 + Tr(Sr + Ss - 2 (Sr Ss)^{1/2}), the square root taken by
// eigendecomposition of the symmetrized product with eigenvalues clamped at 0.
// Covariances get a 1e-6 ridge when either side has fewer than d+1 rows.
double compute_fid(const TensorF& real_feats, const TensorF& synth_feats);

// KL(real || synth) in nats over histograms of the two value pools.
double compute_kl(const std::vector<float>& real_values, const std::vector<float>& synth_values,
                  int bins = 100, float lo = -1.0f, float hi = 1.0f, double epsilon = 1e-8);

struct RmseR2 {
    double rmse = 0.0;
    double r2 = 0.0;
};

// Pooled over every element of the paired tensors; r2 uses the pooled real mean.
RmseR2 compute_rmse_r2(const TensorF& real, const TensorF& synth);

// Deterministic cyclic Jacobi eigendecomposition of a symmetric matrix.
// Eigenvalues ascending; a == vectors * values.asDiagonal() * vectors^T.
void symmetric_eigen(const Eigen::MatrixXd& a, Eigen::VectorXd& values, Eigen::MatrixXd& vectors);

struct MetricStat {
    double mean = 0.0;
    double std = 0.0;
    bool has_std = false;
};

struct EvalEntry {
    std::string slice; // "overall", "meter:<type>", "building:<type>"
    int meters = 0;    // test meters contributing to the slice
    MetricStat fid, kl, rmse, r2;
};

struct EvalReport {
    std::string model;
    uint64_t base_seed = 0;
    int repetitions = 0;
    int test_meters = 0;
    ExtractorKind extractor_kind = ExtractorKind::seeded_random_conv;
    int extractor_dim = 64;
    uint64_t extractor_seed = 0;
    std::vector<EvalEntry> entries;

    const EvalEntry* find(const std::string& slice) const;
    std::string to_json() const;
    // Flat rows: model,slice,metric,mean,std,repetitions (std empty when absent).
    std::string to_csv() const;
};

// Inverse of EvalReport::to_json (null means parse back as NaN).
EvalReport eval_report_from_json(const std::string& text);

// For each repetition r in [0, repetitions): generate one sample per test meter
// with seed base_seed + r, then score the four metrics overall and per slice.
// Means are reported always, standard deviations only when repetitions >= 2.
// max_meters > 0 caps generation cost by evaluating a deterministic subset of
// the test split, chosen to keep two members of every present meter and
// building type while the cap allows. A slice that still ends up with a
// single meter gets NaN for FID (it needs two samples per side).
EvalReport evaluate_all(const Checkpoint& ckpt, const ProcessedDataset& data,
                        const FeatureExtractor& extractor, int repetitions, uint64_t base_seed,
                        int max_meters = 0);

} // namespace energen
