#pragma once

// One-config orchestration of the full protocol: ingest raw CSVs, preprocess
// and split, train the selected models, evaluate each with repeated
// generation, rank them, and tie every artifact to its seeds and config hash.

#include <energen/data_pipeline.hpp>
#include <energen/evaluation.hpp>
#include <energen/training.hpp>

#include <string>
#include <vector>

namespace energen {

struct EvalSettings {
    int repetitions = 30;
    uint64_t base_seed = 0;
    uint64_t extractor_seed = 0;
    int max_meters = 0; // 0 = evaluate every test meter

    void validate() const;
};

struct ExperimentConfig {
    std::string meters_csv;
    std::string metadata_csv;
    CsvSchema schema = CsvSchema::long_form;
    std::string output_dir;
    PipelineOptions pipeline;
    std::vector<ModelKind> models{ModelKind::diffusion, ModelKind::cvae, ModelKind::cgan};
    TrainConfig diffusion;
    TrainConfig cvae;
    TrainConfig cgan;
    EvalSettings eval;

    ExperimentConfig();

    TrainConfig& model_config(ModelKind k);
    const TrainConfig& model_config(ModelKind k) const;
    void validate() const; // config errors; referenced input paths must exist
    // Deterministic full-field serialization; also the config echo artifact.
    std::string canonical_text() const;
    uint64_t config_hash() const; // FNV-1a over canonical_text()
};

// INI-style file: [experiment] / [diffusion] / [cvae] / [cgan] / [evaluation]
// sections of key = value lines, # or ; comment lines. Relative paths resolve
// against the config file's directory. Unknown sections or keys are errors.
ExperimentConfig load_experiment_config(const std::string& path);

uint64_t fnv1a64(const void* data, size_t n);
std::string hash_hex(uint64_t h);

struct ComparisonCell {
    std::string model;
    double mean = 0.0;
    bool best = false;
};

struct ComparisonRow {
    std::string metric;
    std::vector<ComparisonCell> cells; // ranked best first, ties by model name
};

struct Comparison {
    std::vector<ComparisonRow> rows; // fid, kl, rmse, r2
    std::string to_csv() const;      // metric,rank,model,mean,best
    std::string to_json() const;
};

// Ranks overall-slice means: lower is better for fid/kl/rmse, higher for r2.
// Reports must share extractor settings and evaluated test-meter count.
Comparison compare_models(const std::vector<EvalReport>& reports);

struct ExperimentResult {
    std::string output_dir;
    std::string config_hash;
    PipelineStats stats;
    int dataset_meters = 0;
    std::vector<EvalReport> reports; // in config.models order
    Comparison comparison;
};

// Runs every stage in order, writing artifacts under config.output_dir (the
// directory is recreated from scratch). A stage failure throws with the stage
// name; artifacts from completed stages stay on disk.
ExperimentResult run_experiment(const ExperimentConfig& config);

} // namespace energen
