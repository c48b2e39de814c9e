#include <energen/experiment.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace energen {

namespace fs = std::filesystem;
using json = nlohmann::json;

void EvalSettings::validate() const {
    if (repetitions < 1) throw config_error("evaluation: repetitions must be >= 1");
    if (max_meters < 0) throw config_error("evaluation: max_meters must be >= 0");
}

ExperimentConfig::ExperimentConfig() {
    diffusion.model_kind = ModelKind::diffusion;
    cvae.model_kind = ModelKind::cvae;
    cgan.model_kind = ModelKind::cgan;
}

TrainConfig& ExperimentConfig::model_config(ModelKind k) {
    switch (k) {
    case ModelKind::diffusion: return diffusion;
    case ModelKind::cvae: return cvae;
    case ModelKind::cgan: return cgan;
    }
    throw contract_error("invalid model kind");
}

const TrainConfig& ExperimentConfig::model_config(ModelKind k) const {
    return const_cast<ExperimentConfig*>(this)->model_config(k);
}

void ExperimentConfig::validate() const {
    if (meters_csv.empty()) throw config_error("experiment: meters path is required");
    if (metadata_csv.empty()) throw config_error("experiment: metadata path is required");
    if (output_dir.empty()) throw config_error("experiment: output path is required");
    if (!fs::exists(meters_csv)) throw config_error("experiment: meters file not found: " + meters_csv);
    if (!fs::exists(metadata_csv))
        throw config_error("experiment: metadata file not found: " + metadata_csv);
    if (models.empty()) throw config_error("experiment: no models selected");
    std::set<ModelKind> seen;
    for (ModelKind k : models)
        if (!seen.insert(k).second)
            throw config_error(std::string("experiment: model listed twice: ") + to_string(k));
    if (!(pipeline.train_frac > 0.0 && pipeline.train_frac < 1.0))
        throw config_error("experiment: train_frac must be in (0,1)");
    if (pipeline.subsample_meters < 0)
        throw config_error("experiment: subsample_meters must be >= 0");
    for (ModelKind k : models) {
        TrainConfig r = model_config(k).resolved();
        if (r.model_kind != k)
            throw config_error(std::string("experiment: config for ") + to_string(k) +
                               " carries the wrong model kind");
        r.validate();
    }
    eval.validate();
}

namespace {

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string filters_str(const std::array<int, 3>& f) {
    return std::to_string(f[0]) + "," + std::to_string(f[1]) + "," + std::to_string(f[2]);
}

void common_train_lines(std::ostringstream& o, const TrainConfig& r) {
    o << "epochs = " << r.epochs << "\n";
    o << "learning_rate = " << fmt_g(r.learning_rate) << "\n";
    o << "batch_size = " << r.batch_size << "\n";
    o << "seed = " << r.seed << "\n";
    o << "eval_every = " << r.eval_every << "\n";
}

} // namespace

std::string ExperimentConfig::canonical_text() const {
    std::ostringstream o;
    o << "[experiment]\n";
    o << "meters = " << meters_csv << "\n";
    o << "metadata = " << metadata_csv << "\n";
    o << "schema = " << (schema == CsvSchema::wide ? "wide" : "long") << "\n";
    o << "output = " << output_dir << "\n";
    o << "models = ";
    for (size_t i = 0; i < models.size(); ++i)
        o << (i ? "," : "") << to_string(models[i]);
    o << "\n";
    o << "split_seed = " << pipeline.split_seed << "\n";
    o << "train_frac = " << fmt_g(pipeline.train_frac) << "\n";
    o << "subsample_meters = " << pipeline.subsample_meters << "\n";
    o << "iqr_multiplier = " << fmt_g(pipeline.iqr_multiplier) << "\n";
    o << "max_missing = " << fmt_g(pipeline.max_missing_frac) << "\n";

    TrainConfig d = diffusion.resolved();
    o << "[diffusion]\n";
    common_train_lines(o, d);
    o << "hidden_features = " << d.denoiser.hidden_features << "\n";
    o << "time_embed_dim = " << d.denoiser.time_embed_dim << "\n";
    o << "total_steps = " << d.denoiser.total_steps << "\n";
    o << "beta_start = " << fmt_g(d.beta_start) << "\n";
    o << "beta_end = " << fmt_g(d.beta_end) << "\n";

    TrainConfig v = cvae.resolved();
    o << "[cvae]\n";
    common_train_lines(o, v);
    o << "encoder_filters = " << filters_str(v.cvae.encoder_filters) << "\n";
    o << "decoder_filters = " << filters_str(v.cvae.decoder_filters) << "\n";
    o << "dense_dim = " << v.cvae.dense_dim << "\n";
    o << "latent_dim = " << v.cvae.latent_dim << "\n";
    o << "kl_weight = " << fmt_g(v.cvae.kl_weight) << "\n";

    TrainConfig g = cgan.resolved();
    o << "[cgan]\n";
    common_train_lines(o, g);
    o << "disc_filters = " << filters_str(g.cgan.disc_filters) << "\n";
    o << "gen_filters = " << filters_str(g.cgan.gen_filters) << "\n";
    o << "noise_dim = " << g.cgan.noise_dim << "\n";

    o << "[evaluation]\n";
    o << "repetitions = " << eval.repetitions << "\n";
    o << "base_seed = " << eval.base_seed << "\n";
    o << "extractor_seed = " << eval.extractor_seed << "\n";
    o << "max_meters = " << eval.max_meters << "\n";
    return o.str();
}

uint64_t fnv1a64(const void* data, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = 14695981039346656037ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hash_hex(uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

uint64_t ExperimentConfig::config_hash() const {
    std::string t = canonical_text();
    return fnv1a64(t.data(), t.size());
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct IniValue {
    std::string text;
    int line = 0;

    int as_int() const {
        try {
            size_t used = 0;
            int v = std::stoi(text, &used);
            if (used != text.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw parse_error("config line " + std::to_string(line) + ": expected integer, got '" +
                              text + "'");
        }
    }
    uint64_t as_u64() const {
        try {
            size_t used = 0;
            unsigned long long v = std::stoull(text, &used);
            if (used != text.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw parse_error("config line " + std::to_string(line) + ": expected integer, got '" +
                              text + "'");
        }
    }
    double as_double() const {
        try {
            size_t used = 0;
            double v = std::stod(text, &used);
            if (used != text.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw parse_error("config line " + std::to_string(line) + ": expected number, got '" +
                              text + "'");
        }
    }
    std::array<int, 3> as_filters() const {
        std::array<int, 3> out{};
        std::stringstream ss(text);
        std::string item;
        int i = 0;
        while (std::getline(ss, item, ',')) {
            if (i >= 3) ++i;
            else {
                IniValue v{trim(item), line};
                out[static_cast<size_t>(i++)] = v.as_int();
            }
        }
        if (i != 3)
            throw parse_error("config line " + std::to_string(line) +
                              ": expected three comma-separated filter counts, got '" + text + "'");
        return out;
    }
};

std::string resolve_path(const fs::path& base, const std::string& p) {
    fs::path pp(p);
    if (pp.is_absolute() || base.empty()) return pp.lexically_normal().string();
    return (base / pp).lexically_normal().string();
}

void apply_common_train_key(TrainConfig& tc, const std::string& key, const IniValue& v,
                            bool* handled) {
    *handled = true;
    if (key == "epochs") tc.epochs = v.as_int();
    else if (key == "learning_rate") tc.learning_rate = v.as_double();
    else if (key == "batch_size") tc.batch_size = v.as_int();
    else if (key == "seed") tc.seed = v.as_u64();
    else if (key == "eval_every") tc.eval_every = v.as_int();
    else *handled = false;
}

} // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file: " + path);
    fs::path base = fs::path(path).parent_path();

    ExperimentConfig cfg;
    bool models_given = false;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw parse_error("config line " + std::to_string(lineno) + ": unterminated section");
            section = trim(t.substr(1, t.size() - 2));
            if (section != "experiment" && section != "diffusion" && section != "cvae" &&
                section != "cgan" && section != "evaluation")
                throw config_error("config line " + std::to_string(lineno) + ": unknown section [" +
                                   section + "]");
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw parse_error("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        IniValue val{trim(t.substr(eq + 1)), lineno};
        if (section.empty())
            throw config_error("config line " + std::to_string(lineno) +
                               ": key outside any section");

        auto unknown = [&]() {
            throw config_error("config line " + std::to_string(lineno) + ": unknown key '" + key +
                               "' in [" + section + "]");
        };

        if (section == "experiment") {
            if (key == "meters") cfg.meters_csv = resolve_path(base, val.text);
            else if (key == "metadata") cfg.metadata_csv = resolve_path(base, val.text);
            else if (key == "output") cfg.output_dir = resolve_path(base, val.text);
            else if (key == "schema") {
                if (val.text == "wide") cfg.schema = CsvSchema::wide;
                else if (val.text == "long") cfg.schema = CsvSchema::long_form;
                else
                    throw config_error("config line " + std::to_string(lineno) +
                                       ": schema must be wide or long");
            } else if (key == "models") {
                cfg.models.clear();
                std::stringstream ss(val.text);
                std::string item;
                while (std::getline(ss, item, ','))
                    cfg.models.push_back(model_kind_from_string(trim(item)));
                models_given = true;
            } else if (key == "split_seed") cfg.pipeline.split_seed = val.as_u64();
            else if (key == "train_frac") cfg.pipeline.train_frac = val.as_double();
            else if (key == "subsample_meters") cfg.pipeline.subsample_meters = val.as_int();
            else if (key == "iqr_multiplier") cfg.pipeline.iqr_multiplier = val.as_double();
            else if (key == "max_missing") cfg.pipeline.max_missing_frac = val.as_double();
            else unknown();
        } else if (section == "evaluation") {
            if (key == "repetitions") cfg.eval.repetitions = val.as_int();
            else if (key == "base_seed") cfg.eval.base_seed = val.as_u64();
            else if (key == "extractor_seed") cfg.eval.extractor_seed = val.as_u64();
            else if (key == "max_meters") cfg.eval.max_meters = val.as_int();
            else unknown();
        } else {
            TrainConfig& tc = section == "diffusion" ? cfg.diffusion
                              : section == "cvae"    ? cfg.cvae
                                                     : cfg.cgan;
            bool handled = false;
            apply_common_train_key(tc, key, val, &handled);
            if (handled) continue;
            if (section == "diffusion") {
                if (key == "hidden_features") tc.denoiser.hidden_features = val.as_int();
                else if (key == "time_embed_dim") tc.denoiser.time_embed_dim = val.as_int();
                else if (key == "total_steps") tc.denoiser.total_steps = val.as_int();
                else if (key == "beta_start") tc.beta_start = val.as_double();
                else if (key == "beta_end") tc.beta_end = val.as_double();
                else unknown();
            } else if (section == "cvae") {
                if (key == "encoder_filters") tc.cvae.encoder_filters = val.as_filters();
                else if (key == "decoder_filters") tc.cvae.decoder_filters = val.as_filters();
                else if (key == "dense_dim") tc.cvae.dense_dim = val.as_int();
                else if (key == "latent_dim") tc.cvae.latent_dim = val.as_int();
                else if (key == "kl_weight") tc.cvae.kl_weight = val.as_double();
                else unknown();
            } else {
                if (key == "disc_filters") tc.cgan.disc_filters = val.as_filters();
                else if (key == "gen_filters") tc.cgan.gen_filters = val.as_filters();
                else if (key == "noise_dim") tc.cgan.noise_dim = val.as_int();
                else unknown();
            }
        }
    }
    (void)models_given;
    return cfg;
}

namespace {

const char* kMetricNames[4] = {"fid", "kl", "rmse", "r2"};

double metric_mean(const EvalReport& r, const std::string& metric) {
    const EvalEntry* e = r.find("overall");
    if (!e) throw contract_error("compare_models: report for " + r.model + " has no overall slice");
    if (metric == "fid") return e->fid.mean;
    if (metric == "kl") return e->kl.mean;
    if (metric == "rmse") return e->rmse.mean;
    return e->r2.mean;
}

} // namespace

Comparison compare_models(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw contract_error("compare_models: no reports");
    for (size_t i = 1; i < reports.size(); ++i) {
        const EvalReport& a = reports[0];
        const EvalReport& b = reports[i];
        if (a.extractor_kind != b.extractor_kind || a.extractor_dim != b.extractor_dim ||
            a.extractor_seed != b.extractor_seed)
            throw contract_error("compare_models: reports used different feature extractors (" +
                                 a.model + " vs " + b.model + ")");
        if (a.test_meters != b.test_meters)
            throw contract_error("compare_models: reports evaluated different test splits (" +
                                 a.model + ": " + std::to_string(a.test_meters) + " meters, " +
                                 b.model + ": " + std::to_string(b.test_meters) + ")");
    }

    Comparison cmp;
    for (const char* metric : kMetricNames) {
        ComparisonRow row;
        row.metric = metric;
        bool higher_better = row.metric == "r2";
        for (const EvalReport& r : reports)
            row.cells.push_back({r.model, metric_mean(r, row.metric), false});
        std::sort(row.cells.begin(), row.cells.end(),
                  [&](const ComparisonCell& a, const ComparisonCell& b) {
                      auto rank_key = [&](double v) {
                          if (std::isnan(v))
                              return higher_better ? -std::numeric_limits<double>::infinity()
                                                   : std::numeric_limits<double>::infinity();
                          return higher_better ? -v : v;
                      };
                      double ka = rank_key(a.mean), kb = rank_key(b.mean);
                      if (ka != kb) return ka < kb;
                      return a.model < b.model;
                  });
        double best = row.cells.front().mean;
        for (ComparisonCell& c : row.cells)
            c.best = !std::isnan(c.mean) && c.mean == best;
        cmp.rows.push_back(std::move(row));
    }
    return cmp;
}

std::string Comparison::to_csv() const {
    std::string out = "metric,rank,model,mean,best\n";
    for (const ComparisonRow& row : rows)
        for (size_t i = 0; i < row.cells.size(); ++i) {
            const ComparisonCell& c = row.cells[i];
            out += row.metric + "," + std::to_string(i + 1) + "," + c.model + "," + fmt9(c.mean) +
                   "," + (c.best ? "1" : "0") + "\n";
        }
    return out;
}

std::string Comparison::to_json() const {
    json j;
    j["schema_version"] = 1;
    j["container"] = "model_comparison";
    json arr = json::array();
    for (const ComparisonRow& row : rows) {
        json jr;
        jr["metric"] = row.metric;
        json cells = json::array();
        for (const ComparisonCell& c : row.cells)
            cells.push_back({{"model", c.model}, {"mean", c.mean}, {"best", c.best}});
        jr["cells"] = cells;
        arr.push_back(jr);
    }
    j["rows"] = arr;
    return j.dump(2) + "\n";
}

namespace {

template <typename F>
auto stage(const std::string& name, F f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error(e.kind(), "stage " + name + ": " + e.what());
    } catch (const std::exception& e) {
        throw runtime_error("stage " + name + ": " + e.what());
    }
}

void write_text(const fs::path& p, const std::string& content) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw io_error("cannot write " + p.string());
    out << content;
}

// Rows at the eval cadence only; part columns beyond the loss are sorted by name.
std::string curve_csv(const Checkpoint& ck, const std::string& hash) {
    int every = ck.config.eval_every;
    std::set<std::string> parts;
    for (const EpochMetrics& m : ck.history)
        if (every > 0 && m.epoch % every == 0)
            for (const auto& [k, v] : m.parts)
                if (k != "test_loss") parts.insert(k);

    std::string out = "# config_hash=" + hash + "\n";
    out += "epoch,train_loss,test_loss";
    for (const std::string& p : parts) out += "," + p;
    out += "\n";
    for (const EpochMetrics& m : ck.history) {
        if (every <= 0 || m.epoch % every != 0) continue;
        out += std::to_string(m.epoch) + "," + fmt9(m.loss) + ",";
        auto it = m.parts.find("test_loss");
        if (it != m.parts.end()) out += fmt9(it->second);
        for (const std::string& p : parts) {
            auto pit = m.parts.find(p);
            out += ",";
            if (pit != m.parts.end()) out += fmt9(pit->second);
        }
        out += "\n";
    }
    return out;
}

json json_with_hash(const std::string& body, const std::string& hash) {
    json j = json::parse(body);
    j["config_hash"] = hash;
    return j;
}

} // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
    config.validate();
    fs::path out(config.output_dir);
    fs::remove_all(out);
    fs::create_directories(out);

    ExperimentResult res;
    res.output_dir = config.output_dir;
    res.config_hash = hash_hex(config.config_hash());
    write_text(out / "config.ini", config.canonical_text());

    std::vector<MeterSeries> series;
    std::vector<MeterMetadata> metadata;
    stage("ingest", [&] {
        series = load_meter_csv(config.meters_csv, config.schema);
        metadata = load_metadata_csv(config.metadata_csv);
        return 0;
    });

    ProcessedDataset data;
    stage("preprocess", [&] {
        data = build_processed_dataset(series, metadata, config.pipeline, &res.stats);
        save_dataset(data, (out / "dataset").string());
        return 0;
    });
    res.dataset_meters = data.count();

    std::vector<Checkpoint> checkpoints;
    for (ModelKind kind : config.models) {
        stage(std::string("train:") + to_string(kind), [&] {
            Checkpoint ck = train(data, config.model_config(kind));
            save_checkpoint(ck, (out / "checkpoints" / to_string(kind)).string());
            write_text(out / "curves" / (std::string(to_string(kind)) + ".csv"),
                       curve_csv(ck, res.config_hash));
            checkpoints.push_back(std::move(ck));
            return 0;
        });
    }

    stage("evaluate", [&] {
        FeatureExtractor extractor;
        extractor.seed = config.eval.extractor_seed;
        for (const Checkpoint& ck : checkpoints) {
            EvalReport r = evaluate_all(ck, data, extractor, config.eval.repetitions,
                                        config.eval.base_seed, config.eval.max_meters);
            write_text(out / "eval" / (r.model + ".json"),
                       json_with_hash(r.to_json(), res.config_hash).dump(2) + "\n");
            write_text(out / "eval" / (r.model + ".csv"),
                       "# config_hash=" + res.config_hash + "\n" + r.to_csv());
            res.reports.push_back(std::move(r));
        }
        return 0;
    });

    stage("compare", [&] {
        res.comparison = compare_models(res.reports);
        write_text(out / "eval" / "comparison.json",
                   json_with_hash(res.comparison.to_json(), res.config_hash).dump(2) + "\n");
        write_text(out / "eval" / "comparison.csv",
                   "# config_hash=" + res.config_hash + "\n" + res.comparison.to_csv());
        return 0;
    });

    stage("manifest", [&] {
        json j;
        j["schema_version"] = 1;
        j["container"] = "experiment_manifest";
        j["config_hash"] = res.config_hash;
        json models = json::array();
        for (ModelKind k : config.models) models.push_back(to_string(k));
        j["models"] = models;
        json seeds;
        seeds["split"] = config.pipeline.split_seed;
        for (ModelKind k : config.models)
            seeds[to_string(k)] = config.model_config(k).resolved().seed;
        seeds["eval_base"] = config.eval.base_seed;
        seeds["extractor"] = config.eval.extractor_seed;
        j["seeds"] = seeds;
        j["pipeline_stats"] = {{"meter_years_loaded", res.stats.meter_years_loaded},
                               {"meters_with_metadata", res.stats.meters_with_metadata},
                               {"meters_after_missing_filter", res.stats.meters_after_missing_filter},
                               {"meters_retained", res.stats.meters_retained}};
        j["dataset"] = {{"meters", data.count()},
                        {"train", static_cast<int>(data.indices_of(SplitLabel::train).size())},
                        {"test", static_cast<int>(data.indices_of(SplitLabel::test).size())}};
        j["evaluation"] = {{"repetitions", config.eval.repetitions},
                           {"max_meters", config.eval.max_meters},
                           {"evaluated_meters",
                            res.reports.empty() ? 0 : res.reports.front().test_meters}};

        std::vector<std::string> artifacts;
        for (const auto& entry : fs::recursive_directory_iterator(out))
            if (entry.is_regular_file()) {
                std::string rel = fs::relative(entry.path(), out).generic_string();
                if (rel != "manifest.json") artifacts.push_back(rel);
            }
        std::sort(artifacts.begin(), artifacts.end());
        j["artifacts"] = artifacts;
        write_text(out / "manifest.json", j.dump(2) + "\n");
        return 0;
    });

    return res;
}

} // namespace energen
