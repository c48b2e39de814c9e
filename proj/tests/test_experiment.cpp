#include <doctest.h>

#include <energen/corpus.hpp>
#include <energen/data_pipeline.hpp>
#include <energen/experiment.hpp>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace energen;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TmpDir {
    fs::path path;
    explicit TmpDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("energen_exp_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    fs::path operator/(const std::string& p) const { return path / p; }
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(bool(in));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    REQUIRE(bool(out));
    out << text;
}

std::vector<std::string> read_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) lines.push_back(line);
    return lines;
}

// Content fingerprint of every regular file under root, keyed by relative path.
std::map<std::string, uint64_t> tree_digest(const fs::path& root) {
    std::map<std::string, uint64_t> out;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file()) {
            std::string body = read_file(entry.path());
            out[fs::relative(entry.path(), root).generic_string()] =
                fnv1a64(body.data(), body.size());
        }
    return out;
}

ExperimentConfig tiny_config(const fs::path& corpus, const fs::path& out) {
    ExperimentConfig cfg;
    cfg.meters_csv = (corpus / "meters.csv").string();
    cfg.metadata_csv = (corpus / "metadata.csv").string();
    cfg.schema = CsvSchema::wide;
    cfg.output_dir = out.string();
    cfg.pipeline.split_seed = 99;

    cfg.diffusion.epochs = 2;
    cfg.diffusion.learning_rate = 1e-3;
    cfg.diffusion.batch_size = 8;
    cfg.diffusion.seed = 11;
    cfg.diffusion.eval_every = 1;
    cfg.diffusion.denoiser.hidden_features = 4;
    cfg.diffusion.denoiser.time_embed_dim = 6;
    cfg.diffusion.denoiser.total_steps = 8;

    cfg.cvae.epochs = 2;
    cfg.cvae.learning_rate = 1e-3;
    cfg.cvae.batch_size = 8;
    cfg.cvae.seed = 12;
    cfg.cvae.eval_every = 1;
    cfg.cvae.cvae.encoder_filters = {3, 4, 5};
    cfg.cvae.cvae.decoder_filters = {5, 4, 3};
    cfg.cvae.cvae.dense_dim = 16;
    cfg.cvae.cvae.latent_dim = 8;

    cfg.cgan.epochs = 2;
    cfg.cgan.learning_rate = 1e-4;
    cfg.cgan.batch_size = 8;
    cfg.cgan.seed = 13;
    cfg.cgan.eval_every = 1;
    cfg.cgan.cgan.disc_filters = {3, 4, 5};
    cfg.cgan.cgan.gen_filters = {5, 4, 3};
    cfg.cgan.cgan.noise_dim = 5;

    cfg.eval.repetitions = 2;
    cfg.eval.base_seed = 500;
    cfg.eval.extractor_seed = 9;
    cfg.eval.max_meters = 0;
    return cfg;
}

EvalReport fake_report(const std::string& model, double fid, double kl, double rmse, double r2) {
    EvalReport r;
    r.model = model;
    r.base_seed = 1;
    r.repetitions = 3;
    r.test_meters = 6;
    r.extractor_seed = 42;
    EvalEntry e;
    e.slice = "overall";
    e.meters = 6;
    e.fid.mean = fid;
    e.kl.mean = kl;
    e.rmse.mean = rmse;
    e.r2.mean = r2;
    r.entries.push_back(e);
    return r;
}

} // namespace

TEST_CASE("fnv1a64 matches the reference vectors and hash_hex pads") {
    CHECK(fnv1a64("", 0) == 14695981039346656037ULL);
    CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar", 6) == 0x85944171f73967e8ULL);
    CHECK(hash_hex(1) == "0000000000000001");
    CHECK(hash_hex(14695981039346656037ULL) == "cbf29ce484222325");
}

TEST_CASE("config hash tracks canonical content only") {
    ExperimentConfig a, b;
    a.meters_csv = b.meters_csv = "m.csv";
    a.metadata_csv = b.metadata_csv = "md.csv";
    a.output_dir = b.output_dir = "out";
    CHECK(a.canonical_text() == b.canonical_text());
    CHECK(a.config_hash() == b.config_hash());

    b.eval.base_seed = 777;
    CHECK(a.config_hash() != b.config_hash());
    b.eval.base_seed = a.eval.base_seed;
    CHECK(a.config_hash() == b.config_hash());

    b.models = {ModelKind::cvae};
    CHECK(a.config_hash() != b.config_hash());

    std::string text = a.canonical_text();
    CHECK(text.find("diffusion") != std::string::npos);
    CHECK(text.find("cvae") != std::string::npos);
    CHECK(text.find("cgan") != std::string::npos);
    CHECK(text.find("m.csv") != std::string::npos);
}

TEST_CASE("config file round trip resolves paths and applies keys") {
    TmpDir tmp("ini");
    write_file(tmp / "cfg/run.ini",
               "# comment\n"
               "[experiment]\n"
               "meters = ../data/m.csv\n"
               "metadata = ../data/md.csv\n"
               "output = ../out/run1\n"
               "schema = wide\n"
               "models = cvae,cgan\n"
               "split_seed = 4321\n"
               "train_frac = 0.8\n"
               "subsample_meters = 40\n"
               "iqr_multiplier = 2.5\n"
               "max_missing = 0.1\n"
               "\n"
               "[diffusion]\n"
               "epochs = 7\n"
               "hidden_features = 24\n"
               "total_steps = 100\n"
               "beta_start = 2e-4\n"
               "\n"
               "[cvae]\n"
               "learning_rate = 0.002\n"
               "latent_dim = 32\n"
               "encoder_filters = 8, 16, 24\n"
               "kl_weight = 0.5\n"
               "\n"
               "[cgan]\n"
               "noise_dim = 12\n"
               "seed = 9001\n"
               "\n"
               "[evaluation]\n"
               "repetitions = 4\n"
               "base_seed = 1000\n"
               "extractor_seed = 55\n"
               "max_meters = 10\n");

    ExperimentConfig cfg = load_experiment_config((tmp / "cfg/run.ini").string());
    CHECK(cfg.meters_csv == (tmp.path / "data/m.csv").lexically_normal().string());
    CHECK(cfg.metadata_csv == (tmp.path / "data/md.csv").lexically_normal().string());
    CHECK(cfg.output_dir == (tmp.path / "out/run1").lexically_normal().string());
    CHECK(cfg.schema == CsvSchema::wide);
    REQUIRE(cfg.models.size() == 2);
    CHECK(cfg.models[0] == ModelKind::cvae);
    CHECK(cfg.models[1] == ModelKind::cgan);
    CHECK(cfg.pipeline.split_seed == 4321);
    CHECK(cfg.pipeline.train_frac == doctest::Approx(0.8));
    CHECK(cfg.pipeline.subsample_meters == 40);
    CHECK(cfg.pipeline.iqr_multiplier == doctest::Approx(2.5));
    CHECK(cfg.pipeline.max_missing_frac == doctest::Approx(0.1));
    CHECK(cfg.diffusion.epochs == 7);
    CHECK(cfg.diffusion.denoiser.hidden_features == 24);
    CHECK(cfg.diffusion.denoiser.total_steps == 100);
    CHECK(cfg.diffusion.beta_start == doctest::Approx(2e-4));
    CHECK(cfg.cvae.learning_rate == doctest::Approx(0.002));
    CHECK(cfg.cvae.cvae.latent_dim == 32);
    CHECK(cfg.cvae.cvae.encoder_filters == std::array<int, 3>{8, 16, 24});
    CHECK(cfg.cvae.cvae.kl_weight == doctest::Approx(0.5));
    CHECK(cfg.cgan.cgan.noise_dim == 12);
    CHECK(cfg.cgan.seed == 9001);
    CHECK(cfg.eval.repetitions == 4);
    CHECK(cfg.eval.base_seed == 1000);
    CHECK(cfg.eval.extractor_seed == 55);
    CHECK(cfg.eval.max_meters == 10);

    SUBCASE("absolute paths pass through untouched") {
        write_file(tmp / "cfg/abs.ini",
                   "[experiment]\nmeters = /abs/m.csv\nmetadata = /abs/md.csv\noutput = /abs/out\n");
        ExperimentConfig c2 = load_experiment_config((tmp / "cfg/abs.ini").string());
        CHECK(c2.meters_csv == "/abs/m.csv");
        CHECK(c2.output_dir == "/abs/out");
    }
}

TEST_CASE("config file errors name the offending line") {
    TmpDir tmp("inierr");
    auto load_text = [&](const std::string& body) {
        write_file(tmp / "bad.ini", body);
        return load_experiment_config((tmp / "bad.ini").string());
    };
    auto check_throw = [&](const std::string& body, ErrorKind kind, const std::string& needle) {
        try {
            load_text(body);
            FAIL_CHECK("expected a throw for: " << body);
        } catch (const Error& e) {
            CHECK(e.kind() == kind);
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };

    check_throw("[experiment]\nbogus_key = 1\n", ErrorKind::config, "line 2");
    check_throw("[experiment]\nbogus_key = 1\n", ErrorKind::config, "bogus_key");
    check_throw("[mystery]\nx = 1\n", ErrorKind::config, "[mystery]");
    check_throw("[diffusion]\nepochs = soon\n", ErrorKind::parse, "expected integer");
    check_throw("meters = a.csv\n", ErrorKind::config, "outside any section");
    check_throw("[experiment]\nno equals here\n", ErrorKind::parse, "key = value");
    check_throw("[cvae]\nencoder_filters = 1,2\n", ErrorKind::parse, "three");
    check_throw("[experiment]\nschema = tall\n", ErrorKind::config, "schema");
    CHECK_THROWS_AS(load_text("[experiment]\nmodels = diffusion,vae\n"), Error);
    CHECK_THROWS_AS(load_experiment_config((tmp / "missing.ini").string()), Error);
}

TEST_CASE("synthetic corpus loads cleanly and is reproducible") {
    TmpDir tmp("corpus");
    write_synthetic_corpus((tmp / "a").string(), 20, 7);

    auto series = load_meter_csv((tmp / "a/meters.csv").string(), CsvSchema::wide);
    REQUIRE(series.size() == 20);
    for (const MeterSeries& s : series) {
        CHECK(s.readings.size() == 8784);
        CHECK(s.missing_count() == 0);
        double lo = 1e300, hi = -1e300;
        for (double v : s.readings) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        CHECK(lo >= 0.0);
        CHECK(hi > lo);
    }

    auto metadata = load_metadata_csv((tmp / "a/metadata.csv").string());
    CHECK(metadata.size() == 20);

    PipelineOptions opt;
    opt.split_seed = 5;
    PipelineStats stats;
    ProcessedDataset data = build_processed_dataset(series, metadata, opt, &stats);
    CHECK(data.count() == 20);
    CHECK(stats.meters_retained == 20);

    write_synthetic_corpus((tmp / "b").string(), 20, 7);
    CHECK(read_file(tmp / "a/meters.csv") == read_file(tmp / "b/meters.csv"));
    CHECK(read_file(tmp / "a/metadata.csv") == read_file(tmp / "b/metadata.csv"));

    write_synthetic_corpus((tmp / "c").string(), 20, 8);
    CHECK(read_file(tmp / "a/meters.csv") != read_file(tmp / "c/meters.csv"));
}

TEST_CASE("experiment run writes the full artifact tree and reruns byte-identically") {
    TmpDir tmp("run");
    write_synthetic_corpus((tmp / "corpus").string(), 20, 7);
    ExperimentConfig cfg = tiny_config(tmp / "corpus", tmp / "run");

    ExperimentResult res = run_experiment(cfg);
    CHECK(res.dataset_meters == 20);
    CHECK(res.config_hash == hash_hex(cfg.config_hash()));
    REQUIRE(res.reports.size() == 3);
    CHECK(res.reports[0].model == "diffusion");
    CHECK(res.reports[1].model == "cvae");
    CHECK(res.reports[2].model == "cgan");
    CHECK(res.reports[0].repetitions == 2);
    REQUIRE(res.comparison.rows.size() == 4);
    for (const ComparisonRow& row : res.comparison.rows) CHECK(row.cells.size() == 3);

    fs::path out = tmp / "run";
    for (const char* rel :
         {"config.ini", "manifest.json", "curves/diffusion.csv", "curves/cvae.csv",
          "curves/cgan.csv", "eval/diffusion.json", "eval/diffusion.csv", "eval/cvae.json",
          "eval/cvae.csv", "eval/cgan.json", "eval/cgan.csv", "eval/comparison.json",
          "eval/comparison.csv"})
        CHECK_MESSAGE(fs::exists(out / rel), rel);
    for (const char* kind : {"diffusion", "cvae", "cgan"})
        CHECK(fs::is_directory(out / "checkpoints" / kind));
    CHECK(fs::is_directory(out / "dataset"));

    CHECK(read_file(out / "config.ini") == cfg.canonical_text());

    json manifest = json::parse(read_file(out / "manifest.json"));
    CHECK(manifest.at("container") == "experiment_manifest");
    CHECK(manifest.at("config_hash") == res.config_hash);
    CHECK(manifest.at("seeds").at("split") == 99);
    CHECK(manifest.at("seeds").at("diffusion") == 11);
    CHECK(manifest.at("seeds").at("extractor") == 9);
    CHECK(manifest.at("dataset").at("meters") == 20);
    int train = manifest.at("dataset").at("train").get<int>();
    int test = manifest.at("dataset").at("test").get<int>();
    CHECK(train + test == 20);
    CHECK(test == 5);
    CHECK(manifest.at("evaluation").at("evaluated_meters") == 5);
    CHECK(manifest.at("models") == json::array({"diffusion", "cvae", "cgan"}));

    auto digest = tree_digest(out);
    std::vector<std::string> walked;
    for (const auto& [rel, h] : digest)
        if (rel != "manifest.json") walked.push_back(rel);
    std::vector<std::string> listed = manifest.at("artifacts").get<std::vector<std::string>>();
    CHECK(listed == walked);

    auto curve = read_lines(read_file(out / "curves/cvae.csv"));
    REQUIRE(curve.size() == 4);
    CHECK(curve[0] == "# config_hash=" + res.config_hash);
    CHECK(curve[1] == "epoch,train_loss,test_loss,kl,recon");
    CHECK(curve[2].substr(0, 2) == "1,");
    CHECK(curve[3].substr(0, 2) == "2,");
    auto dcurve = read_lines(read_file(out / "curves/diffusion.csv"));
    REQUIRE(dcurve.size() == 4);
    CHECK(dcurve[1] == "epoch,train_loss,test_loss");

    json ev = json::parse(read_file(out / "eval/diffusion.json"));
    CHECK(ev.at("config_hash") == res.config_hash);
    CHECK(ev.at("model") == "diffusion");
    CHECK(ev.at("repetitions") == 2);
    CHECK(!ev.at("entries").empty());

    auto cmp_lines = read_lines(read_file(out / "eval/comparison.csv"));
    REQUIRE(cmp_lines.size() == 14);
    CHECK(cmp_lines[0] == "# config_hash=" + res.config_hash);
    CHECK(cmp_lines[1] == "metric,rank,model,mean,best");
    CHECK(cmp_lines[2].substr(0, 6) == "fid,1,");

    run_experiment(cfg);
    CHECK(tree_digest(out) == digest);
}

TEST_CASE("model comparison ranks metrics in the right direction") {
    double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<EvalReport> reports{fake_report("alpha", 2.0, 0.5, nan, 0.9),
                                    fake_report("beta", 1.0, 0.5, 0.2, 0.95),
                                    fake_report("gamma", 3.0, 0.5, 0.4, -0.1)};

    Comparison cmp = compare_models(reports);
    REQUIRE(cmp.rows.size() == 4);

    const ComparisonRow& fid = cmp.rows[0];
    CHECK(fid.metric == "fid");
    CHECK(fid.cells[0].model == "beta");
    CHECK(fid.cells[1].model == "alpha");
    CHECK(fid.cells[2].model == "gamma");
    CHECK(fid.cells[0].best);
    CHECK(!fid.cells[1].best);

    const ComparisonRow& kl = cmp.rows[1];
    CHECK(kl.metric == "kl");
    CHECK(kl.cells[0].model == "alpha");
    CHECK(kl.cells[1].model == "beta");
    CHECK(kl.cells[2].model == "gamma");
    for (const ComparisonCell& c : kl.cells) CHECK(c.best);

    const ComparisonRow& rmse = cmp.rows[2];
    CHECK(rmse.metric == "rmse");
    CHECK(rmse.cells[0].model == "beta");
    CHECK(rmse.cells[2].model == "alpha");
    CHECK(std::isnan(rmse.cells[2].mean));
    CHECK(!rmse.cells[2].best);

    const ComparisonRow& r2 = cmp.rows[3];
    CHECK(r2.metric == "r2");
    CHECK(r2.cells[0].model == "beta");
    CHECK(r2.cells[1].model == "alpha");
    CHECK(r2.cells[2].model == "gamma");
    CHECK(r2.cells[0].best);

    auto lines = read_lines(cmp.to_csv());
    REQUIRE(lines.size() == 13);
    CHECK(lines[0] == "metric,rank,model,mean,best");
    CHECK(lines[1] == "fid,1,beta,1,1");
    CHECK(lines[3] == "fid,3,gamma,3,0");

    json j = json::parse(cmp.to_json());
    CHECK(j.at("container") == "model_comparison");
    CHECK(j.at("rows").size() == 4);

    SUBCASE("single report ranks alone") {
        Comparison one = compare_models({reports[1]});
        for (const ComparisonRow& row : one.rows) {
            REQUIRE(row.cells.size() == 1);
            CHECK(row.cells[0].best);
        }
    }
    SUBCASE("mismatched extractors are rejected") {
        auto bad = reports;
        bad[1].extractor_seed = 43;
        CHECK_THROWS_AS(compare_models(bad), Error);
    }
    SUBCASE("mismatched test splits are rejected") {
        auto bad = reports;
        bad[2].test_meters = 7;
        CHECK_THROWS_AS(compare_models(bad), Error);
    }
    SUBCASE("missing overall slice is rejected") {
        auto bad = reports;
        bad[0].entries[0].slice = "meter:gas";
        CHECK_THROWS_AS(compare_models(bad), Error);
    }
    SUBCASE("no reports is rejected") {
        CHECK_THROWS_AS(compare_models({}), Error);
    }
}

TEST_CASE("stage failures keep earlier artifacts and name the stage") {
    TmpDir tmp("fail");
    write_synthetic_corpus((tmp / "corpus").string(), 10, 3);

    SUBCASE("metadata that matches no meter fails preprocess") {
        std::string md = read_file(tmp / "corpus/metadata.csv");
        size_t pos = 0;
        while ((pos = md.find("m0", pos)) != std::string::npos) md.replace(pos, 2, "x0");
        write_file(tmp / "corpus/metadata.csv", md);

        ExperimentConfig cfg = tiny_config(tmp / "corpus", tmp / "run");
        try {
            run_experiment(cfg);
            FAIL_CHECK("expected preprocess failure");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("stage preprocess") != std::string::npos);
        }
        CHECK(fs::exists(tmp / "run/config.ini"));
        CHECK(!fs::exists(tmp / "run/checkpoints"));
        CHECK(!fs::exists(tmp / "run/curves"));
    }

    SUBCASE("unreadable meter file fails ingest") {
        write_file(tmp / "corpus/meters.csv", "not,a,meter\nfile,at,all\n");
        ExperimentConfig cfg = tiny_config(tmp / "corpus", tmp / "run");
        try {
            run_experiment(cfg);
            FAIL_CHECK("expected ingest failure");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("stage ingest") != std::string::npos);
        }
        CHECK(fs::exists(tmp / "run/config.ini"));
        CHECK(!fs::exists(tmp / "run/dataset"));
    }

    SUBCASE("validation failures happen before the output dir is touched") {
        ExperimentConfig cfg = tiny_config(tmp / "corpus", tmp / "run2");
        cfg.meters_csv = (tmp / "corpus/nope.csv").string();
        CHECK_THROWS_AS(run_experiment(cfg), Error);
        CHECK(!fs::exists(tmp / "run2"));
    }
}
