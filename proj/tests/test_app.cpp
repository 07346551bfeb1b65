#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "odsurv/app/cli.hpp"
#include "odsurv/app/config.hpp"
#include "odsurv/app/run.hpp"
#include "odsurv/common/csv.hpp"
#include "odsurv/common/error.hpp"
#include "odsurv/metrics/report.hpp"
#include "support/synthetic.hpp"

using namespace odsurv;
using namespace odsurv::app;
namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << s;
}

// Synthetic internal and external datasets plus a config running one model
// of each family on them.
struct Workspace {
    fs::path root;
    Workspace() {
        root = fs::temp_directory_path() / ("odsurv_app_" + std::to_string(::getpid()));
        fs::remove_all(root);
        synth::write_files(synth::make_corpus(300, 11), (root / "internal").string(), 16, 5);
        synth::write_files(synth::make_corpus(120, 12, "external"), (root / "external").string(), 16, 5);
    }
    ~Workspace() { fs::remove_all(root); }

    static Json encoder_model() {
        return Json::parse(R"({
            "name": "enc", "family": "encoder",
            "finetune": {"encoder_id": "scratch", "learning_rate": 0.01, "batch_size": 8, "epochs": 3,
                         "scratch": {"hidden_size": 32, "num_hidden_layers": 2, "num_attention_heads": 2,
                                     "intermediate_size": 64, "max_position_embeddings": 64}}
        })");
    }

    Json base_config() const {
        Json j = Json::parse(R"({
            "name": "demo", "seed": 7, "output_dir": "runs",
            "data": {"records": "internal/records.csv", "gold": "internal/gold.csv"},
            "split": {"strategy": "random_60_20_20"},
            "bootstrap": {"n": 50},
            "models": [
                {"name": "lr", "family": "classic_single",
                 "embedder": {"backend": "static", "table_path": "internal/vectors.txt"},
                 "grids": [{"architecture": "logistic_regression", "grid": {"C": [1.0]}}],
                 "search": {"folds": 3}},
                {"name": "chat", "family": "llm", "client": {"kind": "mock_echo"}, "prompt": {"k": 2}}
            ],
            "explain": {"model": "enc", "class": "heroin", "n_cases": 2, "steps": 8}
        })");
        j["models"].push_back(encoder_model());
        return j;
    }

    fs::path write_config(const Json& j, const std::string& name = "config.json") const {
        const auto p = root / name;
        spit(p, j.dump(2) + "\n");
        return p;
    }
};

Workspace& ws() {
    static Workspace w;
    return w;
}

// Runs the base config once and shares the result.
const RunManifest& first_run() {
    static const RunManifest m = [] {
        const auto cfg = RunConfig::load(ws().write_config(ws().base_config()).string());
        return run_experiment(cfg);
    }();
    return m;
}

int run_cli(const std::vector<std::string>& args, std::string* out = nullptr, std::string* err = nullptr) {
    std::ostringstream o, e;
    const int rc = dispatch(args, o, e);
    if (out) *out = o.str();
    if (err) *err = e.str();
    return rc;
}

}  // namespace

TEST_CASE("config parsing: defaults, relative paths, unknown keys") {
    auto j = ws().base_config();
    const auto cfg = RunConfig::parse(j.dump(), ws().root.string());
    CHECK(cfg.internal->records == (ws().root / "internal/records.csv").string());
    CHECK(cfg.output_dir == (ws().root / "runs").string());
    CHECK(cfg.models.size() == 3);
    CHECK(cfg.model("enc").finetune.seed == 7);
    CHECK(cfg.model("chat").prompt.exemplar_seed == 7);
    CHECK(cfg.bootstrap.seed == 7);
    CHECK(cfg.model("lr").search.folds == 3);

    auto bad = j;
    bad["modles"] = Json::array();
    CHECK_THROWS_AS(RunConfig::parse(bad.dump(), ""), ConfigError);
    bad = j;
    bad["models"][0]["family"] = "svm";
    CHECK_THROWS_AS(RunConfig::parse(bad.dump(), ""), ConfigError);
    bad = j;
    bad["models"][1]["name"] = "lr";
    CHECK_THROWS_AS(RunConfig::parse(bad.dump(), ""), ConfigError);
    bad = j;
    bad["split"]["strategy"] = "stratified_80_20";
    CHECK_THROWS_AS(RunConfig::parse(bad.dump(), ""), ConfigError);  // needs a target class
    CHECK_THROWS_AS(RunConfig::parse("{not json", ""), ConfigError);
}

TEST_CASE("run key: seed changes it, path overrides from the environment do not") {
    const auto path = ws().write_config(ws().base_config());
    auto cfg = RunConfig::load(path.string());
    const auto key = cfg.run_key();
    ::setenv("ODSURV_OUTPUT_DIR", (ws().root / "elsewhere").c_str(), 1);
    const auto overridden = RunConfig::load(path.string());
    ::unsetenv("ODSURV_OUTPUT_DIR");
    CHECK(overridden.output_dir == (ws().root / "elsewhere").string());
    CHECK(overridden.env_overrides.count("ODSURV_OUTPUT_DIR"));
    CHECK(overridden.run_key() == key);
    cfg.set_seed(8);
    CHECK(cfg.seed == 8);
    CHECK(cfg.model("enc").finetune.seed == 8);
    CHECK(cfg.run_key() != key);
}

TEST_CASE("all families are evaluated on one shared test partition") {
    const auto& m = first_run();
    REQUIRE(m.status == "completed");
    const fs::path dir(m.run_dir);
    const auto split = Json::parse(slurp(dir / "split.json"));
    const std::string fp = split.at("test_fingerprint").get<std::string>();

    REQUIRE(m.reports.size() == 3);
    for (const auto& r : m.reports) {
        CHECK(r.dataset == "internal_test");
        CHECK(r.split_fingerprint == fp);
        const auto rep = metrics::report_from_json(Json::parse(slurp(dir / r.path)));
        CHECK(rep.split_fingerprint == fp);
        CHECK(rep.n_cases == split.at("test").size());
    }
    // The echo client answers with the gold labels.
    const auto chat = metrics::report_from_json(Json::parse(slurp(dir / "reports/chat.internal_test.json")));
    CHECK(chat.metric("macro_f1").point == doctest::Approx(1.0));

    CHECK(slurp(dir / "config.json") == slurp(ws().root / "config.json"));
    CHECK(m.verify().empty());
    for (const char* f : {"events.jsonl", "manifest.json", "explain/enc.heroin.html", "explain/enc.heroin.json",
                          "generations/chat.internal_test.jsonl", "diagnostics/enc.internal_test.json",
                          "errors/lr.internal_test.csv"})
        CHECK_MESSAGE(fs::exists(dir / f), f);
    CHECK_FALSE(fs::exists(dir / "run.lock"));

    // Every event line is one JSON object.
    std::ifstream ev(dir / "events.jsonl");
    std::string line;
    std::size_t n = 0;
    while (std::getline(ev, line)) {
        const auto e = Json::parse(line);
        CHECK(e.contains("ts"));
        CHECK(e.contains("event"));
        ++n;
    }
    CHECK(n > 10);

    // No training id appears in the test partition.
    std::set<std::string> test(split.at("test").begin(), split.at("test").end());
    for (const char* model : {"lr", "enc"})
        for (const auto& id : Json::parse(slurp(dir / "models" / model / "training_ids.json")))
            CHECK_FALSE(test.count(id.get<std::string>()));
}

TEST_CASE("re-running a completed config reuses every stage") {
    const auto& first = first_run();
    const fs::path dir(first.run_dir);
    const auto model_file = dir / "models/enc/model.safetensors";
    const auto before = fs::last_write_time(model_file);
    const auto report_before = slurp(dir / "reports/lr.internal_test.json");

    const auto again = run_experiment(RunConfig::load((ws().root / "config.json").string()));
    CHECK(again.run_dir == first.run_dir);
    CHECK(again.status == "completed");
    CHECK(again.all_reused());
    for (const auto& s : again.stages) CHECK_MESSAGE(s.status == "reused", s.name);
    CHECK(fs::last_write_time(model_file) == before);
    CHECK(slurp(dir / "reports/lr.internal_test.json") == report_before);
    CHECK(again.reports.size() == 3);
    CHECK(Json::parse(slurp(dir / "manifest.json")).at("reused").get<bool>());
}

TEST_CASE("a fresh subrun reproduces the classic metrics bit for bit") {
    const auto& first = first_run();
    auto j = ws().base_config();
    j["models"] = Json::array({j["models"][0]});
    j.erase("explain");
    const auto cfg = RunConfig::load(ws().write_config(j, "classic.json").string());
    RunOptions o;
    const auto a = run_experiment(cfg, o);
    o.fresh = true;
    const auto b = run_experiment(cfg, o);
    REQUIRE(a.status == "completed");
    REQUIRE(b.status == "completed");
    CHECK(a.run_dir != b.run_dir);
    for (const auto& s : b.stages) CHECK(s.status == "completed");
    CHECK(slurp(fs::path(a.run_dir) / "reports/lr.internal_test.json") ==
          slurp(fs::path(b.run_dir) / "reports/lr.internal_test.json"));
    // Same data, seed and split spec as the multi-family run.
    CHECK(slurp(fs::path(a.run_dir) / "split.json") == slurp(fs::path(first.run_dir) / "split.json"));
}

TEST_CASE("external validation with a frozen encoder runs no training stage") {
    const auto& first = first_run();
    Json j = Json::parse(R"({"name": "extval", "seed": 7, "output_dir": "runs", "bootstrap": {"n": 20}})");
    j["external"] = {{"records", "external/records.csv"}, {"gold", "external/gold.csv"}};
    auto model = Workspace::encoder_model();
    model["artifact"] = (fs::path(first.run_dir) / "models/enc").string();
    model["evaluate"] = {"external"};
    j["models"] = Json::array({model});
    const auto frozen_before = slurp(fs::path(first.run_dir) / "models/enc/model.safetensors");

    const auto m = run_experiment(RunConfig::load(ws().write_config(j, "external.json").string()));
    REQUIRE(m.status == "completed");
    std::vector<std::string> names;
    for (const auto& s : m.stages) names.push_back(s.name);
    CHECK(names == std::vector<std::string>{"ingest:external", "evaluate:enc:external"});
    REQUIRE(m.reports.size() == 1);
    CHECK(m.reports[0].dataset == "external_test");
    const auto rep = metrics::report_from_json(Json::parse(slurp(fs::path(m.run_dir) / m.reports[0].path)));
    CHECK(rep.dataset_tag == "external_test");
    CHECK(rep.n_cases == 120);
    CHECK_FALSE(fs::exists(fs::path(m.run_dir) / "models"));
    CHECK(slurp(fs::path(first.run_dir) / "models/enc/model.safetensors") == frozen_before);
}

TEST_CASE("cross-stage guard: a model that saw test cases is refused") {
    const auto& first = first_run();
    const fs::path tainted = ws().root / "tainted";
    fs::remove_all(tainted);
    fs::copy(fs::path(first.run_dir) / "models/enc", tainted, fs::copy_options::recursive);
    const auto split = Json::parse(slurp(fs::path(first.run_dir) / "split.json"));
    spit(tainted / "training_ids.json", Json::array({split.at("test")[0]}).dump());

    auto j = ws().base_config();
    j["name"] = "tainted";
    auto model = Workspace::encoder_model();
    model["artifact"] = tainted.string();
    j["models"] = Json::array({model});
    j.erase("explain");
    const auto path = ws().write_config(j, "tainted.json");
    const auto m = run_experiment(RunConfig::load(path.string()));
    CHECK(m.status == "failed");
    REQUIRE(m.failed_stage());
    CHECK(m.failed_stage()->name == "evaluate:enc:internal");
    CHECK(m.failed_stage()->error.find("seen in training") != std::string::npos);
    CHECK(run_cli({"evaluate", "--config", path.string()}) == kExitStage);
}

TEST_CASE("stage failures are recorded and mapped to exit codes") {
    SUBCASE("data error: gold label missing") {
        auto gold = slurp(ws().root / "internal/gold.csv");
        gold.erase(gold.rfind('\n', gold.size() - 2) + 1);  // drop the last row
        spit(ws().root / "broken/gold.csv", gold);
        auto j = ws().base_config();
        j["name"] = "broken";
        j["data"]["gold"] = "broken/gold.csv";
        const auto path = ws().write_config(j, "broken.json");
        std::string out, err;
        CHECK(run_cli({"ingest", "--config", path.string()}, &out, &err) == kExitData);
        CHECK(err.find("ingest:internal") != std::string::npos);
        const auto m = RunManifest::load(run_directory(RunConfig::load(path.string())));
        CHECK(m.status == "failed");
        CHECK(m.failed_stage()->error_kind == "validation");
    }
    SUBCASE("stage error: unreachable inference server") {
        auto j = ws().base_config();
        j["name"] = "offline";
        j["models"] = Json::array({Json::parse(R"({"name": "remote", "family": "llm",
            "client": {"kind": "http", "base_url": "http://127.0.0.1:1", "timeout_seconds": 1},
            "sft": {"max_examples": 10}})")});
        j.erase("explain");
        const auto path = ws().write_config(j, "offline.json");
        std::string out, err;
        CHECK(run_cli({"train", "--config", path.string()}, &out, &err) == kExitStage);
        const auto m = RunManifest::load(run_directory(RunConfig::load(path.string())));
        REQUIRE(m.failed_stage());
        CHECK(m.failed_stage()->name == "train:remote");
        CHECK(m.failed_stage()->error_kind == "transport");
        // Earlier stages stay completed.
        CHECK(m.stage("split")->status == "completed");
    }
}

TEST_CASE("cli: usage errors exit 1") {
    std::string out, err;
    CHECK(run_cli({}, &out, &err) == kExitUsage);
    CHECK(run_cli({"frobnicate"}, &out, &err) == kExitUsage);
    CHECK(err.find("unknown subcommand") != std::string::npos);
    CHECK(err.find("Usage") != std::string::npos);
    CHECK(run_cli({"predict", "--in", (ws().root / "internal/records.csv").string()}, &out, &err) == kExitUsage);
    CHECK(err.find("--out") != std::string::npos);
    CHECK(run_cli({"evaluate"}, &out, &err) == kExitUsage);
    CHECK(run_cli({"report"}, &out, &err) == kExitUsage);
    CHECK(run_cli({"--help"}, &out, &err) == kExitOk);
    CHECK(out.find("predict") != std::string::npos);
}

TEST_CASE("cli: predict writes a label-vector CSV inside the run directory") {
    const auto& first = first_run();
    const auto cfg_path = (ws().root / "config.json").string();
    const auto in = (ws().root / "internal/records.csv").string();
    std::string out, err;
    REQUIRE(run_cli({"predict", "--config", cfg_path, "--in", in, "--out", "preds.csv", "--model", "lr"}, &out, &err) ==
            kExitOk);
    const fs::path target = fs::path(first.run_dir) / "preds.csv";
    CHECK(out.find(target.filename().string()) != std::string::npos);
    const auto table = read_csv_file(target.string());
    const auto schema = corpus::default_schema();
    REQUIRE(table.header.size() == 1 + 2 * schema.size());
    CHECK(table.header[0] == "case_id");
    for (std::size_t c = 0; c < schema.size(); ++c) {
        CHECK(table.header[1 + c] == schema.classes[c]);
        CHECK(table.header[1 + schema.size() + c] == "prob_" + schema.classes[c]);
    }
    CHECK(table.rows.size() == 300);
    for (const auto& row : table.rows)
        for (std::size_t c = 0; c < schema.size(); ++c) {
            CHECK((row[1 + c] == "0" || row[1 + c] == "1"));
            const double p = std::stod(row[1 + schema.size() + c]);
            CHECK((p >= 0.0 && p <= 1.0));
            CHECK((row[1 + c] == "1") == (p >= 0.5));
        }

    // The LLM model has no probabilities; --run addresses the same directory.
    REQUIRE_MESSAGE(run_cli({"predict", "--run", first.run_dir, "--in", in, "--out", "sub/chat.csv", "--model", "chat"}, &out,
                    &err) == kExitOk, err);
    CHECK(read_csv_file((fs::path(first.run_dir) / "sub/chat.csv").string()).header.size() == 1 + schema.size());

    // Output paths may not leave the run directory.
    CHECK(run_cli({"predict", "--config", cfg_path, "--in", in, "--out", "../escape.csv"}, &out, &err) == kExitUsage);
    CHECK(run_cli({"predict", "--config", cfg_path, "--in", in, "--out", "/tmp/escape.csv"}, &out, &err) == kExitUsage);
    CHECK_FALSE(fs::exists(fs::path(first.run_dir).parent_path() / "escape.csv"));
}

TEST_CASE("cli: report reproduces the JSON metric reports") {
    const auto& first = first_run();
    std::string out, err;
    REQUIRE(run_cli({"report", "--run", first.run_dir, "--delimiter", "comma"}, &out, &err) == kExitOk);
    std::istringstream in(out);
    const auto table = read_csv(in, ',');
    REQUIRE(table.header.size() == 1 + first.reports.size());
    const std::regex cell(R"(^(-?[0-9.]+) \((-?[0-9.]+)-(-?[0-9.]+)\)$)");
    for (std::size_t r = 0; r < first.reports.size(); ++r) {
        const auto& ref = first.reports[r];
        CHECK(table.header[1 + r] == ref.model + " [" + ref.dataset + "]");
        const auto rep = metrics::report_from_json(Json::parse(slurp(fs::path(first.run_dir) / ref.path)));
        for (const auto& row : table.rows) {
            if (!rep.has(row[0])) {
                CHECK(row[1 + r].empty());
                continue;
            }
            std::smatch mt;
            REQUIRE_MESSAGE(std::regex_match(row[1 + r], mt, cell), row[1 + r]);
            const auto& ci = rep.metric(row[0]);
            CHECK(std::abs(std::stod(mt[1]) - ci.point) <= 5e-4 + 1e-12);
            CHECK(std::abs(std::stod(mt[2]) - ci.low) <= 5e-4 + 1e-12);
            CHECK(std::abs(std::stod(mt[3]) - ci.high) <= 5e-4 + 1e-12);
        }
    }
    CHECK(run_cli({"report", "--run", first.run_dir, "--out", "table.tsv"}, &out, &err) == kExitOk);
    CHECK(fs::exists(fs::path(first.run_dir) / "table.tsv"));
}

TEST_CASE("cli: explain renders attributions") {
    const auto& first = first_run();
    std::string out, err;
    REQUIRE(run_cli({"explain", "--run", first.run_dir, "--class", "heroin", "--text", "acute heroin intoxication",
                     "--steps", "16", "--format", "text"},
                    &out, &err) == kExitOk);
    CHECK(out.find("heroin") != std::string::npos);
    CHECK(out.rfind("# ", 0) == 0);
    CHECK(run_cli({"explain", "--run", first.run_dir, "--class", "nope", "--text", "x"}, &out, &err) == kExitUsage);
    CHECK(run_cli({"explain", "--run", first.run_dir, "--class", "heroin", "--text", "x", "--steps", "2"}, &out, &err) ==
          kExitUsage);
}

TEST_CASE("run lock: live owner blocks, stale lock is taken over") {
    const fs::path dir = ws().root / "lockdir";
    {
        RunLock lock(dir.string());
        CHECK(fs::exists(dir / "run.lock"));
        CHECK_THROWS_AS(RunLock(dir.string()), StageError);
    }
    CHECK_FALSE(fs::exists(dir / "run.lock"));
    spit(dir / "run.lock", "999999999\n");
    RunLock taken(dir.string());
    CHECK(std::stol(slurp(dir / "run.lock")) == ::getpid());
}

TEST_CASE("confine_path and the prediction CSV layout") {
    const auto dir = (ws().root / "confine").string();
    fs::create_directories(dir);
    CHECK(confine_path(dir, "a/b.csv") == (fs::weakly_canonical(dir) / "a/b.csv").string());
    CHECK_THROWS_AS(confine_path(dir, "../x"), ConfigError);
    CHECK_THROWS_AS(confine_path(dir, "a/../../x"), ConfigError);
    CHECK_THROWS_AS(confine_path(dir, ""), ConfigError);

    corpus::LabelSchema s;
    s.classes = {"a", "b"};
    LabelMatrix l = LabelMatrix::from_rows({{1, 0}, {0, 1}});
    ScoreMatrix p = ScoreMatrix::from_rows({{0.75, 0.25}, {0.125, 0.5}});
    const auto path = (fs::path(dir) / "p.csv").string();
    write_predictions_csv(path, {"x", "y,z"}, l, &p, s);
    CHECK(slurp(path) == "case_id,a,b,prob_a,prob_b\nx,1,0,0.75,0.25\n\"y,z\",0,1,0.125,0.5\n");
    CHECK_THROWS_AS(write_predictions_csv(path, {"x"}, l, &p, s), ShapeError);
}
