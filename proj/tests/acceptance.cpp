// Acceptance run: one PASS/FAIL/SKIP/INFO line per criterion, exit 1 if any
// criterion fails.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "odsurv/analysis/explain.hpp"
#include "odsurv/app/config.hpp"
#include "odsurv/app/run.hpp"
#include "odsurv/common/rng.hpp"
#include "odsurv/corpus/split.hpp"
#include "odsurv/finetune/finetune.hpp"
#include "odsurv/llm/harness.hpp"
#include "odsurv/metrics/bootstrap.hpp"
#include "odsurv/metrics/metrics.hpp"
#include "odsurv/metrics/report.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace odsurv;
namespace fs = std::filesystem;
using Json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
    std::string status;  // PASS | FAIL | SKIP | INFO
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Verdict pass_if(bool ok, std::string detail) { return {ok ? "PASS" : "FAIL", std::move(detail)}; }

// ---- 1: metric oracle equivalence ----------------------------------------

Verdict metric_oracles() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240601);
    double worst = 0.0;
    std::size_t compared = 0;
    auto note = [&](double a, double b) {
        worst = std::max(worst, std::abs(a - b));
        ++compared;
    };
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng() % 49, L = 10;
        oracle::Rows pr(n, std::vector<int>(L)), go(n, std::vector<int>(L));
        LabelMatrix p(n, L), g(n, L);
        ScoreMatrix s(n, L);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < L; ++c) {
                go[r][c] = rng() % 3 == 0;
                pr[r][c] = rng() % 3 == 0;
                g(r, c) = static_cast<std::uint8_t>(go[r][c]);
                p(r, c) = static_cast<std::uint8_t>(pr[r][c]);
                s(r, c) = static_cast<double>(rng() % 11) / 10.0;  // ties on purpose
            }
        note(metrics::macro_f1(p, g), oracle::macro_f1(pr, go));
        note(metrics::hamming_loss(p, g), oracle::hamming(pr, go));
        note(metrics::subset_accuracy(p, g), oracle::subset_accuracy(pr, go));
        for (std::size_t c = 0; c < L; ++c) {
            const auto sc = s.column(c);
            std::vector<int> gc(n);
            int pos = 0;
            for (std::size_t r = 0; r < n; ++r) pos += gc[r] = go[r][c];
            const auto a = metrics::auroc(sc, g.column(c));
            const auto ap = metrics::average_precision(sc, g.column(c));
            if (pos > 0 && pos < static_cast<int>(n)) {
                if (!a) return {"FAIL", "AUROC undefined on a two-class column"};
                note(*a, oracle::auroc_pairs(sc, gc));
            } else if (a) {
                return {"FAIL", "AUROC defined on a single-class column"};
            }
            if (pos > 0) {
                if (!ap) return {"FAIL", "AP undefined with positives present"};
                note(*ap, oracle::ap_stepwise(sc, gc));
            }
        }
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    return pass_if(worst <= 1e-12 && secs < 60,
                   std::to_string(compared) + " comparisons over 200 pairs, max |diff| " + fmt("%.3g", worst) +
                       ", " + fmt("%.2f", secs) + " s");
}

// ---- 2: bootstrap ---------------------------------------------------------

Verdict bootstrap() {
    const auto t0 = Clock::now();
    // Determinism on a real metric.
    std::mt19937_64 rng(5);
    LabelMatrix p(80, 10), g(80, 10);
    for (std::size_t r = 0; r < 80; ++r)
        for (std::size_t c = 0; c < 10; ++c) {
            g(r, c) = rng() % 3 == 0;
            p(r, c) = rng() % 4 == 0 ? !g(r, c) : g(r, c);
        }
    metrics::BootstrapOptions o;
    o.seed = 99;
    const metrics::MatrixMetric f1 = [](const LabelMatrix& a, const LabelMatrix& b) -> std::optional<double> {
        return metrics::macro_f1(a, b);
    };
    const auto first = metrics::bootstrap_ci(f1, p, g, o);
    const auto second = metrics::bootstrap_ci(f1, p, g, o);
    const bool identical = first == second;

    // Coverage: accuracy of n Bernoulli(q) outcomes has true value q.
    const double q = 0.8;
    const std::size_t n = 200, trials = 200;
    std::size_t covered = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        Engine eng(stream_seed(77, t));
        std::vector<double> correct(n);
        for (auto& v : correct) v = uniform_unit(eng) < q ? 1.0 : 0.0;
        const metrics::CaseMetric acc = [&](std::span<const std::size_t> idx) -> std::optional<double> {
            double s = 0;
            for (auto i : idx) s += correct[i];
            return s / static_cast<double>(idx.size());
        };
        metrics::BootstrapOptions bo;
        bo.seed = stream_seed(78, t);
        const auto ci = metrics::bootstrap_ci(acc, n, bo);
        covered += ci.low <= q && q <= ci.high;
    }
    const double rate = static_cast<double>(covered) / static_cast<double>(trials);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    return pass_if(identical && rate >= 0.88 && secs < 120,
                   std::string(identical ? "bitwise-identical repeat" : "repeat DIFFERS") + ", coverage " +
                       std::to_string(covered) + "/" + std::to_string(trials) + " = " + fmt("%.3f", rate) + ", " +
                       fmt("%.1f", secs) + " s");
}

// ---- 3: classic pipeline end to end --------------------------------------

Verdict classic_pipeline(const fs::path& work) {
    const auto t0 = Clock::now();
    const fs::path data = work / "classic";
    synth::write_files(synth::make_corpus(2000, 31), (data / "data").string(), 32, 9);
    // Default grids, trimmed to fit a single CPU core.
    const Json config = Json::parse(R"({
        "name": "acceptance-classic", "seed": 13, "output_dir": "runs",
        "data": {"records": "data/records.csv", "gold": "data/gold.csv"},
        "split": {"strategy": "random_60_20_20"},
        "bootstrap": {"n": 200},
        "models": [
          {"name": "per_drug", "family": "classic_single",
           "embedder": {"backend": "static", "table_path": "data/vectors.txt"},
           "grids": [
             {"architecture": "logistic_regression", "grid": {"C": [0.1, 1.0, 10.0]}},
             {"architecture": "support_vector", "grid": {"kernel": ["linear"], "C": [1.0]}},
             {"architecture": "random_forest", "grid": {"n_estimators": [50], "max_depth": [0], "max_features": ["sqrt"]}},
             {"architecture": "gradient_boosted_trees", "grid": {"n_estimators": [50], "max_depth": [3], "learning_rate": [0.1]}}
           ],
           "search": {"folds": 5}},
          {"name": "multi_forest", "family": "classic_multi",
           "embedder": {"backend": "static", "table_path": "data/vectors.txt"},
           "grid": {"architecture": "random_forest", "grid": {"n_estimators": [100], "max_depth": [0, 20], "max_features": ["sqrt"]}}}
        ]
    })");
    {
        std::ofstream(data / "config.json") << config.dump(2) << "\n";
    }
    const auto manifest = app::run_experiment(app::RunConfig::load((data / "config.json").string()));
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (const auto* f = manifest.failed_stage()) return {"FAIL", "stage " + f->name + " failed: " + f->error};
    auto report = [&](const std::string& model) {
        std::ifstream in(fs::path(manifest.run_dir) / "reports" / (model + ".internal_test.json"));
        return metrics::report_from_json(Json::parse(in));
    };
    const double f1 = report("per_drug").metric("macro_f1").point;
    const double hl = report("multi_forest").metric("hamming_loss").point;
    return pass_if(f1 >= 0.95 && hl <= 0.02 && secs < 600,
                   "per-drug bundle macro F1 " + fmt("%.4f", f1) + " (>= 0.95), multi-label forest Hamming loss " +
                       fmt("%.4f", hl) + " (<= 0.02), " + fmt("%.0f", secs) + " s");
}

// ---- 4, 5, 8: encoder, attributions, throughput ---------------------------

struct EncoderFixture {
    std::vector<corpus::LabeledCase> train, validation, test;
    corpus::LabelSchema schema;
    finetune::FineTuneResult result;
    double seconds = 0;
};

const EncoderFixture& encoder_fixture() {
    static const EncoderFixture fx = [] {
        EncoderFixture f;
        const auto t0 = Clock::now();
        const auto corpus = synth::make_corpus(500, 41);
        f.schema = corpus.schema;
        const auto cases = synth::labeled(corpus);
        const auto split = corpus::make_splits(cases, corpus::SplitStrategy::Random60_20_20, 3, std::nullopt, f.schema);
        f.train = corpus::select_cases(cases, split.train);
        f.validation = corpus::select_cases(cases, split.validation);
        f.test = corpus::select_cases(cases, split.test);
        finetune::FineTuneConfig c;
        c.encoder_id = "scratch";
        c.learning_rate = 1e-2;
        c.batch_size = 8;
        c.epochs = 5;
        c.seed = 17;
        c.scratch.hidden_size = 32;
        c.scratch.num_hidden_layers = 2;
        c.scratch.num_attention_heads = 2;
        c.scratch.intermediate_size = 64;
        c.scratch.max_position_embeddings = 64;
        f.result = finetune::finetune_encoder(f.train, f.validation, f.schema, c);
        f.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        return f;
    }();
    return fx;
}

std::vector<std::string> texts_of(const std::vector<corpus::LabeledCase>& cases) {
    std::vector<std::string> t;
    for (const auto& c : cases) t.push_back(c.normalized_text);
    return t;
}

// Random word sequences over the model vocabulary, special tokens excluded.
std::vector<std::string> random_texts(const finetune::EncoderClassifier& m, std::size_t count, std::uint64_t seed) {
    const auto& tok = m.bundle.tokenizer;
    std::vector<std::string> words;
    for (std::size_t i = 0; i < tok.vocab_size(); ++i) {
        const auto& w = tok.token(static_cast<int>(i));
        if (!w.empty() && w.front() != '[' && w.rfind("##", 0) != 0) words.push_back(w);
    }
    Engine eng(seed);
    std::vector<std::string> out(count);
    for (auto& t : out) {
        const std::size_t len = 1 + uniform_below(eng, 30);
        for (std::size_t k = 0; k < len; ++k) t += (k ? " " : "") + words[uniform_below(eng, words.size())];
    }
    return out;
}

double last_throughput = 0.0, last_ms_per_1000 = 0.0;
std::size_t last_throughput_n = 0;

Verdict encoder_smoke() {
    const auto& fx = encoder_fixture();
    const auto& model = fx.result.model;
    const auto val_probs = finetune::predict_probabilities(model, texts_of(fx.validation), 32);
    const auto val_pred = finetune::threshold_labels(val_probs, model.threshold);
    const double acc = metrics::subset_accuracy(val_pred, corpus::label_matrix(fx.validation, fx.schema.size()));
    const int layers = model.bundle.model.config().num_hidden_layers;

    finetune::InferenceStats stats;
    const auto probs = finetune::predict_probabilities(model, random_texts(model, 1000, 8), 32, &stats);
    bool in_range = true, monotone = true;
    for (double v : probs.data()) in_range &= std::isfinite(v) && v >= 0.0 && v <= 1.0;
    const std::vector<double> ts{0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95};
    LabelMatrix prev = finetune::threshold_labels(probs, ts.front());
    for (std::size_t i = 1; i < ts.size(); ++i) {
        const auto cur = finetune::threshold_labels(probs, ts[i]);
        for (std::size_t k = 0; k < cur.data().size(); ++k) monotone &= cur.data()[k] <= prev.data()[k];
        prev = cur;
    }
    last_throughput = stats.texts_per_second();
    last_throughput_n = stats.n_texts;
    last_ms_per_1000 = stats.n_texts ? stats.total_seconds / static_cast<double>(stats.n_texts) * 1000.0 : 0.0;

    return pass_if(acc >= 0.9 && layers <= 2 && fx.result.epochs.size() <= 5 && in_range && monotone && fx.seconds < 600,
                   std::to_string(layers) + "-layer encoder, " + std::to_string(fx.result.epochs.size()) +
                       " epochs, validation subset accuracy " + fmt("%.3f", acc) + " (>= 0.9), probability range " +
                       (in_range ? "ok" : "VIOLATED") + ", threshold monotonicity " + (monotone ? "ok" : "VIOLATED") +
                       " on 1000 random inputs, training " + fmt("%.1f", fx.seconds) + " s");
}

Verdict explainability() {
    const auto& fx = encoder_fixture();
    const auto& model = fx.result.model;
    Engine eng(123);
    std::vector<std::size_t> idx(fx.test.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    portable_shuffle(idx, eng);
    idx.resize(std::min<std::size_t>(20, idx.size()));

    double worst_gap = 0.0, worst_drift = 0.0;
    bool ok = true;
    for (auto i : idx) {
        const auto& c = fx.test[i];
        std::size_t cls = 0;
        for (std::size_t k = 0; k < c.gold.size(); ++k)
            if (c.gold[k]) {
                cls = k;
                break;
            }
        const auto& name = fx.schema.classes[cls];
        const auto a = analysis::attribute_tokens(model, c.normalized_text, name, 50);
        const auto b = analysis::attribute_tokens(model, c.normalized_text, name, 100);
        const double delta = a.logit - a.baseline_logit;
        const double tol = 0.05 * std::abs(delta) + 1e-3;
        const double gap = std::abs(a.score_sum() - delta);
        const double drift = std::abs(b.score_sum() - a.score_sum());
        ok &= gap <= tol && drift < tol;
        worst_gap = std::max(worst_gap, gap / tol);
        worst_drift = std::max(worst_drift, drift / tol);
    }
    return pass_if(ok && idx.size() == 20, std::to_string(idx.size()) +
                                               " cases, worst completeness gap " + fmt("%.3f", worst_gap) +
                                               " of tolerance, worst 50->100 step drift " + fmt("%.3f", worst_drift) +
                                               " of tolerance");
}

// ---- 6: LLM harness -------------------------------------------------------

Verdict llm_harness() {
    const auto schema = corpus::default_schema();
    std::size_t round_trips = 0;
    for (std::uint32_t bits = 0; bits < 1024; ++bits) {
        LabelVector v(10);
        for (std::size_t c = 0; c < 10; ++c) v[c] = (bits >> c) & 1u;
        const auto parsed = llm::parse_answer(llm::render_answer(v, schema), schema);
        round_trips += parsed.labels == v && parsed.status == llm::ParseStatus::Ok;
    }

    const auto corpus = synth::make_corpus(300, 51);
    const auto cases = synth::labeled(corpus);
    const auto split = corpus::make_splits(cases, corpus::SplitStrategy::Random60_20_20, 6, std::nullopt, schema);
    const auto train = corpus::select_cases(cases, split.train);
    const auto test = corpus::select_cases(cases, split.test);
    const auto pool = llm::ExemplarPool::from_cases(train);
    llm::PromptSpec spec;
    spec.k = 5;
    spec.exemplar_seed = 21;
    bool deterministic = true;
    for (const auto& c : test) {
        deterministic &= llm::build_prompt(c.normalized_text, c.id(), spec, pool, schema) ==
                         llm::build_prompt(c.normalized_text, c.id(), spec, llm::ExemplarPool::from_cases(train), schema);
    }
    const auto shots_a = llm::select_exemplars(pool, spec, schema);
    const auto shots_b = llm::select_exemplars(pool, spec, schema);
    for (std::size_t i = 0; i < shots_a.size(); ++i) deterministic &= shots_a[i]->case_id == shots_b[i]->case_id;

    auto client = llm::make_echo_client(test, schema);
    llm::GenerationOptions opts;
    opts.bootstrap.n = 100;
    const auto ev = llm::evaluate_generations(*client, test, spec, pool, schema, opts);
    const double f1 = ev.report.metric("macro_f1").point;
    return pass_if(round_trips == 1024 && deterministic && f1 == 1.0 && ev.stats.ok_rate() == 1.0,
                   "render/parse identity " + std::to_string(round_trips) + "/1024, prompts " +
                       (deterministic ? "deterministic" : "NOT deterministic") + ", echo client macro F1 " +
                       fmt("%.4f", f1) + ", parse-ok rate " + fmt("%.3f", ev.stats.ok_rate()) + " on " +
                       std::to_string(test.size()) + " cases");
}

}  // namespace

int main() {
    const fs::path work = fs::temp_directory_path() / ("odsurv_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(work);
    fs::create_directories(work);

    struct Item {
        int id;
        const char* title;
        std::function<Verdict()> run;
    };
    const std::vector<Item> items{
        {1, "metric oracle equivalence", metric_oracles},
        {2, "bootstrap determinism and coverage", bootstrap},
        {3, "classic pipeline end to end", [&] { return classic_pipeline(work); }},
        {4, "encoder fine-tune smoke", encoder_smoke},
        {5, "integrated-gradients completeness", explainability},
        {6, "LLM harness", llm_harness},
        {7, "reference-number reproduction",
         [] {
             return Verdict{"SKIP", "needs the public death-certificate datasets, which are not available offline"};
         }},
        {8, "batch inference throughput",
         [] {
             return Verdict{"INFO", fmt("%.1f", last_throughput) + " cases/s on " + std::to_string(last_throughput_n) +
                                        " inputs (" + fmt("%.2f", last_ms_per_1000) +
                                        " s per 1000 cases) with the tiny CPU encoder; no bound on CPU"};
         }},
    };

    int failures = 0;
    for (const auto& it : items) {
        Verdict v;
        try {
            v = it.run();
        } catch (const std::exception& e) {
            v = {"FAIL", std::string("exception: ") + e.what()};
        }
        failures += v.status == "FAIL";
        std::printf("[%s] criterion %d, %s: %s\n", v.status.c_str(), it.id, it.title, v.detail.c_str());
        std::fflush(stdout);
    }
    fs::remove_all(work);
    std::printf("%s: %d criterion(s) failed\n", failures ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED", failures);
    return failures ? 1 : 0;
}
