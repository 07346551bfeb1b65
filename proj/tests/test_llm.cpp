#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "odsurv/common/error.hpp"
#include "odsurv/common/hash.hpp"
#include "odsurv/common/rng.hpp"
#include "odsurv/corpus/split.hpp"
#include "odsurv/llm/harness.hpp"
#include "odsurv/metrics/metrics.hpp"
#include "support/synthetic.hpp"

// Last: <resolv.h> defines _res, which collides with Eigen internals.
#include <httplib.h>

using namespace odsurv;
using namespace odsurv::llm;
namespace fs = std::filesystem;

namespace {

const corpus::LabelSchema& schema() {
    static const auto s = corpus::default_schema();
    return s;
}

std::size_t count_of(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + needle.size())) ++n;
    return n;
}

struct Splits {
    std::vector<corpus::LabeledCase> train, validation, test;
    Splits() {
        const auto corpus = synth::make_corpus(300, 12);
        const auto cases = synth::labeled(corpus);
        const auto s = corpus::make_splits(cases, corpus::SplitStrategy::Random60_20_20, 9, std::nullopt, corpus.schema);
        train = corpus::select_cases(cases, s.train);
        validation = corpus::select_cases(cases, s.validation);
        test = corpus::select_cases(cases, s.test);
    }
};

const Splits& splits() {
    static const Splits s;
    return s;
}

LabelVector vec(std::initializer_list<int> on) {
    LabelVector v(10, 0);
    for (int i : on) v[static_cast<std::size_t>(i)] = 1;
    return v;
}

}  // namespace

TEST_CASE("render then parse is the identity on every label vector") {
    for (unsigned bits = 0; bits < 1024; ++bits) {
        LabelVector v(10);
        for (unsigned c = 0; c < 10; ++c) v[c] = (bits >> c) & 1u;
        const auto text = render_answer(v, schema());
        const auto p = parse_answer(text, schema());
        INFO(text);
        CHECK(p.labels == v);
        CHECK(p.status == ParseStatus::Ok);
    }
    CHECK(render_answer(vec({}), schema()) == "NONE");
    CHECK(render_answer(vec({2, 5}), schema()) == "fentanyl, cocaine");
}

TEST_CASE("parser grammar") {
    auto p = parse_answer("fentanyl, cocaine", schema());
    CHECK(p.labels == vec({2, 5}));
    CHECK(p.status == ParseStatus::Ok);

    p = parse_answer("NONE", schema());
    CHECK(p.labels == vec({}));
    CHECK(p.status == ParseStatus::Ok);

    p = parse_answer("the decedent likely used opioids", schema());
    CHECK(p.labels == vec({}));
    CHECK(p.status == ParseStatus::Failed);
    CHECK(p.raw == "the decedent likely used opioids");

    // Case-insensitive, order-free, spaces or hyphens for underscores.
    p = parse_answer("  Cocaine,FENTANYL ,Prescription Opioids", schema());
    CHECK(p.labels == vec({2, 3, 5}));
    CHECK(p.status == ParseStatus::Ok);
    p = parse_answer("any-drugs", schema());
    CHECK(p.labels == vec({9}));

    // Unknown names are dropped with a repaired status.
    p = parse_answer("heroin, kratom", schema());
    CHECK(p.labels == vec({1}));
    CHECK(p.status == ParseStatus::Repaired);
    CHECK(p.ignored == std::vector<std::string>{"kratom"});

    // Trailing chatter after the answer line.
    p = parse_answer("\nalcohol\nBecause ethanol was listed.", schema());
    CHECK(p.labels == vec({7}));
    CHECK(p.status == ParseStatus::Repaired);

    p = parse_answer("heroin, heroin,", schema());
    CHECK(p.labels == vec({1}));
    CHECK(p.status == ParseStatus::Repaired);

    p = parse_answer("none.", schema());
    CHECK(p.status == ParseStatus::Ok);
    p = parse_answer("", schema());
    CHECK(p.status == ParseStatus::Failed);
    p = parse_answer("   \n  ", schema());
    CHECK(p.status == ParseStatus::Failed);
    p = parse_answer("none, unknown", schema());
    CHECK(p.status == ParseStatus::Failed);
}

TEST_CASE("prompt layout and exemplar counts") {
    const auto pool = ExemplarPool::from_cases(splits().validation);
    PromptSpec spec;
    spec.exemplar_seed = 4;
    const std::string text = "acute fentanyl toxicity";

    spec.k = 0;
    auto prompt = build_prompt(text, "q", spec, pool, schema());
    CHECK(count_of(prompt, kExampleDelimiter) == 0);
    CHECK(prompt.find(kAnswerFormat) != std::string::npos);
    CHECK(prompt.find("any_opioids, heroin, fentanyl") != std::string::npos);
    CHECK(prompt_query(prompt) == text);
    CHECK(prompt.substr(prompt.size() - 7) == "Answer:");

    for (int k : {3, 5, 10}) {
        spec.k = k;
        prompt = build_prompt(text, "q", spec, pool, schema());
        CHECK(count_of(prompt, kExampleDelimiter) == static_cast<std::size_t>(k));
        CHECK(prompt == build_prompt(text, "q", spec, pool, schema()));
        CHECK(prompt_query(prompt) == text);
    }

    spec.k = 3;
    auto other = spec;
    other.exemplar_seed = 5;
    CHECK(build_prompt(text, "q", spec, pool, schema()) != build_prompt(text, "q", other, pool, schema()));

    // Slot-looking text in the case stays literal.
    spec.k = 0;
    prompt = build_prompt("{classes} overdose", "q", spec, pool, schema());
    CHECK(prompt_query(prompt) == "{classes} overdose");
}

TEST_CASE("exemplar selection excludes the query case and fails on small pools") {
    ExemplarPool pool;
    for (int i = 0; i < 4; ++i) pool.items.push_back({"v" + std::to_string(i), "heroin toxicity", vec({0, 1, 9})});
    PromptSpec spec;
    spec.k = 3;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        spec.exemplar_seed = seed;
        const auto shots = select_exemplars(pool, spec, schema(), "v1");
        REQUIRE(shots.size() == 3);
        for (const auto* s : shots) CHECK(s->case_id != "v1");
    }
    spec.k = 4;
    CHECK_THROWS_AS(select_exemplars(pool, spec, schema(), "v1"), ConfigError);
    CHECK_NOTHROW(select_exemplars(pool, spec, schema()));
    spec.k = 5;
    CHECK_THROWS_AS(select_exemplars(pool, spec, schema()), ConfigError);
}

TEST_CASE("balanced selection covers classes before repeating") {
    const auto pool = ExemplarPool::from_cases(splits().validation);
    PromptSpec spec;
    spec.k = 10;
    spec.balanced = true;
    spec.exemplar_seed = 1;
    const auto shots = select_exemplars(pool, spec, schema());
    REQUIRE(shots.size() == 10);
    std::set<std::string> ids;
    for (const auto* s : shots) ids.insert(s->case_id);
    CHECK(ids.size() == 10);
    for (std::size_t c = 0; c < 10; ++c) {
        bool available = false, chosen = false;
        for (const auto& e : pool.items) available |= e.labels[c] != 0;
        for (const auto* s : shots) chosen |= s->labels[c] != 0;
        INFO("class ", c);
        if (available) CHECK(chosen);
    }
}

TEST_CASE("prompt spec configuration") {
    PromptSpec spec;
    spec.k = 5;
    spec.exemplar_seed = 77;
    const auto back = PromptSpec::from_json(spec.to_json());
    CHECK(back.k == 5);
    CHECK(back.exemplar_seed == 77);
    CHECK(back.instruction_template == spec.instruction_template);
    CHECK_THROWS_AS(PromptSpec::from_json({{"k", 3}, {"shots", 2}}), ConfigError);
    CHECK_THROWS_AS(PromptSpec::from_json({{"instruction_template", "Classify: {text}"}}), ConfigError);
    CHECK_THROWS_AS(PromptSpec::from_json({{"k", -1}}), ConfigError);
}

TEST_CASE("echo client scores perfectly") {
    const auto& s = splits();
    auto client = make_echo_client(s.test, schema());
    PromptSpec spec;
    spec.k = 3;
    GenerationOptions opts;
    opts.bootstrap.n = 50;
    const auto eval = evaluate_generations(*client, s.test, spec, ExemplarPool::from_cases(s.validation), schema(), opts);
    CHECK(client->requests() == s.test.size());
    CHECK(eval.stats.n == s.test.size());
    CHECK(eval.stats.ok_rate() == 1.0);
    CHECK(eval.report.metric("macro_f1").point == 1.0);
    CHECK(eval.exemplar_ids.size() == 3);
    for (std::size_t i = 0; i < s.test.size(); ++i) {
        CHECK(eval.records[i].case_id == s.test[i].id());
        CHECK(eval.records[i].parsed == s.test[i].gold);
    }
}

TEST_CASE("parsed metrics equal metrics on the same vectors") {
    const auto& s = splits();
    Engine eng(31);
    std::map<std::string, LabelVector> answer_of;
    LabelMatrix direct(0, 10), gold(0, 10);
    for (const auto& c : s.test) {
        if (!answer_of.count(c.normalized_text)) {
            LabelVector v(10);
            for (auto& x : v) x = uniform_unit(eng) < 0.3;
            answer_of[c.normalized_text] = v;
        }
        direct.append_row(answer_of[c.normalized_text]);
        gold.append_row(c.gold);
    }
    MockClient client([&](const GenerationRequest& r) { return render_answer(answer_of.at(prompt_query(r.prompt)), schema()); });
    GenerationOptions opts;
    opts.bootstrap.n = 20;
    const auto eval = evaluate_generations(client, s.test, PromptSpec{}, ExemplarPool{}, schema(), opts);
    CHECK(eval.predictions == direct);
    CHECK(eval.report.metric("macro_f1").point == metrics::macro_f1(direct, gold));
    CHECK(eval.report.metric("hamming_loss").point == metrics::hamming_loss(direct, gold));
}

TEST_CASE("failures score as all-negative and are counted") {
    const auto& s = splits();
    std::vector<corpus::LabeledCase> cases(s.test.begin(), s.test.begin() + 12);
    std::atomic<int> calls{0};
    MockClient client([&](const GenerationRequest& r) -> std::string {
        const int n = calls++;
        const auto q = prompt_query(r.prompt);
        if (q == cases[0].normalized_text) throw TransportError("connection refused");
        if (q == cases[1].normalized_text) return "I cannot determine that.";
        if (q == cases[2].normalized_text && n % 2 == 0) throw TransportError("flaky");
        return "any_drugs";
    });
    GenerationOptions opts;
    opts.retries = 2;
    opts.backoff_seconds = 0;
    opts.max_in_flight = 1;
    opts.bootstrap.n = 10;
    const auto eval = evaluate_generations(client, cases, PromptSpec{}, ExemplarPool{}, schema(), opts);
    CHECK(eval.records[0].transport_failed);
    CHECK(eval.records[0].status == ParseStatus::Failed);
    CHECK(eval.records[0].parsed == vec({}));
    CHECK(eval.records[1].status == ParseStatus::Failed);
    CHECK(eval.records[1].parsed == vec({}));
    CHECK_FALSE(eval.records[2].transport_failed);
    CHECK(eval.records[2].parsed == vec({9}));
    CHECK(eval.stats.failed == 2);
    CHECK(eval.stats.transport_failures == 1);
    CHECK(eval.stats.ok == 10);
    CHECK(eval.stats.failure_rate() == doctest::Approx(2.0 / 12));
}

TEST_CASE("exemplars that are test cases are rejected") {
    const auto& s = splits();
    PromptSpec spec;
    spec.k = 3;
    auto client = make_echo_client(s.test, schema());
    CHECK_THROWS_AS(evaluate_generations(*client, s.test, spec, ExemplarPool::from_cases(s.test), schema()),
                    ValidationError);
    GenerationOptions opts;
    opts.allow_exemplar_overlap = true;
    const auto eval = evaluate_generations(*client, s.test, spec, ExemplarPool::from_cases(s.test), schema(), opts);
    CHECK(eval.stats.exemplar_overlap == 3);
    CHECK(eval.stats.n == s.test.size());
}

TEST_CASE("parallel evaluation keeps input order") {
    const auto& s = splits();
    auto client = make_echo_client(s.test, schema());
    GenerationOptions opts;
    opts.bootstrap.n = 10;
    opts.max_in_flight = 1;
    const auto seq = evaluate_generations(*client, s.test, PromptSpec{}, ExemplarPool{}, schema(), opts);
    opts.max_in_flight = 6;
    const auto par = evaluate_generations(*client, s.test, PromptSpec{}, ExemplarPool{}, schema(), opts);
    CHECK(seq.predictions == par.predictions);
    for (std::size_t i = 0; i < seq.records.size(); ++i) CHECK(seq.records[i].prompt_sha256 == par.records[i].prompt_sha256);
}

TEST_CASE("generation log is one JSON object per case") {
    const auto& s = splits();
    auto client = make_echo_client(s.test, schema());
    GenerationOptions opts;
    opts.bootstrap.n = 10;
    const auto eval = evaluate_generations(*client, s.test, PromptSpec{}, ExemplarPool{}, schema(), opts);
    const auto path = fs::temp_directory_path() / "odsurv_llm_log.jsonl";
    write_generation_log(path.string(), eval.records, schema());
    std::ifstream in(path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("case_id") == s.test[n].id());
        CHECK(j.at("prompt_sha256").get<std::string>().size() == 64);
        CHECK(j.at("status") == "ok");
        CHECK(j.at("parsed").size() == 10);
        const auto prompt = build_prompt(s.test[n].normalized_text, PromptSpec{}, {}, schema());
        CHECK(j.at("prompt_sha256") == sha256_hex(prompt));
        ++n;
    }
    CHECK(n == s.test.size());
    fs::remove(path);
}

TEST_CASE("SFT stops when the loss crosses the threshold") {
    const auto corpus = synth::make_corpus(2500, 3);
    const auto cases = synth::labeled(corpus);
    SftConfig cfg;
    CHECK(cfg.loss_threshold == 0.005);
    CHECK(cfg.max_examples == 2000);

    MockClient crossing([](const GenerationRequest&) { return std::string(); },
                        [](std::size_t seen) { return seen >= 1400 ? 0.004 : 0.5; });
    auto r = run_sft(crossing, cases, corpus.schema, cfg);
    CHECK(r.examples_consumed == 1400);
    CHECK(r.converged);
    CHECK(r.final_loss == 0.004);
    CHECK(r.warning.empty());
    CHECK(r.model_handle == "mock-sft-1400");

    MockClient flat([](const GenerationRequest&) { return std::string(); }, [](std::size_t) { return 0.7; });
    r = run_sft(flat, cases, corpus.schema, cfg);
    CHECK(r.examples_consumed == 2000);
    CHECK_FALSE(r.converged);
    CHECK_FALSE(r.warning.empty());

    // Small split: the split runs out before the budget.
    MockClient flat2([](const GenerationRequest&) { return std::string(); }, [](std::size_t) { return 0.7; });
    cfg.batch_size = 64;
    r = run_sft(flat2, std::span(cases).first(300), corpus.schema, cfg);
    CHECK(r.examples_consumed == 300);
    CHECK(r.losses.size() == 5);

    MockClient no_training([](const GenerationRequest&) { return std::string(); });
    CHECK_THROWS_AS(run_sft(no_training, cases, corpus.schema, cfg), ConfigError);
}

TEST_CASE("HTTP client speaks the generation and SFT contract") {
    httplib::Server server;
    std::atomic<int> failures_left{1};
    std::vector<nlohmann::json> sft_batches;
    std::mutex mu;
    server.Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
        if (failures_left-- > 0) {
            res.status = 503;
            return;
        }
        const auto j = nlohmann::json::parse(req.body);
        const auto text = prompt_query(j.at("prompt").get<std::string>());
        const std::string answer = text.find("heroin") != std::string::npos ? "heroin, any_opioids, any_drugs" : "NONE";
        res.set_content(nlohmann::json{{"text", answer}, {"temperature_seen", j.at("temperature")}}.dump(),
                        "application/json");
    });
    server.Post("/sft/train", [&](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard lock(mu);
        sft_batches.push_back(nlohmann::json::parse(req.body));
        res.set_content(nlohmann::json{{"loss", sft_batches.size() >= 3 ? 0.001 : 0.2}}.dump(), "application/json");
    });
    server.Post("/sft/finish", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"model": "tiny-sft"})", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpClientConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
    cfg.model = "tiny";
    cfg.timeout_seconds = 5;
    HttpClient client(cfg);

    std::vector<corpus::LabeledCase> cases(2);
    cases[0].record.uid = "h1";
    cases[0].normalized_text = "acute heroin toxicity";
    cases[0].gold = vec({0, 1, 9});
    cases[1].record.uid = "n1";
    cases[1].normalized_text = "gunshot wound";
    cases[1].gold = vec({});
    GenerationOptions opts;
    opts.backoff_seconds = 0.01;
    opts.max_in_flight = 1;
    opts.bootstrap.n = 10;
    const auto eval = evaluate_generations(client, cases, PromptSpec{}, ExemplarPool{}, schema(), opts);
    CHECK(eval.stats.ok == 2);
    CHECK(eval.stats.transport_failures == 0);
    CHECK(eval.report.metric("accuracy").point == 1.0);

    std::vector<corpus::LabeledCase> many(10, cases[0]);
    SftConfig sft;
    sft.batch_size = 2;
    const auto r = run_sft(client, many, schema(), sft);
    CHECK(r.converged);
    CHECK(r.examples_consumed == 6);
    CHECK(r.model_handle == "tiny-sft");
    REQUIRE(sft_batches.size() == 3);
    CHECK(sft_batches[0].at("examples").size() == 2);
    CHECK(sft_batches[0].at("examples")[0].at("target") == "any_opioids, heroin, any_drugs");
    CHECK(sft_batches[0].at("model") == "tiny");

    server.stop();
    th.join();

    // Nothing listening any more.
    HttpClient dead(cfg);
    CHECK_THROWS_AS(dead.generate({}), TransportError);
    CHECK_THROWS_AS(HttpClient(HttpClientConfig{"https://x", "", 1}), ConfigError);
}
