#include "odsurv/app/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "odsurv/analysis/explain.hpp"
#include "odsurv/app/config.hpp"
#include "odsurv/app/run.hpp"

namespace odsurv::app {

namespace fs = std::filesystem;

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Configuration: return kExitUsage;
        case ErrorKind::Ingest:
        case ErrorKind::Validation:
        case ErrorKind::Parse:
        case ErrorKind::Split:
        case ErrorKind::Shape: return kExitData;
        case ErrorKind::Training:
        case ErrorKind::Transport:
        case ErrorKind::Stage: return kExitStage;
    }
    return kExitStage;
}

namespace {

int exit_code_for_name(const std::string& kind) {
    for (auto k : {ErrorKind::Ingest, ErrorKind::Validation, ErrorKind::Parse, ErrorKind::Configuration, ErrorKind::Split,
                   ErrorKind::Training, ErrorKind::Shape, ErrorKind::Transport, ErrorKind::Stage})
        if (kind == to_string(k)) return exit_code_for(k);
    return kExitStage;
}

struct Common {
    std::string config;
    std::string run;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool fresh = false;
    std::vector<std::string> models;
};

void add_config_flags(CLI::App* cmd, Common& c, bool required_config) {
    auto* opt = cmd->add_option("--config", c.config, "Run config (JSON)")->check(CLI::ExistingFile);
    if (required_config) opt->required();
    cmd->add_option("--seed", c.seed, "Override the top-level seed");
}

RunConfig load_config(const Common& c) {
    auto cfg = RunConfig::load(c.config);
    if (c.seed) cfg.set_seed(*c.seed);
    return cfg;
}

// Config plus run directory, from --run or from --config.
struct Located {
    RunConfig config;
    std::string run_dir;
};

Located locate(const Common& c) {
    if (!c.run.empty()) {
        const auto m = RunManifest::load(c.run);
        std::ifstream in(fs::path(c.run) / "config.json", std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        auto cfg = RunConfig::parse(ss.str(), m.config_base_dir);
        if (c.seed) cfg.set_seed(*c.seed);
        return {std::move(cfg), c.run};
    }
    if (c.config.empty()) throw ConfigError("one of --config or --run is required");
    auto cfg = load_config(c);
    const auto dir = run_directory(cfg);
    return {std::move(cfg), dir};
}

int report_manifest(const RunManifest& m, std::ostream& out, std::ostream& err) {
    for (const auto& s : m.stages) out << s.name << '\t' << s.status << '\n';
    out << "run_dir\t" << m.run_dir << '\n' << "status\t" << m.status << '\n';
    if (const auto* f = m.failed_stage()) {
        err << "stage " << f->name << " failed: " << f->error << '\n';
        return exit_code_for_name(f->error_kind);
    }
    return kExitOk;
}

const ModelSpec& pick_model(const RunConfig& cfg, const std::vector<std::string>& names, bool encoder_only) {
    if (!names.empty()) {
        const auto& m = cfg.model(names.front());
        if (encoder_only && m.family != Family::Encoder) throw ConfigError("model '" + m.name + "' is not an encoder");
        return m;
    }
    if (encoder_only && cfg.explain) return cfg.model(cfg.explain->model);
    for (const auto& m : cfg.models)
        if (!encoder_only || m.family == Family::Encoder) return m;
    throw ConfigError("config has no encoder model");
}

// Makes sure the model's artifact exists, training it if needed.
int ensure_trained(Located& loc, const ModelSpec& m, const Common& c, std::ostream& out, std::ostream& err) {
    if (!c.run.empty() || !m.artifact.empty()) return kExitOk;
    RunOptions o;
    o.until = Until::Train;
    o.models = {m.name};
    const auto manifest = run_experiment(loc.config, o);
    loc.run_dir = manifest.run_dir;
    if (manifest.failed_stage()) return report_manifest(manifest, out, err);
    return kExitOk;
}

void write_output(const std::string& run_dir, const std::string& rel, const std::string& text, std::ostream& out) {
    if (rel.empty()) {
        out << text;
        return;
    }
    const auto path = confine_path(run_dir, rel);
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw StageError("cannot write " + path);
    f << text;
    out << path << '\n';
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-label classification of drug classes in cause-of-death text", "odsurv"};
    app.set_version_flag("--version", toolkit_version());
    app.require_subcommand(1, 1);

    Common c;
    Until until = Until::Evaluate;
    auto add_run_cmd = [&](const char* name, const char* help, Until u) {
        auto* cmd = app.add_subcommand(name, help);
        add_config_flags(cmd, c, true);
        cmd->add_option("--out", c.out, "Output root for run directories");
        cmd->add_flag("--fresh", c.fresh, "Start a new timestamped subrun");
        cmd->add_option("--model", c.models, "Restrict to these models");
        cmd->callback([&until, u] { until = u; });
        return cmd;
    };
    auto* ingest = add_run_cmd("ingest", "Ingest and validate the datasets", Until::Ingest);
    auto* split = add_run_cmd("split", "Create the train/validation/test partition", Until::Split);
    auto* train = add_run_cmd("train", "Train every configured model", Until::Train);
    auto* evaluate = add_run_cmd("evaluate", "Train and evaluate, then write metric reports", Until::Evaluate);
    auto* llm_eval = add_run_cmd("llm-eval", "Evaluate the LLM models only", Until::Evaluate);

    std::string in_path, text, class_name, format = "html", delimiter = "tab";
    int steps = analysis::kDefaultSteps;

    auto* predict = app.add_subcommand("predict", "Write per-case label vectors for a file of records");
    add_config_flags(predict, c, false);
    predict->add_option("--run", c.run, "Existing run directory")->check(CLI::ExistingDirectory);
    predict->add_option("--in", in_path, "Records file")->required()->check(CLI::ExistingFile);
    predict->add_option("--out", c.out, "Prediction CSV, inside the run directory")->required();
    predict->add_option("--model", c.models, "Model name")->expected(1);

    auto* explain = app.add_subcommand("explain", "Integrated-gradients token attributions");
    add_config_flags(explain, c, false);
    explain->add_option("--run", c.run, "Existing run directory")->check(CLI::ExistingDirectory);
    explain->add_option("--model", c.models, "Encoder model name")->expected(1);
    explain->add_option("--class", class_name, "Target class")->required();
    auto* text_opt = explain->add_option("--text", text, "Statement to explain");
    auto* in_opt = explain->add_option("--in", in_path, "Records file")->check(CLI::ExistingFile);
    text_opt->excludes(in_opt);
    explain->add_option("--steps", steps, "Integration steps")->capture_default_str();
    explain->add_option("--format", format, "html or text")->check(CLI::IsMember({"html", "text"}))->capture_default_str();
    explain->add_option("--out", c.out, "Report file, inside the run directory");

    auto* report = app.add_subcommand("report", "Metric table of a finished run");
    report->add_option("--run", c.run, "Run directory")->required()->check(CLI::ExistingDirectory);
    report->add_option("--delimiter", delimiter, "tab, comma or a single character")->capture_default_str();
    report->add_option("--out", c.out, "Table file, inside the run directory");

    if (!args.empty() && !args[0].empty() && args[0][0] != '-' && !app.get_subcommand_no_throw(args[0])) {
        err << "error: unknown subcommand '" << args[0] << "'\n\n" << app.help();
        return kExitUsage;
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << toolkit_version() << '\n';
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kExitUsage;
    }

    try {
        const auto* cmd = app.get_subcommands().front();
        if (cmd == ingest || cmd == split || cmd == train || cmd == evaluate || cmd == llm_eval) {
            auto cfg = load_config(c);
            if (!c.out.empty()) cfg.output_dir = c.out;
            RunOptions o;
            o.until = until;
            o.fresh = c.fresh;
            o.models.insert(c.models.begin(), c.models.end());
            for (const auto& n : o.models) cfg.model(n);
            if (cmd == llm_eval) {
                o.models.clear();
                for (const auto& m : cfg.models)
                    if (m.family == Family::Llm) o.models.insert(m.name);
                if (o.models.empty()) throw ConfigError("config has no llm model");
                o.explain = false;
            }
            return report_manifest(run_experiment(cfg, o), out, err);
        }
        if (cmd == predict) {
            auto loc = locate(c);
            const auto& m = pick_model(loc.config, c.models, false);
            if (const int rc = ensure_trained(loc, m, c, out, err); rc != kExitOk) return rc;
            const auto target = confine_path(loc.run_dir, c.out);
            const auto cases = read_unlabeled_cases(loc.config, in_path);
            std::vector<corpus::LabeledCase> pool;
            if (m.family == Family::Llm) {
                const auto data = load_run_data(loc.config, loc.run_dir);
                if (data.split) pool = data.partition("train");
            }
            auto predictor = load_predictor(loc.config, loc.run_dir, m, pool);
            const auto result = predictor->predict(cases, kPredictTag);
            std::vector<std::string> ids;
            for (const auto& cs : cases) ids.push_back(cs.id());
            write_predictions_csv(target, ids, result.labels, result.scores ? &*result.scores : nullptr, loc.config.schema);
            out << target << '\n';
            return kExitOk;
        }
        if (cmd == explain) {
            if (text.empty() && in_path.empty()) throw ConfigError("explain needs --text or --in");
            auto loc = locate(c);
            const auto& m = pick_model(loc.config, c.models, true);
            if (const int rc = ensure_trained(loc, m, c, out, err); rc != kExitOk) return rc;
            const auto model = finetune::load_classifier(model_directory(loc.run_dir, m));
            std::vector<std::string> texts, ids;
            if (!text.empty()) {
                texts.push_back(corpus::normalize_text(text));
                ids.push_back("text");
            } else {
                for (const auto& cs : read_unlabeled_cases(loc.config, in_path)) {
                    texts.push_back(cs.normalized_text);
                    ids.push_back(cs.id());
                }
            }
            auto maps = analysis::attribute_many(model, texts, class_name, steps, loc.config.workers);
            for (std::size_t i = 0; i < maps.size(); ++i) maps[i].case_id = ids[i];
            write_output(loc.run_dir, c.out,
                         analysis::render_attribution_report(maps, analysis::report_format_from_string(format)), out);
            return kExitOk;
        }
        if (cmd == report) {
            char d = '\t';
            if (delimiter == "comma") d = ',';
            else if (delimiter.size() == 1) d = delimiter[0];
            else if (delimiter != "tab") throw ConfigError("delimiter must be tab, comma or one character");
            write_output(c.run, c.out, render_run_report(c.run, d), out);
            return kExitOk;
        }
    } catch (const Error& e) {
        err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitStage;
    }
    return kExitUsage;
}

int dispatch(int argc, char** argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return dispatch(args, out, err);
}

}  // namespace odsurv::app
