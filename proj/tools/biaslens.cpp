// Command-line entry points: score, report, embed, serve.

#include "biaslens/biaslens.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace biaslens;

namespace {

constexpr int exit_runtime = 1;
constexpr int exit_usage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Writes through a sibling temp file so a failed run never leaves a partial artifact.
void write_atomically(const fs::path& path, std::string_view content) {
    fs::path tmp = path;
    tmp += ".partial";
    try {
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw Error("cannot write " + tmp.string());
            out.write(content.data(), static_cast<std::streamsize>(content.size()));
            out.flush();
            if (!out) throw Error("write to " + tmp.string() + " failed");
        }
        fs::rename(tmp, path);
    } catch (...) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw;
    }
}

Corpus load_corpus(const std::string& path, const std::string& format) {
    DatasetFormat fmt = format_for_path(path);
    if (!format.empty()) fmt = *parse_format(format);
    auto corpus = parse_dataset(read_file(path), fmt);
    const auto diagnostics = validate(corpus);
    for (const auto& d : diagnostics) {
        std::cerr << (d.severity == Severity::error ? "error: " : "warning: ") << d.message << '\n';
    }
    if (has_errors(diagnostics)) throw Error("dataset " + path + " failed validation");
    return corpus;
}

ScoreMatrix load_scores(const std::vector<std::string>& paths, const Corpus& corpus) {
    ScoreMatrix matrix;
    for (const auto& path : paths) {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(read_file(path));
        } catch (const nlohmann::json::parse_error& e) {
            throw Error("score file " + path + " is not JSON: " + e.what());
        }
        auto model = score_file_from_json(doc);
        reconcile_with_corpus(model, corpus);
        matrix.add_model(std::move(model));
    }
    return matrix;
}

struct Inputs {
    std::string data;
    std::string format;
    std::vector<std::string> scores;
    bool demo = false;
};

void add_input_options(CLI::App* cmd, Inputs& in, bool with_scores) {
    cmd->add_option("--data", in.data, "dataset file (JSONL or CSV)")->check(CLI::ExistingFile);
    cmd->add_option("--format", in.format, "dataset format")->check(CLI::IsMember({"jsonl", "csv"}));
    if (with_scores) {
        cmd->add_option("--scores", in.scores, "score file, repeat for each model")->check(CLI::ExistingFile);
        cmd->add_flag("--demo", in.demo, "use the bundled demo corpus and scores");
    }
}

std::pair<Corpus, ScoreMatrix> resolve_inputs(const Inputs& in) {
    if (in.demo) {
        if (!in.data.empty() || !in.scores.empty()) throw UsageError("--demo cannot be combined with --data or --scores");
        return {demo::corpus(), demo::scores()};
    }
    if (in.data.empty()) throw UsageError("--data is required (or --demo)");
    if (in.scores.empty()) throw UsageError("at least one --scores file is required");
    auto corpus = load_corpus(in.data, in.format);
    auto scores = load_scores(in.scores, corpus);
    return {std::move(corpus), std::move(scores)};
}

// ---- score

struct ScoreArgs {
    Inputs in;
    std::string scorer = "builtin";
    std::string endpoint;
    std::string model_id;
    std::string remote_model;
    std::string out;
    double alpha = 1.0;
    bool exclude_punctuation = false;
    std::size_t batch_size = 16;
    int timeout_ms = 30'000;
    int retries = 2;
    std::size_t threads = 0;
};

int run_score(const ScoreArgs& a) {
    if (a.in.data.empty()) throw UsageError("--data is required");
    const auto corpus = load_corpus(a.in.data, a.in.format);

    ProviderSpec spec;
    spec.exclude_punctuation = a.exclude_punctuation;
    std::shared_ptr<const ScoreProvider> provider;
    if (a.scorer == "builtin") {
        spec.alpha = a.alpha;
        provider = make_builtin_provider(corpus.texts(), a.alpha);
    } else {
        if (a.endpoint.empty()) throw UsageError("--endpoint is required with --scorer remote");
        spec.kind = ProviderSpec::Kind::remote;
        spec.endpoint = a.endpoint;
        spec.remote_model = a.remote_model;
        RemoteConfig rc;
        rc.endpoint = a.endpoint;
        rc.batch_size = a.batch_size;
        rc.timeout = std::chrono::milliseconds(a.timeout_ms);
        rc.retries = a.retries;
        provider = std::make_shared<RemoteScorer>(rc, a.remote_model.empty() ? a.model_id : a.remote_model);
    }

    CorpusScoringOptions opts;
    opts.score.exclude_punctuation = a.exclude_punctuation;
    opts.threads = a.threads;
    const auto scores = score_corpus(*provider, corpus, a.model_id, opts, spec);
    write_atomically(a.out, score_file_json(scores).dump(1) + "\n");
    std::cerr << "scored " << scores.scores().size() << " sentences with " << a.model_id << " -> " << a.out << '\n';
    return 0;
}

// ---- report

struct ReportArgs {
    Inputs in;
    std::string out;
    std::string csv;
};

int run_report(const ReportArgs& a) {
    const auto [corpus, matrix] = resolve_inputs(a.in);
    std::vector<BiasReport> reports;
    for (const auto& id : matrix.model_ids()) reports.push_back(stereotype_preference_rate(matrix, corpus, id));

    const auto csv = bias_report_csv(reports);
    if (!a.out.empty()) write_atomically(a.out, bias_report_json(reports).dump(1) + "\n");
    if (!a.csv.empty()) write_atomically(a.csv, csv);
    std::cout << csv;
    return 0;
}

// ---- embed

struct EmbedArgs {
    Inputs in;
    std::string method = "pca";
    std::uint64_t seed = 0;
    double perplexity = 30.0;
    int iterations = 1000;
    bool standardize = false;
    bool gzip = false;
    std::string out;
};

int run_embed(const EmbedArgs& a) {
    auto [corpus, matrix] = resolve_inputs(a.in);
    const auto features = features_from_scores(matrix, corpus, a.standardize);

    Embedding e;
    if (a.method == "tsne") {
        if (features.rows() < tsne_min_points) {
            throw UsageError("t-SNE needs at least " + std::to_string(tsne_min_points) + " sentences, got " +
                             std::to_string(features.rows()) + "; use --method pca");
        }
        TsneParams params;
        params.seed = a.seed;
        params.perplexity = a.perplexity;
        params.iterations = a.iterations;
        e = tsne_2d(features, params);
    } else {
        e = pca_2d(features);
    }
    e.params["standardize"] = a.standardize;

    // The output is a project file so it can be imported by the service as is.
    Project p;
    p.corpus = std::move(corpus);
    p.scores = std::move(matrix);
    p.set_embedding(std::move(e));
    write_atomically(a.out, save_project(p, a.gzip));
    std::cerr << a.method << " embedding of " << features.rows() << " sentences -> " << a.out << '\n';
    return 0;
}

// ---- serve

struct ServeArgs {
    Inputs in;
    std::string host = "127.0.0.1";
    int port = 8617;
    std::string data_dir;
    std::vector<std::string> cors;
    std::size_t workers = 2;
    std::string endpoint;
    bool demo = false;
};

int run_serve(const ServeArgs& a) {
    ServiceConfig cfg;
    cfg.host = a.host;
    cfg.port = a.port;
    cfg.data_dir = a.data_dir;
    cfg.cors_origins = a.cors;
    cfg.workers = a.workers;
    cfg.remote_defaults.endpoint = a.endpoint;

    // Block termination signals before any thread starts; one thread waits for them.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    Service service(cfg);
    if (a.demo) service.add_project(demo::project(), "demo");
    if (!a.in.data.empty()) {
        Project p;
        p.corpus = load_corpus(a.in.data, a.in.format);
        std::cerr << "loaded project " << service.add_project(std::move(p)) << " from " << a.in.data << '\n';
    }

    if (!service.bind()) {
        std::cerr << "error: cannot listen on " << a.host << ":" << a.port << " (port in use?)\n";
        return exit_runtime;
    }
    std::thread([&service, set] {
        int sig = 0;
        sigwait(&set, &sig);
        service.stop();
    }).detach();

    std::cerr << "listening on http://" << a.host << ":" << a.port << '\n';
    service.listen();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Paired-sentence bias analysis: score corpora, report preference rates, embed score vectors, serve the API."};
    app.require_subcommand(1);

    ScoreArgs score;
    auto* score_cmd = app.add_subcommand("score", "score every sentence of a dataset with one model");
    add_input_options(score_cmd, score.in, false);
    score_cmd->get_option("--data")->required();
    score_cmd->add_option("--scorer", score.scorer, "builtin or remote")->check(CLI::IsMember({"builtin", "remote"}));
    score_cmd->add_option("--endpoint", score.endpoint, "remote scorer base URL");
    score_cmd->add_option("--model-id", score.model_id, "model id written to the score file")->required();
    score_cmd->add_option("--remote-model", score.remote_model, "model name sent to the remote scorer");
    score_cmd->add_option("--out", score.out, "score file to write")->required();
    score_cmd->add_option("--alpha", score.alpha, "add-alpha smoothing of the builtin model")->check(CLI::PositiveNumber);
    score_cmd->add_flag("--exclude-punctuation", score.exclude_punctuation, "leave punctuation tokens out of the mean");
    score_cmd->add_option("--batch-size", score.batch_size, "sentences per remote request")->check(CLI::PositiveNumber);
    score_cmd->add_option("--timeout-ms", score.timeout_ms, "remote request timeout")->check(CLI::PositiveNumber);
    score_cmd->add_option("--retries", score.retries, "extra attempts per remote batch")->check(CLI::NonNegativeNumber);
    score_cmd->add_option("--threads", score.threads, "worker threads, 0 for all cores");

    ReportArgs report;
    auto* report_cmd = app.add_subcommand("report", "stereotype preference rate per model and category");
    add_input_options(report_cmd, report.in, true);
    report_cmd->add_option("--out", report.out, "JSON report to write");
    report_cmd->add_option("--csv", report.csv, "CSV report to write");

    EmbedArgs embed;
    auto* embed_cmd = app.add_subcommand("embed", "2-D embedding of the per-sentence score vectors");
    add_input_options(embed_cmd, embed.in, true);
    embed_cmd->add_option("--method", embed.method, "pca or tsne")->check(CLI::IsMember({"pca", "tsne"}));
    embed_cmd->add_option("--seed", embed.seed, "t-SNE seed");
    embed_cmd->add_option("--perplexity", embed.perplexity, "t-SNE perplexity")->check(CLI::PositiveNumber);
    embed_cmd->add_option("--iterations", embed.iterations, "t-SNE iterations")->check(CLI::PositiveNumber);
    embed_cmd->add_flag("--standardize", embed.standardize, "z-score each model column first");
    embed_cmd->add_flag("--gzip", embed.gzip, "gzip the project file");
    embed_cmd->add_option("--out", embed.out, "project file to write")->required();

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "run the HTTP API until interrupted");
    add_input_options(serve_cmd, serve.in, false);
    serve_cmd->add_option("--host", serve.host, "bind address");
    serve_cmd->add_option("--port", serve.port, "listen port")->check(CLI::Range(0, 65535))->envname("BIASLENS_PORT");
    serve_cmd->add_option("--data-dir", serve.data_dir, "persist projects here")->envname("BIASLENS_DATA_DIR");
    serve_cmd->add_option("--cors", serve.cors, "allowed UI origin, repeatable")->envname("BIASLENS_CORS");
    serve_cmd->add_option("--workers", serve.workers, "scoring worker threads")->check(CLI::PositiveNumber);
    serve_cmd->add_option("--endpoint", serve.endpoint, "default remote scorer URL")->envname("BIASLENS_ENDPOINT");
    serve_cmd->add_flag("--demo", serve.demo, "preload the demo project as 'demo'");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_usage;
    }

    try {
        if (*score_cmd) return run_score(score);
        if (*report_cmd) return run_report(report);
        if (*embed_cmd) return run_embed(embed);
        if (*serve_cmd) return run_serve(serve);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ScoringError& e) {
        std::cerr << "error: " << e.what() << " (" << e.completed().size() << " scored, " << e.failed().size() << " failed)\n";
        return exit_runtime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_runtime;
    }
    return exit_usage;
}
