#pragma once

#include "biaslens/analytics.hpp"
#include "biaslens/dataset.hpp"
#include "biaslens/embedding.hpp"
#include "biaslens/error.hpp"
#include "biaslens/project_io.hpp"
#include "biaslens/remote.hpp"
#include "biaslens/scoring.hpp"
#include "biaslens/session.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

/**
 * @file service.hpp
 *
 * @brief HTTP+JSON API over the analysis engine.
 *
 * Each project is held as an immutable snapshot behind a pointer. Readers
 * take the current snapshot and never block writers; writers are serialized
 * per project, build a modified copy and publish it in one swap. Scoring
 * jobs run on a bounded worker pool and publish the finished model in one
 * step, so readers never see a half-scored model.
 */

namespace biaslens {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8617;
    std::filesystem::path data_dir;          // empty: in-memory only
    std::vector<std::string> cors_origins;   // "*" allows any origin
    std::size_t workers = 2;
    RemoteConfig remote_defaults;            // endpoint used when a request names none
};

/// Non-2xx response body: {"code", "message", "details"?}.
struct ApiError {
    int status = 500;
    std::string code;
    std::string message;
    nlohmann::json details = nullptr;

    nlohmann::json body() const {
        nlohmann::json j{{"code", code}, {"message", message}};
        if (!details.is_null()) j["details"] = details;
        return j;
    }
};

namespace detail {

class WorkerPool {
public:
    explicit WorkerPool(std::size_t threads) {
        for (std::size_t i = 0; i < std::max<std::size_t>(1, threads); ++i) {
            threads_.emplace_back([this] { run(); });
        }
    }

    ~WorkerPool() {
        {
            std::lock_guard lock(mu_);
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    void submit(std::function<void()> task) {
        {
            std::lock_guard lock(mu_);
            queue_.push_back(std::move(task));
            ++outstanding_;
        }
        cv_.notify_one();
    }

    void wait_idle() {
        std::unique_lock lock(mu_);
        idle_cv_.wait(lock, [this] { return outstanding_ == 0; });
    }

private:
    void run() {
        while (true) {
            std::function<void()> task;
            {
                std::unique_lock lock(mu_);
                cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
                if (queue_.empty()) return;
                task = std::move(queue_.front());
                queue_.pop_front();
            }
            task();
            {
                std::lock_guard lock(mu_);
                --outstanding_;
            }
            idle_cv_.notify_all();
        }
    }

    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable idle_cv_;
    std::deque<std::function<void()>> queue_;
    std::vector<std::thread> threads_;
    std::size_t outstanding_ = 0;
    bool stopping_ = false;
};

inline std::vector<std::string> split_csv_param(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

} // namespace detail

class Service {
public:
    enum class JobStatus { queued, running, done, failed };

    explicit Service(ServiceConfig config = {}) : config_(std::move(config)), pool_(config_.workers) {
        // httplib's default adds SO_REUSEPORT, which lets a second server share the port
        server_.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
        });
        routes();
        if (!config_.data_dir.empty()) load_data_dir();
    }

    ~Service() { stop(); }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Registers a project under `id` (or the next generated id) and returns the id.
    std::string add_project(Project project, std::optional<std::string> id = std::nullopt) {
        auto slot = std::make_shared<Slot>();
        slot->current = std::make_shared<const Project>(std::move(project));
        slot->registration = slot->current->scores.model_ids();
        std::string pid;
        {
            std::unique_lock lock(projects_mu_);
            pid = id ? *id : "p" + std::to_string(++next_id_);
            projects_[pid] = slot;
        }
        persist(pid, *slot->current);
        return pid;
    }

    std::shared_ptr<const Project> snapshot(const std::string& id) const {
        auto slot = find(id);
        if (!slot) return nullptr;
        std::lock_guard lock(slot->mu);
        return slot->current;
    }

    bool bind() { return server_.bind_to_port(config_.host, config_.port); }
    int bind_any_port() { return server_.bind_to_any_port(config_.host); }
    bool listen() { return server_.listen_after_bind(); }
    void stop() {
        if (server_.is_running()) server_.stop();
    }
    void wait_until_ready() { server_.wait_until_ready(); }

    /// Blocks until every queued scoring job has finished.
    void wait_idle() { pool_.wait_idle(); }

    httplib::Server& server() { return server_; }

private:
    struct Job {
        JobStatus status = JobStatus::queued;
        std::string message;
        std::vector<std::string> completed;
        std::vector<std::string> failed;
    };

    struct Slot {
        std::mutex write_mu;                      // one writer at a time
        mutable std::mutex mu;                    // guards the fields below
        std::shared_ptr<const Project> current;
        std::map<std::string, Job> jobs;
        std::vector<std::string> registration;    // model ids in request order
        std::map<std::string, std::shared_ptr<const ScoreProvider>> providers;
    };

    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    std::shared_ptr<Slot> find(const std::string& id) const {
        std::shared_lock lock(projects_mu_);
        auto it = projects_.find(id);
        return it == projects_.end() ? nullptr : it->second;
    }

    std::shared_ptr<Slot> require(const std::string& id) const {
        auto slot = find(id);
        if (!slot) throw ApiError{404, "not_found", "no project with id " + id};
        return slot;
    }

    static std::shared_ptr<const Project> current(const Slot& slot) {
        std::lock_guard lock(slot.mu);
        return slot.current;
    }

    void publish(const std::string& id, Slot& slot, std::shared_ptr<const Project> next) {
        {
            std::lock_guard lock(slot.mu);
            slot.current = next;
        }
        persist(id, *next);
    }

    void persist(const std::string& id, const Project& project) {
        if (config_.data_dir.empty()) return;
        std::filesystem::create_directories(config_.data_dir);
        const auto path = config_.data_dir / (id + ".json");
        const auto tmp = config_.data_dir / (id + ".json.tmp");
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << save_project(project);
        }
        std::filesystem::rename(tmp, path);
    }

    void load_data_dir() {
        if (!std::filesystem::exists(config_.data_dir)) return;
        for (const auto& entry : std::filesystem::directory_iterator(config_.data_dir)) {
            if (entry.path().extension() != ".json") continue;
            std::ifstream in(entry.path(), std::ios::binary);
            std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
            const auto id = entry.path().stem().string();
            auto slot = std::make_shared<Slot>();
            slot->current = std::make_shared<const Project>(load_project(bytes));
            slot->registration = slot->current->scores.model_ids();
            std::unique_lock lock(projects_mu_);
            projects_[id] = slot;
            if (id.size() > 1 && id[0] == 'p' && std::all_of(id.begin() + 1, id.end(), ::isdigit)) {
                next_id_ = std::max<std::size_t>(next_id_, std::stoul(id.substr(1)));
            }
        }
    }

    static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, const ApiError& e) { send_json(res, e.status, e.body()); }

    Handler wrap(Handler h) {
        return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
            try {
                h(req, res);
            } catch (const ApiError& e) {
                send_error(res, e);
            } catch (const nlohmann::json::exception& e) {
                send_error(res, ApiError{422, "invalid_request", std::string("malformed JSON request: ") + e.what()});
            } catch (const InvalidArgument& e) {
                send_error(res, ApiError{422, "invalid_request", e.what()});
            } catch (const std::exception& e) {
                send_error(res, ApiError{500, "internal", e.what()});
            }
        };
    }

    static nlohmann::json parse_body(const httplib::Request& req) {
        try {
            return nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::parse_error& e) {
            throw ApiError{422, "invalid_request", std::string("request body is not JSON: ") + e.what()};
        }
    }

    static std::string_view status_name(JobStatus s) {
        switch (s) {
        case JobStatus::queued: return "queued";
        case JobStatus::running: return "running";
        case JobStatus::done: return "done";
        case JobStatus::failed: return "failed";
        }
        return "failed";
    }

    void routes() {
        server_.set_post_routing_handler([this](const httplib::Request& req, httplib::Response& res) { add_cors(req, res); });
        server_.Options(R"(/api/.*)", [this](const httplib::Request& req, httplib::Response& res) {
            add_cors(req, res);
            res.set_header("Access-Control-Allow-Methods", "GET, POST, PUT, DELETE, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
            res.status = 204;
        });
        server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (res.body.empty()) {
                send_error(res, ApiError{res.status, res.status == 404 ? "not_found" : "http_error", "no such endpoint"});
            }
        });

        server_.Get("/api/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });

        server_.Get("/api/projects", wrap([this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json ids = nlohmann::json::array();
            std::shared_lock lock(projects_mu_);
            for (const auto& [id, slot] : projects_) ids.push_back(id);
            send_json(res, 200, {{"projects", ids}});
        }));

        server_.Post("/api/projects/import", wrap([this](const httplib::Request& req, httplib::Response& res) {
            Project p;
            try {
                p = load_project(req.body);
            } catch (const LoadError& e) {
                throw ApiError{422, "invalid_project", e.what(), e.diagnostics().empty() ? nlohmann::json(nullptr) : nlohmann::json(e.diagnostics())};
            }
            send_json(res, 201, {{"project_id", add_project(std::move(p))}});
        }));

        server_.Post("/api/projects", wrap([this](const httplib::Request& req, httplib::Response& res) { create_project(req, res); }));

        server_.Get(R"(/api/projects/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            auto slot = require(id);
            auto p = current(*slot);
            nlohmann::json jobs = nlohmann::json::object();
            {
                std::lock_guard lock(slot->mu);
                for (const auto& [m, j] : slot->jobs) jobs[m] = status_name(j.status);
            }
            send_json(res, 200,
                      {{"project_id", id},
                       {"n_sentences", p->corpus.size()},
                       {"n_pairs", p->corpus.pairs().size()},
                       {"categories", p->corpus.categories()},
                       {"columns", p->corpus.columns()},
                       {"models", p->scores.model_ids()},
                       {"jobs", jobs},
                       {"n_probes", p->probes.size()},
                       {"view_settings", view_to_json(p->view)}});
        }));

        server_.Post(R"(/api/projects/([^/]+)/models)", wrap([this](const httplib::Request& req, httplib::Response& res) { start_scoring(req, res); }));

        server_.Get(R"(/api/projects/([^/]+)/models)", wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto slot = require(req.matches[1]);
            nlohmann::json out = nlohmann::json::array();
            std::lock_guard lock(slot->mu);
            for (const auto& m : slot->registration) {
                auto it = slot->jobs.find(m);
                out.push_back({{"model_id", m}, {"status", it == slot->jobs.end() ? "done" : status_name(it->second.status)}});
            }
            send_json(res, 200, {{"models", out}});
        }));

        server_.Get(R"(/api/projects/([^/]+)/models/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto slot = require(req.matches[1]);
            const std::string model_id = req.matches[2];
            auto p = current(*slot);
            std::lock_guard lock(slot->mu);
            auto it = slot->jobs.find(model_id);
            if (it == slot->jobs.end()) {
                if (!p->scores.has_model(model_id)) throw ApiError{404, "not_found", "no model " + model_id + " in this project"};
                send_json(res, 200, {{"model_id", model_id}, {"status", "done"}, {"n_scores", p->scores.model(model_id)->scores().size()}});
                return;
            }
            const auto& job = it->second;
            if (job.status == JobStatus::failed) {
                throw ApiError{502, "provider_failure", job.message,
                               {{"model_id", model_id}, {"status", "failed"}, {"completed", job.completed}, {"failed", job.failed}}};
            }
            nlohmann::json body{{"model_id", model_id}, {"status", status_name(job.status)}};
            if (const auto* m = p->scores.model(model_id)) body["n_scores"] = m->scores().size();
            send_json(res, 200, body);
        }));

        server_.Get(R"(/api/projects/([^/]+)/distributions)", wrap([this](const httplib::Request& req, httplib::Response& res) { distributions(req, res); }));

        server_.Post(R"(/api/projects/([^/]+)/filters)", wrap([this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            auto slot = require(id);
            const auto body = parse_body(req);
            FilterSet filters;
            try {
                filters = filters_from_json(body);
            } catch (const nlohmann::json::exception& e) {
                throw ApiError{422, "invalid_filters", e.what()};
            } catch (const InvalidArgument& e) {
                throw ApiError{422, "invalid_filters", e.what()};
            }
            std::lock_guard write(slot->write_mu);
            auto p = current(*slot);
            if (filters.category_filter) {
                for (const auto& c : *filters.category_filter) {
                    if (!p->corpus.has_category(c)) throw ApiError{422, "invalid_filters", "unknown category " + c};
                }
            }
            Selection sel;
            try {
                sel = apply_filters(*p, filters);
            } catch (const InvalidArgument& e) {
                throw ApiError{422, "invalid_filters", e.what()};
            }
            auto next = std::make_shared<Project>(*p);
            next->filters = std::move(filters);
            publish(id, *slot, std::move(next));
            send_json(res, 200, selection_json(sel));
        }));

        server_.Get(R"(/api/projects/([^/]+)/filters)", wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto p = current(*require(req.matches[1]));
            send_json(res, 200, filters_to_json(p->filters));
        }));

        server_.Get(R"(/api/projects/([^/]+)/selection)", wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto p = current(*require(req.matches[1]));
            send_json(res, 200, selection_json(apply_filters(*p, p->filters)));
        }));

        server_.Get(R"(/api/projects/([^/]+)/sentences)", wrap([this](const httplib::Request& req, httplib::Response& res) { sentences(req, res); }));

        server_.Post(R"(/api/projects/([^/]+)/embedding)", wrap([this](const httplib::Request& req, httplib::Response& res) { embed(req, res); }));

        server_.Get(R"(/api/projects/([^/]+)/embedding)", wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto p = current(*require(req.matches[1]));
            const Embedding* e = req.has_param("method") ? p->embedding(req.get_param_value("method")) : p->active_embedding();
            if (!e) throw ApiError{404, "not_found", "no embedding available"};
            send_json(res, 200, embedding_to_json(*e));
        }));

        server_.Put(R"(/api/projects/([^/]+)/view)", wrap([this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            auto slot = require(id);
            const auto body = parse_body(req);
            std::lock_guard write(slot->write_mu);
            auto next = std::make_shared<Project>(*current(*slot));
            auto& v = next->view;
            if (body.contains("highlight_categories")) v.highlight_categories = body["highlight_categories"].get<std::vector<std::string>>();
            if (body.contains("split")) v.split = body["split"].get<bool>();
            if (body.contains("visible_columns")) v.visible_columns = body["visible_columns"].get<std::vector<std::string>>();
            if (body.contains("active_embedding")) {
                v.active_embedding = body["active_embedding"].is_null() ? std::nullopt : std::optional(body["active_embedding"].get<std::string>());
            }
            auto problems = check_project(*next);
            if (!problems.empty()) throw ApiError{422, "invalid_view", "view settings do not match the project", problems};
            publish(id, *slot, next);
            send_json(res, 200, view_to_json(next->view));
        }));

        server_.Post(R"(/api/projects/([^/]+)/probes)", wrap([this](const httplib::Request& req, httplib::Response& res) { probe(req, res); }));

        server_.Delete(R"(/api/projects/([^/]+)/probes/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            auto slot = require(id);
            std::lock_guard write(slot->write_mu);
            auto next = std::make_shared<Project>(*current(*slot));
            if (!remove_probe(*next, std::string(req.matches[2]))) throw ApiError{404, "not_found", "no probe " + std::string(req.matches[2])};
            publish(id, *slot, next);
            res.status = 204;
        }));

        server_.Get(R"(/api/projects/([^/]+)/export)", wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto p = current(*require(req.matches[1]));
            const bool gz = req.has_param("gzip") && req.get_param_value("gzip") != "0";
            res.status = 200;
            res.set_content(save_project(*p, gz), gz ? "application/gzip" : "application/json");
        }));
    }

    void add_cors(const httplib::Request& req, httplib::Response& res) const {
        if (config_.cors_origins.empty() || !req.has_header("Origin")) return;
        const auto origin = req.get_header_value("Origin");
        for (const auto& allowed : config_.cors_origins) {
            if (allowed == "*" || allowed == origin) {
                res.set_header("Access-Control-Allow-Origin", allowed == "*" ? "*" : origin);
                res.set_header("Vary", "Origin");
                return;
            }
        }
    }

    static nlohmann::json selection_json(const Selection& sel) {
        return {{"ids", sel.ids}, {"provenance", sel.provenance}, {"count", sel.ids.size()}};
    }

    void create_project(const httplib::Request& req, httplib::Response& res) {
        std::string content;
        std::string format_name;
        std::string filename;
        if (req.is_multipart_form_data()) {
            const char* field = req.has_file("dataset") ? "dataset" : (req.has_file("file") ? "file" : nullptr);
            if (!field) throw ApiError{422, "invalid_dataset", "multipart body needs a 'dataset' file part"};
            const auto part = req.get_file_value(field);
            content = part.content;
            filename = part.filename;
            if (req.has_file("format")) format_name = req.get_file_value("format").content;
        } else {
            content = req.body;
        }
        if (format_name.empty() && req.has_param("format")) format_name = req.get_param_value("format");
        DatasetFormat format = format_for_path(filename);
        if (!format_name.empty()) {
            auto f = parse_format(format_name);
            if (!f) throw ApiError{422, "invalid_dataset", "unknown dataset format '" + format_name + "'"};
            format = *f;
        }

        Project p;
        try {
            p.corpus = parse_dataset(content, format);
        } catch (const ParseError& e) {
            throw ApiError{422, "invalid_dataset", e.what(), {{"line", e.line()}, {"field", e.field()}}};
        }
        if (p.corpus.empty()) throw ApiError{422, "invalid_dataset", "dataset has no rows"};
        const auto diagnostics = validate(p.corpus);
        if (has_errors(diagnostics)) {
            nlohmann::json details = nlohmann::json::array();
            for (const auto& d : diagnostics) details.push_back({{"record_id", d.record_id}, {"message", d.message}});
            throw ApiError{422, "invalid_dataset", "dataset failed validation", {{"diagnostics", details}}};
        }
        send_json(res, 201, {{"project_id", add_project(std::move(p))}});
    }

    std::shared_ptr<const ScoreProvider> make_provider(const ProviderSpec& spec, const Project& p, const std::string& model_id) const {
        switch (spec.kind) {
        case ProviderSpec::Kind::builtin:
            return make_builtin_provider(p.corpus.texts(), spec.alpha);
        case ProviderSpec::Kind::remote: {
            RemoteConfig rc = config_.remote_defaults;
            rc.endpoint = spec.endpoint;
            return std::make_shared<RemoteScorer>(rc, spec.remote_model.empty() ? model_id : spec.remote_model);
        }
        case ProviderSpec::Kind::imported:
            return nullptr;
        }
        return nullptr;
    }

    void start_scoring(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        auto slot = require(id);
        const auto body = parse_body(req);
        if (!body.is_object() || !body.contains("model_id") || !body["model_id"].is_string() || body["model_id"].get<std::string>().empty()) {
            throw ApiError{422, "invalid_request", "body needs a non-empty model_id"};
        }
        const auto model_id = body["model_id"].get<std::string>();
        const auto kind = body.value("provider", std::string("builtin"));

        ProviderSpec spec;
        spec.exclude_punctuation = body.value("exclude_punctuation", false);
        if (kind == "builtin") {
            spec.kind = ProviderSpec::Kind::builtin;
            spec.alpha = body.value("alpha", 1.0);
            if (!(spec.alpha > 0)) throw ApiError{422, "invalid_request", "alpha must be positive"};
        } else if (kind == "remote") {
            spec.kind = ProviderSpec::Kind::remote;
            spec.endpoint = body.value("endpoint", config_.remote_defaults.endpoint);
            spec.remote_model = body.value("remote_model", std::string{});
            if (spec.endpoint.empty()) throw ApiError{422, "invalid_request", "remote provider needs an endpoint"};
        } else {
            throw ApiError{422, "invalid_request", "provider must be 'builtin' or 'remote'"};
        }

        std::shared_ptr<const ScoreProvider> provider;
        try {
            provider = make_provider(spec, *current(*slot), model_id);
        } catch (const InvalidArgument& e) {
            throw ApiError{422, "invalid_request", e.what()};
        }

        {
            std::lock_guard lock(slot->mu);
            auto it = slot->jobs.find(model_id);
            const bool busy = it != slot->jobs.end() && it->second.status != JobStatus::failed;
            if (busy || slot->current->scores.has_model(model_id)) throw ApiError{409, "duplicate_model", "model " + model_id + " is already registered"};
            slot->jobs[model_id] = Job{};
            slot->registration.erase(std::remove(slot->registration.begin(), slot->registration.end(), model_id), slot->registration.end());
            slot->registration.push_back(model_id);
        }

        pool_.submit([this, id, slot, model_id, spec, provider] { run_job(id, slot, model_id, spec, provider); });
        send_json(res, 202, {{"model_id", model_id}, {"status", "queued"}});
    }

    void run_job(const std::string& id, const std::shared_ptr<Slot>& slot, const std::string& model_id, const ProviderSpec& spec,
                 const std::shared_ptr<const ScoreProvider>& provider) {
        auto set_status = [&](auto&& fn) {
            std::lock_guard lock(slot->mu);
            fn(slot->jobs[model_id]);
        };
        set_status([](Job& j) { j.status = JobStatus::running; });
        auto snap = current(*slot);

        CorpusScoringOptions opts;
        opts.score.exclude_punctuation = spec.exclude_punctuation;
        ModelScores fragment;
        try {
            fragment = score_corpus(*provider, snap->corpus, model_id, opts, spec);
        } catch (const ScoringError& e) {
            set_status([&](Job& j) {
                j.status = JobStatus::failed;
                j.message = e.what();
                j.completed = e.completed();
                j.failed = e.failed();
            });
            drop_registration(*slot, model_id);
            return;
        } catch (const std::exception& e) {
            set_status([&](Job& j) {
                j.status = JobStatus::failed;
                j.message = e.what();
            });
            drop_registration(*slot, model_id);
            return;
        }

        {
            std::lock_guard write(slot->write_mu);
            auto next = std::make_shared<Project>(*current(*slot));
            std::size_t position = 0;
            {
                std::lock_guard lock(slot->mu);
                const auto mine = std::find(slot->registration.begin(), slot->registration.end(), model_id);
                for (const auto& existing : next->scores.model_ids()) {
                    if (std::find(slot->registration.begin(), mine, existing) != mine) ++position;
                }
                slot->providers[model_id] = provider;
            }
            next->scores.add_model(std::move(fragment), position);
            publish(id, *slot, next);
        }
        set_status([](Job& j) { j.status = JobStatus::done; });
    }

    static void drop_registration(Slot& slot, const std::string& model_id) {
        std::lock_guard lock(slot.mu);
        slot.registration.erase(std::remove(slot.registration.begin(), slot.registration.end(), model_id), slot.registration.end());
    }

    void distributions(const httplib::Request& req, httplib::Response& res) {
        auto p = current(*require(req.matches[1]));
        std::vector<const ModelScores*> complete;
        for (const auto& m : p->scores.models()) {
            if (!m.partial()) complete.push_back(&m);
        }
        if (complete.empty()) throw ApiError{409, "no_scores", "project has no scored models"};

        std::vector<std::string> highlight;
        if (req.has_param("highlight")) highlight = detail::split_csv_param(req.get_param_value("highlight"));
        for (const auto& c : highlight) {
            if (!p->corpus.has_category(c)) throw ApiError{404, "unknown_category", "unknown category " + c, {{"category", c}}};
        }
        bool split = false;
        if (req.has_param("split")) {
            const auto s = req.get_param_value("split");
            if (s == "group") split = true;
            else if (!s.empty() && s != "none") throw ApiError{422, "invalid_request", "split must be 'group' or 'none'"};
        }
        std::size_t grid = 256;
        if (req.has_param("grid")) grid = std::stoul(req.get_param_value("grid"));

        nlohmann::json axes = nlohmann::json::array();
        nlohmann::json summaries = nlohmann::json::array();
        for (const auto* m : complete) {
            axes.push_back(m->model_id());
            summaries.push_back(distribution_json(distribution_summary(*m, p->corpus, grid)));
        }
        nlohmann::json bands = nlohmann::json::array();
        nlohmann::json diagnostics = nlohmann::json::array();
        if (!highlight.empty()) {
            auto result = category_bands(p->scores, p->corpus, highlight, split);
            for (const auto& b : result.bands) bands.push_back(band_json(b));
            diagnostics = result.diagnostics;
        }
        send_json(res, 200, {{"axes", axes}, {"summaries", summaries}, {"bands", bands}, {"diagnostics", diagnostics}});
    }

    void sentences(const httplib::Request& req, httplib::Response& res) {
        auto p = current(*require(req.matches[1]));
        const auto which = req.has_param("selection") ? req.get_param_value("selection") : std::string("current");
        if (which != "current" && which != "all") throw ApiError{422, "invalid_request", "selection must be 'current' or 'all'"};

        std::vector<std::string> columns;
        if (req.has_param("columns")) columns = detail::split_csv_param(req.get_param_value("columns"));
        else if (!p->view.visible_columns.empty()) columns = p->view.visible_columns;
        else {
            columns = {"text", "pair_id", "group", "category"};
            columns.insert(columns.end(), p->corpus.columns().begin(), p->corpus.columns().end());
        }
        const auto std_cols = standard_columns();
        for (const auto& c : columns) {
            const bool known = std::find(std_cols.begin(), std_cols.end(), c) != std_cols.end() ||
                               std::find(p->corpus.columns().begin(), p->corpus.columns().end(), c) != p->corpus.columns().end();
            if (!known) throw ApiError{422, "invalid_request", "unknown column " + c};
        }

        const auto ids = which == "all" ? apply_filters(*p, FilterSet{}).ids : apply_filters(*p, p->filters).ids;
        const auto models = p->scores.model_ids();
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& sid : ids) {
            nlohmann::json row{{"id", sid}};
            nlohmann::json scores = nlohmann::json::object();
            if (const auto* r = p->corpus.find(sid)) {
                row["probe"] = false;
                for (const auto& c : columns) {
                    if (c == "id") row[c] = r->id;
                    else if (c == "pair_id") row[c] = r->pair_id;
                    else if (c == "group") row[c] = to_string(r->group);
                    else if (c == "category") row[c] = r->category;
                    else if (c == "text") row[c] = r->text;
                    else if (c == "paraphrase_of") row[c] = r->paraphrase_of ? nlohmann::json(*r->paraphrase_of) : nlohmann::json(nullptr);
                    else if (const auto* v = r->extra_value(c)) row[c] = *v;
                    else row[c] = nullptr;
                }
                for (const auto& m : models) {
                    if (auto v = p->scores.pll(sid, m)) scores[m] = *v;
                }
            } else if (const auto* pr = p->probe(sid)) {
                row["probe"] = true;
                for (const auto& c : columns) row[c] = c == "text" ? nlohmann::json(pr->text) : (c == "id" ? nlohmann::json(sid) : nlohmann::json(nullptr));
                for (const auto& s : pr->scores) scores[s.model_id] = s.pll;
            }
            row["scores"] = scores;
            rows.push_back(std::move(row));
        }
        send_json(res, 200, {{"models", models}, {"columns", columns}, {"rows", rows}, {"count", ids.size()}});
    }

    void embed(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        auto slot = require(id);
        const auto body = parse_body(req);
        const auto method_name = body.value("method", std::string("pca"));
        const auto method = parse_embedding_method(method_name);
        if (!method) throw ApiError{422, "invalid_request", "unknown embedding method '" + method_name + "'"};

        std::lock_guard write(slot->write_mu);
        auto p = current(*slot);
        Embedding e;
        if (*method == EmbeddingMethod::user) {
            try {
                e = embedding_from_json(body);
            } catch (const Error& err) {
                throw ApiError{422, "invalid_embedding", err.what()};
            }
            e.method = EmbeddingMethod::user;
            std::set<std::string> given(e.ids.begin(), e.ids.end());
            std::set<std::string> expected;
            for (const auto& r : p->corpus.records()) expected.insert(r.id);
            if (given.size() != e.ids.size() || given != expected) {
                std::vector<std::string> missing, unknown;
                std::set_difference(expected.begin(), expected.end(), given.begin(), given.end(), std::back_inserter(missing));
                std::set_difference(given.begin(), given.end(), expected.begin(), expected.end(), std::back_inserter(unknown));
                throw ApiError{422, "invalid_embedding", "embedding ids must match the corpus ids exactly",
                               {{"missing", missing}, {"unknown", unknown}}};
            }
        } else {
            const auto params = body.value("params", nlohmann::json::object());
            FeatureMatrix features;
            try {
                features = features_from_scores(p->scores, p->corpus, params.value("standardize", false));
            } catch (const MissingScoresError& err) {
                throw ApiError{409, "no_scores", err.what()};
            }
            try {
                if (*method == EmbeddingMethod::pca) {
                    e = pca_2d(features);
                } else {
                    e = tsne_2d(features, tsne_params_from_json(params));
                }
            } catch (const InvalidArgument& err) {
                throw ApiError{422, "invalid_embedding", err.what()};
            }
            e.params["standardize"] = params.value("standardize", false);
        }
        auto next = std::make_shared<Project>(*p);
        next->set_embedding(e);
        publish(id, *slot, next);
        send_json(res, 200, embedding_to_json(e));
    }

    void probe(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        auto slot = require(id);
        const auto body = parse_body(req);
        if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) throw ApiError{422, "invalid_request", "body needs text"};
        const auto text = body["text"].get<std::string>();

        std::lock_guard write(slot->write_mu);
        auto p = current(*slot);
        if (p->scores.empty()) throw ApiError{409, "no_scores", "project has no scored models"};
        ProviderSet providers;
        for (const auto& m : p->scores.models()) {
            std::shared_ptr<const ScoreProvider> provider;
            {
                std::lock_guard lock(slot->mu);
                if (auto it = slot->providers.find(m.model_id()); it != slot->providers.end()) provider = it->second;
            }
            if (!provider) {
                provider = make_provider(m.provider(), *p, m.model_id());
                if (provider) {
                    std::lock_guard lock(slot->mu);
                    slot->providers[m.model_id()] = provider;
                }
            }
            if (provider) providers[m.model_id()] = provider;
        }
        auto next = std::make_shared<Project>(*p);
        ProbeSentence probe;
        try {
            probe = add_probe(*next, text, providers);
        } catch (const ProviderError& e) {
            throw ApiError{502, "provider_failure", e.what()};
        }
        publish(id, *slot, next);
        send_json(res, 201, probe_to_json(probe));
    }

    ServiceConfig config_;
    httplib::Server server_;
    mutable std::shared_mutex projects_mu_;
    std::map<std::string, std::shared_ptr<Slot>> projects_;
    std::size_t next_id_ = 0;
    detail::WorkerPool pool_;
};

} // namespace biaslens
