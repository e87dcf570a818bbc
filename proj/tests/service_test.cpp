#include "support.hpp"

#include <gtest/gtest.h>

using namespace biaslens;
using namespace testsupport;
using nlohmann::json;

namespace {

const char* small_jsonl = R"({"id":"a1","pair_id":"a","group":"base","category":"age","text":"the old man sat"}
{"id":"a2","pair_id":"a","group":"stereotype","category":"age","text":"the old man forgot"}
{"id":"b1","pair_id":"b","group":"base","category":"gender","text":"the woman sat"}
{"id":"b2","pair_id":"b","group":"stereotype","category":"gender","text":"the woman cried"}
{"id":"c1","pair_id":"c","group":"base","category":"age","text":"the young man sat"}
{"id":"c2","pair_id":"c","group":"stereotype","category":"age","text":"the young man ran"}
{"id":"d1","pair_id":"d","group":"base","category":"gender","text":"the man sat"}
{"id":"d2","pair_id":"d","group":"stereotype","category":"gender","text":"the man shouted"}
)";

class ServiceFixture : public ::testing::Test {
protected:
    void start(ServiceConfig cfg = {}) {
        service = std::make_unique<Service>(std::move(cfg));
        port = service->bind_any_port();
        ASSERT_GT(port, 0);
        thread = std::thread([this] { service->listen(); });
        service->wait_until_ready();
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
        client->set_read_timeout(30, 0);
    }

    void TearDown() override {
        if (service) service->stop();
        if (thread.joinable()) thread.join();
    }

    std::pair<int, json> post(const std::string& path, const json& body) {
        auto r = client->Post(path, body.dump(), "application/json");
        return {r->status, r->body.empty() ? json() : json::parse(r->body)};
    }

    std::pair<int, json> get(const std::string& path) {
        auto r = client->Get(path);
        return {r->status, r->body.empty() ? json() : json::parse(r->body)};
    }

    std::string create_small() {
        auto r = client->Post("/api/projects?format=jsonl", small_jsonl, "application/x-ndjson");
        EXPECT_EQ(r->status, 201);
        return json::parse(r->body)["project_id"];
    }

    json wait_model(const std::string& pid, const std::string& mid) {
        service->wait_idle();
        return get("/api/projects/" + pid + "/models/" + mid).second;
    }

    std::unique_ptr<Service> service;
    std::unique_ptr<httplib::Client> client;
    std::thread thread;
    int port = 0;
};

} // namespace

TEST_F(ServiceFixture, HealthAndEmptyList) {
    start();
    auto [s, b] = get("/api/health");
    EXPECT_EQ(s, 200);
    auto [s2, b2] = get("/api/projects");
    EXPECT_EQ(s2, 200);
    EXPECT_TRUE(b2["projects"].empty());
    EXPECT_EQ(get("/api/projects/nope").first, 404);
}

TEST_F(ServiceFixture, CreateFromMultipartAndRawBody) {
    start();
    httplib::MultipartFormDataItems items{{"dataset", demo::corpus_jsonl.data(), "corpus.jsonl", "application/x-ndjson"}};
    auto r = client->Post("/api/projects", items);
    ASSERT_EQ(r->status, 201);
    const std::string pid = json::parse(r->body)["project_id"];
    auto [s, summary] = get("/api/projects/" + pid);
    EXPECT_EQ(s, 200);
    EXPECT_EQ(summary["n_sentences"], 29);
    EXPECT_EQ(summary["n_pairs"], 13);
    EXPECT_EQ(summary["categories"], json(demo::corpus().categories()));
    EXPECT_TRUE(summary["models"].empty());

    EXPECT_EQ(create_small(), "p2");
}

TEST_F(ServiceFixture, InvalidDatasetsNamedPrecisely) {
    start();
    const std::string dup = std::string(small_jsonl) + R"({"id":"a1","pair_id":"z","group":"base","category":"age","text":"again"})" + "\n";
    auto r = client->Post("/api/projects?format=jsonl", dup, "application/x-ndjson");
    ASSERT_EQ(r->status, 422);
    auto body = json::parse(r->body);
    EXPECT_EQ(body["code"], "invalid_dataset");
    EXPECT_EQ(body["details"]["line"], 9);
    EXPECT_EQ(body["details"]["field"], "id");

    // a pair without its base side fails validation
    auto r2 = client->Post("/api/projects?format=jsonl", R"({"id":"x","pair_id":"p","group":"stereotype","category":"c","text":"t"})", "application/x-ndjson");
    ASSERT_EQ(r2->status, 422);
    EXPECT_FALSE(json::parse(r2->body)["details"]["diagnostics"].empty());

    auto r3 = client->Post("/api/projects?format=xml", small_jsonl, "text/plain");
    EXPECT_EQ(r3->status, 422);
    EXPECT_EQ(get("/api/projects").second["projects"].size(), 0u);
}

TEST_F(ServiceFixture, BuiltinScoringMatchesEngine) {
    start();
    const auto pid = create_small();
    auto [s, b] = post("/api/projects/" + pid + "/models", {{"model_id", "ng"}, {"provider", "builtin"}});
    EXPECT_EQ(s, 202);
    EXPECT_EQ(b["status"], "queued");
    auto status = wait_model(pid, "ng");
    EXPECT_EQ(status["status"], "done");
    EXPECT_EQ(status["n_scores"], 8);

    const auto corpus = parse_dataset(small_jsonl, DatasetFormat::jsonl);
    auto oracle = score_corpus(*make_builtin_provider(corpus.texts(), 1.0), corpus, "ng");
    auto snap = service->snapshot(pid);
    EXPECT_EQ(snap->scores.models().at(0).scores(), oracle.scores());

    EXPECT_EQ(post("/api/projects/" + pid + "/models", {{"model_id", "ng"}}).first, 409);
    EXPECT_EQ(post("/api/projects/" + pid + "/models", {{"model_id", "x"}, {"provider", "magic"}}).first, 422);
    EXPECT_EQ(post("/api/projects/" + pid + "/models", {{"model_id", "x"}, {"alpha", -1}}).first, 422);
    EXPECT_EQ(post("/api/projects/" + pid + "/models", {{"model_id", "x"}, {"provider", "remote"}}).first, 422);
}

TEST_F(ServiceFixture, AxesFollowRegistrationOrder) {
    start();
    const auto pid = create_small();
    for (const char* m : {"zeta", "alpha", "mid"}) {
        EXPECT_EQ(post("/api/projects/" + pid + "/models", {{"model_id", m}, {"alpha", 0.5}}).first, 202);
    }
    service->wait_idle();
    auto [s, d] = get("/api/projects/" + pid + "/distributions");
    ASSERT_EQ(s, 200);
    EXPECT_EQ(d["axes"], json({"zeta", "alpha", "mid"}));
    auto [s2, models] = get("/api/projects/" + pid + "/models");
    EXPECT_EQ(models["models"].size(), 3u);
}

TEST_F(ServiceFixture, RemoteFailureReportedAndNotRegistered) {
    start();
    const auto pid = create_small();
    const std::string endpoint = "http://127.0.0.1:" + std::to_string(unused_port());
    EXPECT_EQ(post("/api/projects/" + pid + "/models", {{"model_id", "r"}, {"provider", "remote"}, {"endpoint", endpoint}}).first, 202);
    service->wait_idle();
    auto [s, b] = get("/api/projects/" + pid + "/models/r");
    EXPECT_EQ(s, 502);
    EXPECT_EQ(b["code"], "provider_failure");
    EXPECT_EQ(b["details"]["failed"].size(), 8u);
    EXPECT_TRUE(service->snapshot(pid)->scores.empty());
    EXPECT_EQ(get("/api/projects/" + pid + "/distributions").first, 409);
}

TEST_F(ServiceFixture, RemoteScoringAgainstMock) {
    MockScorer mock(MockScorer::echo());
    start();
    const auto pid = create_small();
    EXPECT_EQ(post("/api/projects/" + pid + "/models", {{"model_id", "r"}, {"provider", "remote"}, {"endpoint", mock.endpoint()}}).first, 202);
    EXPECT_EQ(wait_model(pid, "r")["status"], "done");
    auto snap = service->snapshot(pid);
    for (const auto& r : snap->corpus.records()) {
        const auto oracle = MockScorer::echo_result(r.text);
        double sum = 0;
        for (double v : oracle["log_probs"]) sum += v;
        EXPECT_DOUBLE_EQ(*snap->scores.pll(r.id, "r"), sum / static_cast<double>(oracle["log_probs"].size()));
    }
}

TEST_F(ServiceFixture, DistributionsMatchEngine) {
    start();
    const auto pid = service->add_project(demo::project(), "demo");
    auto [s, d] = get("/api/projects/demo/distributions?highlight=disability&split=group");
    ASSERT_EQ(s, 200);
    const auto p = demo::project();
    EXPECT_EQ(d["axes"], json({"bert", "roberta", "albert"}));
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(d["summaries"][i], distribution_json(distribution_summary(p.scores.models()[i], p.corpus)));
    }
    auto bands = category_bands(p.scores, p.corpus, {"disability"}, true);
    ASSERT_EQ(d["bands"].size(), bands.bands.size());
    for (std::size_t i = 0; i < bands.bands.size(); ++i) EXPECT_EQ(d["bands"][i], band_json(bands.bands[i]));

    EXPECT_EQ(get("/api/projects/demo/distributions?highlight=sports").first, 404);
    EXPECT_EQ(get("/api/projects/demo/distributions?split=sideways").first, 422);
}

TEST_F(ServiceFixture, FiltersSelectionAndSentences) {
    start();
    service->add_project(demo::project(), "demo");
    const json filters{{"axis_filters", {{{"model_id", "albert"}, {"min", -5.0}, {"max", -4.0}}}}};
    auto [s, sel] = post("/api/projects/demo/filters", filters);
    ASSERT_EQ(s, 200);
    const auto p = demo::project();
    auto oracle = apply_filters(p, p.filters);
    EXPECT_EQ(sel["ids"], json(oracle.ids));
    EXPECT_EQ(sel["count"], oracle.ids.size());
    EXPECT_EQ(get("/api/projects/demo/selection").second, sel);

    auto [s2, table] = get("/api/projects/demo/sentences?columns=text,category");
    ASSERT_EQ(s2, 200);
    ASSERT_EQ(table["rows"].size(), oracle.ids.size());
    for (std::size_t i = 0; i < oracle.ids.size(); ++i) {
        const auto& row = table["rows"][i];
        EXPECT_EQ(row["id"], oracle.ids[i]);
        EXPECT_EQ(row["scores"]["albert"], *p.scores.pll(oracle.ids[i], "albert"));
    }
    EXPECT_EQ(get("/api/projects/demo/sentences?selection=all").second["count"], 29 + 2);
    EXPECT_EQ(get("/api/projects/demo/sentences?columns=shoe_size").first, 422);

    EXPECT_EQ(post("/api/projects/demo/filters", {{"axis_filters", {{{"model_id", "albert"}, {"min", -4.0}, {"max", -5.0}}}}}).first, 422);
    EXPECT_EQ(post("/api/projects/demo/filters", {{"axis_filters", {{{"model_id", "gpt"}, {"min", -5.0}, {"max", -4.0}}}}}).first, 422);
    EXPECT_EQ(post("/api/projects/demo/filters", {{"category_filter", {"sports"}}}).first, 422);
    // the rejected requests left the stored filters alone
    EXPECT_EQ(get("/api/projects/demo/filters").second, filters_to_json(p.filters));
}

TEST_F(ServiceFixture, EmbeddingsMatchEngine) {
    start();
    service->add_project(demo::project(), "demo");
    const auto p = demo::project();
    auto [s, e] = post("/api/projects/demo/embedding", {{"method", "pca"}});
    ASSERT_EQ(s, 200);
    auto oracle = pca_2d(features_from_scores(p.scores, p.corpus));
    auto got = embedding_from_json(e);
    EXPECT_EQ(got.ids, oracle.ids);
    EXPECT_EQ(got.points, oracle.points);
    EXPECT_EQ(embedding_from_json(get("/api/projects/demo/embedding").second).points, oracle.points);

    TsneParams params;
    params.seed = 3;
    params.iterations = 300;
    auto [s2, t] = post("/api/projects/demo/embedding", {{"method", "tsne"}, {"params", {{"seed", 3}, {"iterations", 300}}}});
    ASSERT_EQ(s2, 200);
    EXPECT_EQ(embedding_from_json(t).points, tsne_2d(features_from_scores(p.scores, p.corpus), params).points);

    json user{{"method", "user"}, {"ids", {"g1-s1"}}, {"points", {{0.0, 0.0}}}};
    auto [s3, err] = post("/api/projects/demo/embedding", user);
    EXPECT_EQ(s3, 422);
    EXPECT_EQ(err["code"], "invalid_embedding");
    EXPECT_EQ(err["details"]["missing"].size(), 28u);

    json full{{"method", "user"}, {"ids", json::array()}, {"points", json::array()}};
    for (const auto& r : p.corpus.records()) {
        full["ids"].push_back(r.id);
        full["points"].push_back({1.0, 2.0});
    }
    EXPECT_EQ(post("/api/projects/demo/embedding", full).first, 200);
    EXPECT_EQ(get("/api/projects/demo/embedding").second["method"], "user");
}

TEST_F(ServiceFixture, ProbesMatchEngineAndAreRepeatable) {
    start();
    const auto pid = create_small();
    post("/api/projects/" + pid + "/models", {{"model_id", "ng"}});
    service->wait_idle();
    auto [s1, p1] = post("/api/projects/" + pid + "/probes", {{"text", "the old woman sat"}});
    auto [s2, p2] = post("/api/projects/" + pid + "/probes", {{"text", "the old woman sat"}});
    ASSERT_EQ(s1, 201);
    ASSERT_EQ(s2, 201);
    EXPECT_NE(p1["id"], p2["id"]);
    EXPECT_EQ(p1["scores"], p2["scores"]);
    const auto corpus = parse_dataset(small_jsonl, DatasetFormat::jsonl);
    const auto model = NgramMaskedModel::train(corpus.texts());
    EXPECT_DOUBLE_EQ(p1["scores"][0]["pll"].get<double>(), pll_score(model, "the old woman sat").pll);

    auto r = client->Delete("/api/projects/" + pid + "/probes/" + p1["id"].get<std::string>());
    EXPECT_EQ(r->status, 204);
    EXPECT_EQ(client->Delete("/api/projects/" + pid + "/probes/probe:99")->status, 404);
    EXPECT_EQ(service->snapshot(pid)->probes.size(), 1u);
}

TEST_F(ServiceFixture, ProbeFailsAtomicallyWhenProviderDown) {
    start();
    const auto pid = create_small();
    EXPECT_EQ(post("/api/projects/" + pid + "/probes", {{"text", "x"}}).first, 409);

    service->add_project(demo::project(), "demo");
    // demo scores are imported: no live provider exists
    auto [s, b] = post("/api/projects/demo/probes", {{"text", "something new"}});
    EXPECT_EQ(s, 502);
    EXPECT_EQ(b["code"], "provider_failure");
    EXPECT_EQ(service->snapshot("demo")->probes.size(), 2u);

    MockScorer mock(MockScorer::echo());
    post("/api/projects/" + pid + "/models", {{"model_id", "ng"}});
    post("/api/projects/" + pid + "/models", {{"model_id", "r"}, {"provider", "remote"}, {"endpoint", mock.endpoint()}});
    service->wait_idle();
    EXPECT_EQ(post("/api/projects/" + pid + "/probes", {{"text", "ok"}}).first, 201);
    mock.stop();
    auto [s2, b2] = post("/api/projects/" + pid + "/probes", {{"text", "not ok"}});
    EXPECT_EQ(s2, 502);
    EXPECT_EQ(service->snapshot(pid)->probes.size(), 1u);
}

TEST_F(ServiceFixture, ExportImportRoundTrip) {
    start();
    service->add_project(demo::project(), "demo");
    auto r = client->Get("/api/projects/demo/export");
    ASSERT_EQ(r->status, 200);
    EXPECT_EQ(r->body, save_project(demo::project()));
    auto gz = client->Get("/api/projects/demo/export?gzip=1");
    EXPECT_TRUE(is_gzip(gz->body));

    auto imp = client->Post("/api/projects/import", gz->body, "application/gzip");
    ASSERT_EQ(imp->status, 201);
    const std::string pid = json::parse(imp->body)["project_id"];
    EXPECT_EQ(*service->snapshot(pid), demo::project());

    auto bad = client->Post("/api/projects/import", r->body.substr(0, r->body.size() / 2), "application/json");
    EXPECT_EQ(bad->status, 422);
    EXPECT_EQ(json::parse(bad->body)["code"], "invalid_project");
}

TEST_F(ServiceFixture, ReadsDoNotMutate) {
    start();
    service->add_project(demo::project(), "demo");
    const auto before = save_project(*service->snapshot("demo"));
    for (const char* path : {"/api/projects/demo", "/api/projects/demo/models", "/api/projects/demo/distributions?highlight=age",
                             "/api/projects/demo/filters", "/api/projects/demo/selection", "/api/projects/demo/sentences",
                             "/api/projects/demo/embedding", "/api/projects/demo/export"}) {
        EXPECT_EQ(client->Get(path)->status, 200) << path;
    }
    EXPECT_EQ(save_project(*service->snapshot("demo")), before);
}

TEST_F(ServiceFixture, ViewSettingsValidated) {
    start();
    service->add_project(demo::project(), "demo");
    auto r = client->Put("/api/projects/demo/view", json{{"highlight_categories", {"age"}}}.dump(), "application/json");
    ASSERT_EQ(r->status, 200);
    EXPECT_EQ(service->snapshot("demo")->view.highlight_categories, std::vector<std::string>{"age"});
    EXPECT_TRUE(service->snapshot("demo")->view.split);
    auto bad = client->Put("/api/projects/demo/view", json{{"visible_columns", {"nope"}}}.dump(), "application/json");
    EXPECT_EQ(bad->status, 422);
}

TEST_F(ServiceFixture, Cors) {
    ServiceConfig cfg;
    cfg.cors_origins = {"http://localhost:5173"};
    start(cfg);
    auto r = client->Get("/api/health", {{"Origin", "http://localhost:5173"}});
    EXPECT_EQ(r->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
    auto other = client->Get("/api/health", {{"Origin", "http://evil.example"}});
    EXPECT_FALSE(other->has_header("Access-Control-Allow-Origin"));
    auto pre = client->Options("/api/projects", {{"Origin", "http://localhost:5173"}, {"Access-Control-Request-Method", "POST"}});
    EXPECT_LT(pre->status, 300);
}

TEST_F(ServiceFixture, DataDirPersistence) {
    TempDir dir;
    ServiceConfig cfg;
    cfg.data_dir = dir.path();
    start(cfg);
    const auto pid = create_small();
    post("/api/projects/" + pid + "/models", {{"model_id", "ng"}});
    service->wait_idle();
    const auto saved = save_project(*service->snapshot(pid));
    service->stop();
    thread.join();

    start(cfg);
    auto [s, summary] = get("/api/projects/" + pid);
    ASSERT_EQ(s, 200);
    EXPECT_EQ(summary["models"], json({"ng"}));
    EXPECT_EQ(save_project(*service->snapshot(pid)), saved);
    EXPECT_EQ(create_small(), "p2");
}
