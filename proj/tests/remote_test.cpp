#include "support.hpp"

#include <gtest/gtest.h>

using namespace biaslens;
using namespace testsupport;

namespace {

RemoteConfig config_for(const MockScorer& mock) {
    RemoteConfig c;
    c.endpoint = mock.endpoint();
    c.timeout = std::chrono::milliseconds(2000);
    c.backoff = std::chrono::milliseconds(1);
    return c;
}

MockScorer::Handler fixed(nlohmann::json results, int status = 200) {
    return [results = std::move(results), status](const nlohmann::json&, httplib::Response& res) {
        res.status = status;
        res.set_content(nlohmann::json{{"results", results}}.dump(), "application/json");
    };
}

} // namespace

TEST(RemoteScore, PllIsMeanOfServedLogProbs) {
    MockScorer mock(fixed(nlohmann::json::array({{{"tokens", {"a", "b", "c"}}, {"log_probs", {-1.0, -2.0, -3.0}}}})));
    auto scores = remote_score(config_for(mock), "m", {"a b c"});
    ASSERT_EQ(scores.size(), 1u);
    EXPECT_DOUBLE_EQ(scores[0].pll, -2.0);
    EXPECT_EQ(scores[0].model_id, "m");
    auto req = mock.requests().at(0);
    EXPECT_EQ(req["model"], "m");
    EXPECT_EQ(req["sentences"], nlohmann::json::array({"a b c"}));
}

TEST(RemoteScore, LengthMismatchIsProtocolError) {
    MockScorer mock(fixed(nlohmann::json::array({{{"tokens", {"a", "b", "c"}}, {"log_probs", {-1.0, -2.0}}}})));
    try {
        remote_score(config_for(mock), "m", {"the sentence"});
        FAIL() << "expected ProtocolError";
    } catch (const ProtocolError& e) {
        EXPECT_EQ(e.sentence(), "the sentence");
    }
}

TEST(RemoteScore, MalformedResponsesNeverYieldScores) {
    const std::vector<nlohmann::json> bad_results{
        nlohmann::json::array({{{"tokens", {"a"}}, {"log_probs", {0.5}}}}),        // positive
        nlohmann::json::array({{{"tokens", {}}, {"log_probs", {}}}}),              // empty
        nlohmann::json::array({{{"tokens", {"a"}}}}),                              // missing log_probs
        nlohmann::json::array({{{"tokens", {1}}, {"log_probs", {-1.0}}}}),         // non-string token
        nlohmann::json::array({{{"tokens", {"a"}}, {"log_probs", {"x"}}}}),        // non-numeric
        nlohmann::json::array(),                                                   // too few results
        nlohmann::json::array({{{"tokens", {"a"}}, {"log_probs", {-1.0}}},
                               {{"tokens", {"b"}}, {"log_probs", {-1.0}}}}),      // too many results
    };
    for (const auto& results : bad_results) {
        MockScorer mock(fixed(results));
        EXPECT_THROW(remote_score(config_for(mock), "m", {"one"}), ProtocolError) << results.dump();
    }
    MockScorer garbage([](const nlohmann::json&, httplib::Response& res) { res.set_content("not json", "text/plain"); });
    EXPECT_THROW(remote_score(config_for(garbage), "m", {"one"}), ProtocolError);
}

TEST(RemoteScore, BatchingPreservesOrder) {
    MockScorer mock(MockScorer::echo());
    std::vector<std::string> texts;
    for (int i = 0; i < 100; ++i) texts.push_back("sentence number " + std::to_string(i) + std::string(static_cast<std::size_t>(i % 7), 'x'));
    auto cfg = config_for(mock);
    cfg.batch_size = 16;
    auto scores = remote_score(cfg, "m", texts);
    EXPECT_EQ(mock.request_count(), 7u);
    ASSERT_EQ(scores.size(), texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const auto oracle = MockScorer::echo_result(texts[i]);
        double sum = 0;
        for (double v : oracle["log_probs"]) sum += v;
        EXPECT_DOUBLE_EQ(scores[i].pll, sum / static_cast<double>(oracle["log_probs"].size()));
    }
    // idempotent against a deterministic server
    auto again = remote_score(cfg, "m", texts);
    for (std::size_t i = 0; i < texts.size(); ++i) EXPECT_EQ(again[i].pll, scores[i].pll);
}

TEST(RemoteScore, RetriesServerErrorsThenSucceeds) {
    std::atomic<int> calls{0};
    MockScorer mock([&calls](const nlohmann::json& req, httplib::Response& res) {
        if (calls++ < 2) {
            res.status = 503;
            return;
        }
        MockScorer::echo()(req, res);
    });
    auto cfg = config_for(mock);
    cfg.retries = 2;
    auto scores = remote_score(cfg, "m", {"a b"});
    EXPECT_EQ(calls.load(), 3);
    EXPECT_EQ(scores.size(), 1u);
}

TEST(RemoteScore, GivesUpAfterRetriesNamingEndpoint) {
    std::atomic<int> calls{0};
    MockScorer mock([&calls](const nlohmann::json&, httplib::Response& res) {
        ++calls;
        res.status = 500;
    });
    auto cfg = config_for(mock);
    cfg.retries = 1;
    try {
        remote_score(cfg, "m", {"a"});
        FAIL() << "expected TransportError";
    } catch (const TransportError& e) {
        EXPECT_EQ(e.endpoint(), mock.endpoint());
        EXPECT_NE(std::string(e.what()).find(mock.endpoint()), std::string::npos);
    }
    EXPECT_EQ(calls.load(), 2);
}

TEST(RemoteScore, ClientErrorsAreNotRetried) {
    std::atomic<int> calls{0};
    MockScorer mock([&calls](const nlohmann::json&, httplib::Response& res) {
        ++calls;
        res.status = 400;
    });
    EXPECT_THROW(remote_score(config_for(mock), "m", {"a"}), TransportError);
    EXPECT_EQ(calls.load(), 1);
}

TEST(RemoteScore, UnreachableEndpoint) {
    RemoteConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(unused_port());
    cfg.retries = 1;
    cfg.backoff = std::chrono::milliseconds(1);
    cfg.timeout = std::chrono::milliseconds(500);
    EXPECT_THROW(remote_score(cfg, "m", {"a"}), TransportError);
}

TEST(RemoteScore, EndpointPrefixAndValidation) {
    httplib::Server server;
    server.Post("/scorer/v1/token-logprobs", [](const httplib::Request& req, httplib::Response& res) {
        MockScorer::echo()(nlohmann::json::parse(req.body), res);
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    RemoteConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/scorer/";
    EXPECT_EQ(remote_score(cfg, "m", {"x y"}).size(), 1u);
    server.stop();
    t.join();

    cfg.endpoint = "ftp://example.com";
    EXPECT_THROW(remote_score(cfg, "m", {"a"}), InvalidArgument);
    cfg.endpoint = "http://127.0.0.1:1";
    EXPECT_THROW(remote_score(cfg, "m", {}), InvalidArgument);
}

TEST(RemoteScore, CorpusScoringIsAllOrNothing) {
    // the second batch is malformed: no model fragment may come out
    std::atomic<int> calls{0};
    MockScorer mock([&calls](const nlohmann::json& req, httplib::Response& res) {
        if (calls++ == 1) {
            res.set_content(R"({"results":[{"tokens":["a"],"log_probs":[1.0]}]})", "application/json");
            return;
        }
        MockScorer::echo()(req, res);
    });
    std::vector<SentenceRecord> records;
    for (int i = 0; i < 6; ++i) {
        records.push_back(rec("s" + std::to_string(i), "p" + std::to_string(i / 2), i % 2 ? Group::stereotype : Group::base, "c",
                              "sentence " + std::to_string(i)));
    }
    auto corpus = Corpus::from_records(records);
    auto cfg = config_for(mock);
    cfg.batch_size = 2;
    RemoteScorer scorer(cfg, "m");
    try {
        score_corpus(scorer, corpus, "m");
        FAIL() << "expected ScoringError";
    } catch (const ScoringError& e) {
        EXPECT_EQ(e.failed(), (std::vector<std::string>{"s2", "s3"}));
        EXPECT_EQ(e.completed(), (std::vector<std::string>{"s0", "s1", "s4", "s5"}));
    }
}
