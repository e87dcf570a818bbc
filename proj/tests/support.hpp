#pragma once

// Shared fixtures and independent oracles for the test suites.

#include "biaslens/biaslens.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <sstream>
#include <thread>
#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>
#include <vector>

namespace testsupport {

using namespace biaslens;

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("biaslens-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline SentenceRecord rec(std::string id, std::string pair_id, Group g, std::string category, std::string text,
                          std::optional<std::string> paraphrase_of = std::nullopt) {
    return SentenceRecord{std::move(id), std::move(pair_id), g, std::move(category), std::move(text), std::move(paraphrase_of), {}};
}

inline const std::vector<std::string>& word_pool() {
    static const std::vector<std::string> words{"the", "a",    "cat",   "dog",  "man",   "woman", "sat",  "ran",  "on",   "mat",
                                                "old", "young", "poor", "rich", "nurse", "doctor", "is",  "was",  "very", "kind"};
    return words;
}

inline std::string random_sentence(std::mt19937_64& rng, std::size_t min_len = 1, std::size_t max_len = 8) {
    std::uniform_int_distribution<std::size_t> len(min_len, max_len);
    std::uniform_int_distribution<std::size_t> pick(0, word_pool().size() - 1);
    std::string s;
    const auto n = len(rng);
    for (std::size_t i = 0; i < n; ++i) {
        if (i) s += ' ';
        s += word_pool()[pick(rng)];
    }
    if (rng() % 3 == 0) s += '.';
    return s;
}

/// Random valid corpus: `n_pairs` pairs, each side with 1..max_side members
/// (extra members are paraphrases of the side's original).
inline Corpus random_corpus(std::mt19937_64& rng, std::size_t n_pairs, std::size_t max_side = 3,
                            const std::vector<std::string>& categories = {"gender", "age", "race-color", "disability"}) {
    std::vector<SentenceRecord> records;
    std::uniform_int_distribution<std::size_t> side(1, max_side);
    for (std::size_t p = 0; p < n_pairs; ++p) {
        const std::string pid = "p" + std::to_string(p);
        const auto& cat = categories[rng() % categories.size()];
        for (Group g : {Group::base, Group::stereotype}) {
            const std::string gtag = g == Group::base ? "b" : "s";
            const auto k = side(rng);
            const std::string root = pid + gtag + "0";
            for (std::size_t i = 0; i < k; ++i) {
                records.push_back(rec(pid + gtag + std::to_string(i), pid, g, cat, random_sentence(rng),
                                      i == 0 ? std::nullopt : std::optional<std::string>(root)));
            }
        }
    }
    return Corpus::from_records(std::move(records));
}

/// Random score matrix over `corpus` with values in [lo, hi].
inline ModelScores random_model(std::mt19937_64& rng, const Corpus& corpus, const std::string& model_id, double lo = -8.0,
                                double hi = -1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    ModelScores m(model_id, ProviderSpec{ProviderSpec::Kind::imported});
    for (const auto& r : corpus.records()) m.add(SentenceScore{r.id, model_id, u(rng), {}});
    return m;
}

inline ModelScores model_from_map(const std::string& model_id, const std::map<std::string, double>& plls) {
    ModelScores m(model_id, ProviderSpec{ProviderSpec::Kind::imported});
    for (const auto& [id, v] : plls) m.add(SentenceScore{id, model_id, v, {}});
    return m;
}

/**
 * Brute-force masked trigram probability: counts are re-derived by scanning
 * the padded training sequences, without any of the model's tables.
 */
inline double brute_force_masked_log_prob(const std::vector<std::string>& training, const std::vector<std::string>& tokens,
                                          std::size_t pos, double alpha) {
    std::vector<std::vector<std::string>> padded;
    std::set<std::string> vocab;
    for (const auto& t : training) {
        std::vector<std::string> seq{"<s>"};
        for (const auto& tok : tokenize(t).tokens) {
            seq.push_back(tok);
            vocab.insert(tok);
        }
        seq.push_back("</s>");
        padded.push_back(std::move(seq));
    }
    const double V = static_cast<double>(vocab.size() + 1);
    auto known = [&](const std::string& t) { return vocab.count(t) ? t : std::string("<unk>"); };
    const std::string left = pos == 0 ? "<s>" : known(tokens[pos - 1]);
    const std::string right = pos + 1 == tokens.size() ? "</s>" : known(tokens[pos + 1]);
    const std::string mid = known(tokens[pos]);
    double c3 = 0, c2 = 0;
    for (const auto& seq : padded) {
        for (std::size_t i = 1; i + 1 < seq.size(); ++i) {
            if (seq[i - 1] == left && seq[i + 1] == right) {
                c2 += 1;
                if (seq[i] == mid) c3 += 1;
            }
        }
    }
    return std::log((c3 + alpha) / (c2 + alpha * V));
}

inline double brute_force_pll(const std::vector<std::string>& training, const std::string& text, double alpha) {
    const auto toks = tokenize(text).tokens;
    double sum = 0;
    for (std::size_t i = 0; i < toks.size(); ++i) sum += brute_force_masked_log_prob(training, toks, i, alpha);
    return sum / static_cast<double>(toks.size());
}

/// Wire-protocol mock of a remote scorer on an ephemeral local port.
class MockScorer {
public:
    using Handler = std::function<void(const nlohmann::json& request, httplib::Response& res)>;

    explicit MockScorer(Handler handler) : handler_(std::move(handler)) {
        server_.Post("/v1/token-logprobs", [this](const httplib::Request& req, httplib::Response& res) {
            auto body = nlohmann::json::parse(req.body);
            {
                std::lock_guard lock(mu_);
                requests_.push_back(body);
            }
            handler_(body, res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockScorer() { stop(); }

    void stop() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
    std::size_t request_count() const {
        std::lock_guard lock(mu_);
        return requests_.size();
    }
    std::vector<nlohmann::json> requests() const {
        std::lock_guard lock(mu_);
        return requests_;
    }

    /// Deterministic log-probs: one token per word, value derived from word length and position.
    static nlohmann::json echo_result(const std::string& sentence) {
        std::vector<std::string> toks;
        std::vector<double> lps;
        std::string word;
        std::istringstream is(sentence);
        std::size_t i = 0;
        while (is >> word) {
            toks.push_back(word);
            lps.push_back(-0.25 * static_cast<double>(word.size()) - 0.125 * static_cast<double>(i++));
        }
        return {{"tokens", toks}, {"log_probs", lps}};
    }

    static Handler echo() {
        return [](const nlohmann::json& req, httplib::Response& res) {
            nlohmann::json results = nlohmann::json::array();
            for (const auto& s : req["sentences"]) results.push_back(echo_result(s.get<std::string>()));
            res.set_content(nlohmann::json{{"results", results}}.dump(), "application/json");
        };
    }

private:
    Handler handler_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    mutable std::mutex mu_;
    std::vector<nlohmann::json> requests_;
};

/// Returns a port with nothing listening on it.
inline int unused_port() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    ::close(fd);
    return ntohs(addr.sin_port);
}

inline double sample_variance(const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - mean) * (x - mean);
    return s / static_cast<double>(v.size() - 1);
}

/// Three well-separated Gaussian clusters in 5-D.
inline FeatureMatrix gaussian_clusters(std::uint64_t seed, std::size_t per_cluster = 50, std::size_t d = 5) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    FeatureMatrix f;
    f.vectors.resize(static_cast<Eigen::Index>(3 * per_cluster), static_cast<Eigen::Index>(d));
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < per_cluster; ++i) {
            const auto row = static_cast<Eigen::Index>(c * per_cluster + i);
            for (std::size_t j = 0; j < d; ++j) {
                const double centre = j == c ? 10.0 : 0.0;
                f.vectors(row, static_cast<Eigen::Index>(j)) = centre + noise(rng);
            }
            f.ids.push_back("c" + std::to_string(c) + "-" + std::to_string(i));
        }
    }
    return f;
}

/**
 * Brute-force trustworthiness straight from the definition, with ranks
 * taken from a full sort of original-space distances.
 */
inline double brute_force_trustworthiness(const Eigen::MatrixXd& X, const std::vector<Point2>& Y, std::size_t k) {
    const std::size_t n = Y.size();
    double penalty = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> dx, dy;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dx.emplace_back((X.row(static_cast<Eigen::Index>(i)) - X.row(static_cast<Eigen::Index>(j))).squaredNorm(), j);
            const double a = Y[i][0] - Y[j][0], b = Y[i][1] - Y[j][1];
            dy.emplace_back(a * a + b * b, j);
        }
        std::sort(dx.begin(), dx.end());
        std::sort(dy.begin(), dy.end());
        std::map<std::size_t, std::size_t> rank;
        for (std::size_t r = 0; r < dx.size(); ++r) rank[dx[r].second] = r + 1;
        for (std::size_t r = 0; r < k; ++r) {
            const auto rr = rank[dy[r].second];
            if (rr > k) penalty += static_cast<double>(rr - k);
        }
    }
    const double nn = static_cast<double>(n), kk = static_cast<double>(k);
    return 1.0 - 2.0 / (nn * kk * (2.0 * nn - 3.0 * kk - 1.0)) * penalty;
}

// Power iteration with deflation on the explicit covariance.
inline std::vector<double> power_iteration_eigenvalues(const Eigen::MatrixXd& X, int count) {
    const Eigen::MatrixXd c = X.rowwise() - X.colwise().mean();
    Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(X.rows() - 1);
    std::vector<double> out;
    for (int k = 0; k < count; ++k) {
        Eigen::VectorXd v = Eigen::VectorXd::Ones(cov.rows()).normalized();
        v(0) += 0.1 * (k + 1);
        v.normalize();
        double lambda = 0;
        for (int it = 0; it < 5000; ++it) {
            Eigen::VectorXd w = cov * v;
            const double next = v.dot(w);
            v = w.normalized();
            if (std::abs(next - lambda) < 1e-15 * std::abs(next)) {
                lambda = next;
                break;
            }
            lambda = next;
        }
        out.push_back(lambda);
        cov -= lambda * v * v.transpose();
    }
    return out;
}

// Random project: corpus, three imported models and a random user embedding.
inline Project random_project(std::mt19937_64& rng, std::size_t n_pairs) {
    Project p;
    p.corpus = random_corpus(rng, n_pairs, 3, {"gender", "age", "race-color", "disability", "religion"});
    p.scores.add_model(random_model(rng, p.corpus, "bert"));
    p.scores.add_model(random_model(rng, p.corpus, "roberta"));
    p.scores.add_model(random_model(rng, p.corpus, "albert"));
    Embedding e;
    e.method = EmbeddingMethod::user;
    std::uniform_real_distribution<double> u(-10, 10);
    for (const auto& r : p.corpus.records()) {
        e.ids.push_back(r.id);
        e.points.push_back({u(rng), u(rng)});
    }
    p.set_embedding(e);
    return p;
}

inline FilterSet random_filters(std::mt19937_64& rng, const Project& p) {
    FilterSet f;
    std::uniform_real_distribution<double> u(-8, -1);
    for (const auto& m : p.scores.model_ids()) {
        if (rng() % 2) continue;
        double a = u(rng), b = u(rng);
        if (a > b) std::swap(a, b);
        f.set_axis_filter(AxisFilter{m, a, b});
    }
    if (rng() % 3 == 0) {
        std::vector<std::string> cats;
        for (const auto& c : p.corpus.categories()) {
            if (rng() % 2) cats.push_back(c);
        }
        f.category_filter = cats;
    }
    if (rng() % 2) {
        std::uniform_real_distribution<double> v(-10, 10);
        std::vector<Point2> poly(3 + rng() % 5);
        for (auto& pt : poly) pt = {v(rng), v(rng)};
        f.lasso = poly;
    }
    return f;
}

// Independent crossing-number test. Random points never land exactly on an edge.
inline bool brute_inside(const Point2& q, const std::vector<Point2>& poly) {
    int crossings = 0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const auto& a = poly[i];
        const auto& b = poly[(i + 1) % poly.size()];
        const bool straddles = (a[1] <= q[1] && b[1] > q[1]) || (b[1] <= q[1] && a[1] > q[1]);
        if (!straddles) continue;
        const double t = (q[1] - a[1]) / (b[1] - a[1]);
        if (q[0] < a[0] + t * (b[0] - a[0])) ++crossings;
    }
    return crossings % 2 == 1;
}

inline std::vector<std::string> brute_force_selection(const Project& p, const FilterSet& f) {
    std::vector<std::string> out;
    if (!f.probe_only) {
        for (const auto& r : p.corpus.records()) {
            bool keep = true;
            for (const auto& a : f.axis_filters) {
                const double v = *p.scores.pll(r.id, a.model_id);
                keep = keep && a.min <= v && v <= a.max;
            }
            if (f.category_filter) {
                keep = keep && std::find(f.category_filter->begin(), f.category_filter->end(), r.category) != f.category_filter->end();
            }
            if (f.lasso) keep = keep && brute_inside(*p.active_embedding()->point(r.id), *f.lasso);
            if (keep) out.push_back(r.id);
        }
    }
    if (!f.category_filter && !f.lasso) {
        for (const auto& probe : p.probes) {
            bool keep = true;
            for (const auto& a : f.axis_filters) {
                const double v = *probe.pll(a.model_id);
                keep = keep && a.min <= v && v <= a.max;
            }
            if (keep) out.push_back(probe.id);
        }
    }
    return out;
}

} // namespace testsupport
