#pragma once

#include "biaslens/dataset.hpp"
#include "biaslens/error.hpp"
#include "biaslens/scoring.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

/**
 * @file embedding.hpp
 *
 * @brief Two-dimensional sentence embeddings: PCA, exact t-SNE, and
 * user-supplied coordinates, plus a trustworthiness score for checking them.
 */

namespace biaslens {

/// One feature row per sentence; by default the row holds the sentence's
/// PLL under each scored model.
struct FeatureMatrix {
    std::vector<std::string> ids;
    Eigen::MatrixXd vectors;

    std::size_t rows() const { return static_cast<std::size_t>(vectors.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(vectors.cols()); }
};

enum class EmbeddingMethod { pca, tsne, user };

inline std::string_view to_string(EmbeddingMethod m) {
    switch (m) {
    case EmbeddingMethod::pca: return "pca";
    case EmbeddingMethod::tsne: return "tsne";
    case EmbeddingMethod::user: return "user";
    }
    return "user";
}

inline std::optional<EmbeddingMethod> parse_embedding_method(std::string_view s) {
    if (s == "pca") return EmbeddingMethod::pca;
    if (s == "tsne") return EmbeddingMethod::tsne;
    if (s == "user") return EmbeddingMethod::user;
    return std::nullopt;
}

using Point2 = std::array<double, 2>;

struct Embedding {
    std::vector<std::string> ids;
    std::vector<Point2> points;
    EmbeddingMethod method = EmbeddingMethod::user;
    nlohmann::json params = nlohmann::json::object();
    nlohmann::json diagnostics = nlohmann::json::object();

    const Point2* point(std::string_view id) const {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] == id) return &points[i];
        }
        return nullptr;
    }

    bool operator==(const Embedding&) const = default;
};

/**
 * Builds the default feature matrix: one row per corpus record, one column
 * per complete model, entries are PLLs. `standardize` rescales each column to
 * zero mean and unit variance.
 */
inline FeatureMatrix features_from_scores(const ScoreMatrix& matrix, const Corpus& corpus, bool standardize = false) {
    std::vector<const ModelScores*> models;
    for (const auto& m : matrix.models()) {
        if (!m.partial()) models.push_back(&m);
    }
    if (models.empty()) throw MissingScoresError("no scored models to build features from", {});

    FeatureMatrix f;
    f.vectors.resize(static_cast<Eigen::Index>(corpus.size()), static_cast<Eigen::Index>(models.size()));
    std::vector<std::string> missing;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& id = corpus.records()[i].id;
        f.ids.push_back(id);
        for (std::size_t j = 0; j < models.size(); ++j) {
            const auto* s = models[j]->find(id);
            if (!s) {
                missing.push_back(id);
                continue;
            }
            f.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s->pll;
        }
    }
    if (!missing.empty()) throw MissingScoresError("some sentences are not scored by every model", std::move(missing));

    if (standardize && f.vectors.rows() > 1) {
        for (Eigen::Index j = 0; j < f.vectors.cols(); ++j) {
            auto col = f.vectors.col(j);
            const double mean = col.mean();
            col.array() -= mean;
            const double sd = std::sqrt(col.squaredNorm() / static_cast<double>(col.size() - 1));
            if (sd > 0) col /= sd;
        }
    }
    return f;
}

namespace detail {

inline void check_features(const FeatureMatrix& f) {
    if (f.ids.size() != f.rows()) throw InvalidArgument("feature matrix has " + std::to_string(f.rows()) + " rows but " +
                                                        std::to_string(f.ids.size()) + " ids");
    if (f.cols() < 1) throw InvalidArgument("feature vectors need at least one dimension");
    if (!f.vectors.allFinite()) throw InvalidArgument("feature matrix contains non-finite values");
}

} // namespace detail

/**
 * Projects onto the top two eigenvectors of the sample covariance. Each
 * component's sign is fixed so its largest-magnitude loading is positive.
 * With one feature column the second coordinate is zero.
 */
inline Embedding pca_2d(const FeatureMatrix& features) {
    detail::check_features(features);
    const auto n = static_cast<Eigen::Index>(features.rows());
    const auto d = static_cast<Eigen::Index>(features.cols());
    if (n < 3) throw InvalidArgument("PCA needs at least 3 points");

    const Eigen::RowVectorXd mean = features.vectors.colwise().mean();
    const Eigen::MatrixXd centered = features.vectors.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);

    const double scale = features.vectors.cwiseAbs().maxCoeff();
    const double total = cov.trace();
    if (!(total > std::numeric_limits<double>::epsilon() * std::max(1.0, scale * scale))) {
        throw InvalidArgument("PCA input has zero variance");
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw Error("covariance eigendecomposition failed");
    const auto& values = solver.eigenvalues();   // ascending
    const auto& vectors = solver.eigenvectors();

    const Eigen::Index k = std::min<Eigen::Index>(2, d);
    Eigen::MatrixXd basis(d, k);
    std::vector<double> explained;
    for (Eigen::Index c = 0; c < k; ++c) {
        Eigen::VectorXd v = vectors.col(d - 1 - c);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        basis.col(c) = v;
        explained.push_back(std::max(0.0, values(d - 1 - c)));
    }
    const Eigen::MatrixXd proj = centered * basis;

    Embedding e;
    e.method = EmbeddingMethod::pca;
    e.ids = features.ids;
    e.points.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        e.points[static_cast<std::size_t>(i)] = {proj(i, 0), k > 1 ? proj(i, 1) : 0.0};
    }
    e.diagnostics = {{"explained_variance", explained}, {"total_variance", total}};
    return e;
}

struct SigmaSearchResult {
    double sigma = 0.0;
    double entropy_bits = 0.0;
    int iterations = 0;
    bool clamped = false;
    std::vector<double> probabilities; // P(j|i), same order as the input distances
};

namespace detail {

inline constexpr int max_sigma_iterations = 50;
inline constexpr double entropy_tolerance = 1e-4;

// Works on squared distances. beta = 1 / (2 sigma^2).
inline SigmaSearchResult search_precision(std::span<const double> sq_dists, double perplexity) {
    if (sq_dists.size() < 2) throw InvalidArgument("perplexity search needs at least two neighbours");
    if (!(perplexity > 0) || !std::isfinite(perplexity)) throw InvalidArgument("perplexity must be positive");
    double min_d = std::numeric_limits<double>::infinity();
    double max_d = 0.0;
    for (double v : sq_dists) {
        if (!std::isfinite(v) || v < 0) throw InvalidArgument("distances must be finite and non-negative");
        min_d = std::min(min_d, v);
        max_d = std::max(max_d, v);
    }
    if (max_d == 0.0) throw InvalidArgument("all distances are zero");

    // Shifting by the smallest distance leaves P unchanged and avoids underflow.
    std::vector<double> shifted(sq_dists.size());
    double mean_shift = 0.0;
    for (std::size_t j = 0; j < shifted.size(); ++j) {
        shifted[j] = sq_dists[j] - min_d;
        mean_shift += shifted[j];
    }
    mean_shift /= static_cast<double>(shifted.size());

    const double target = std::log2(perplexity);
    std::vector<double> p(shifted.size());
    auto entropy_at = [&](double beta) {
        double sum = 0.0;
        double weighted = 0.0;
        for (std::size_t j = 0; j < shifted.size(); ++j) {
            p[j] = std::exp(-beta * shifted[j]);
            sum += p[j];
            weighted += shifted[j] * p[j];
        }
        for (auto& v : p) v /= sum;
        return (std::log(sum) + beta * weighted / sum) / std::numbers::ln2;
    };

    double beta = mean_shift > 0 ? 1.0 / mean_shift : 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    SigmaSearchResult out;
    for (int it = 1; it <= max_sigma_iterations; ++it) {
        const double h = entropy_at(beta);
        out.iterations = it;
        out.entropy_bits = h;
        out.sigma = std::sqrt(1.0 / (2.0 * beta));
        if (std::abs(h - target) < entropy_tolerance) {
            out.probabilities = p;
            return out;
        }
        if (it == max_sigma_iterations) break;
        if (h > target) { // too flat: sharpen
            lo = beta;
            beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    out.clamped = true;
    out.probabilities = p;
    return out;
}

} // namespace detail

/**
 * Binary search on sigma so that the conditional distribution
 * P(j|i) ∝ exp(-d_ij^2 / (2 sigma^2)) has Shannon entropy log2(perplexity)
 * bits, to 1e-4, within 50 evaluations. Unattainable targets return the last
 * evaluated sigma with `clamped` set.
 */
inline SigmaSearchResult perplexity_sigma_search(std::span<const double> distances, double perplexity) {
    std::vector<double> sq(distances.size());
    for (std::size_t j = 0; j < distances.size(); ++j) {
        if (!std::isfinite(distances[j]) || distances[j] < 0) throw InvalidArgument("distances must be finite and non-negative");
        sq[j] = distances[j] * distances[j];
    }
    return detail::search_precision(sq, perplexity);
}

/// Shannon entropy in bits of P(j|i) at the given sigma.
inline double conditional_entropy_bits(std::span<const double> distances, double sigma) {
    double min_sq = std::numeric_limits<double>::infinity();
    for (double d : distances) min_sq = std::min(min_sq, d * d);
    std::vector<double> w(distances.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        w[j] = std::exp(-(distances[j] * distances[j] - min_sq) / (2.0 * sigma * sigma));
        sum += w[j];
    }
    double h = 0.0;
    for (double v : w) {
        const double p = v / sum;
        if (p > 0) h -= p * std::log2(p);
    }
    return h;
}

struct TsneParams {
    double perplexity = 30.0;
    int iterations = 1000;
    double learning_rate = 200.0;
    double early_exaggeration = 12.0;
    int exaggeration_iterations = 250;
    double momentum = 0.5;
    double final_momentum = 0.8;
    int momentum_switch = 250;
    std::uint64_t seed = 0;
};

inline nlohmann::json tsne_params_json(const TsneParams& p) {
    return {{"perplexity", p.perplexity},
            {"iterations", p.iterations},
            {"learning_rate", p.learning_rate},
            {"early_exaggeration", p.early_exaggeration},
            {"exaggeration_iterations", p.exaggeration_iterations},
            {"momentum", p.momentum},
            {"final_momentum", p.final_momentum},
            {"momentum_switch", p.momentum_switch},
            {"seed", p.seed}};
}

inline TsneParams tsne_params_from_json(const nlohmann::json& j) {
    TsneParams p;
    p.perplexity = j.value("perplexity", p.perplexity);
    p.iterations = j.value("iterations", p.iterations);
    p.learning_rate = j.value("learning_rate", p.learning_rate);
    p.early_exaggeration = j.value("early_exaggeration", p.early_exaggeration);
    p.exaggeration_iterations = j.value("exaggeration_iterations", p.exaggeration_iterations);
    p.momentum = j.value("momentum", p.momentum);
    p.final_momentum = j.value("final_momentum", p.final_momentum);
    p.momentum_switch = j.value("momentum_switch", p.momentum_switch);
    p.seed = j.value("seed", p.seed);
    return p;
}

inline constexpr std::size_t tsne_min_points = 8;

/// Symmetrized t-SNE input affinities, row-major n x n with zero diagonal.
struct TsneAffinities {
    std::vector<double> p;
    std::size_t n = 0;
    std::size_t clamped_rows = 0;
    double perplexity = 0.0;
};

inline TsneAffinities tsne_affinities(const FeatureMatrix& features, double perplexity) {
    detail::check_features(features);
    const std::size_t n = features.rows();
    TsneAffinities a;
    a.n = n;
    a.perplexity = perplexity;
    std::vector<double> cond(n * n, 0.0);
    std::vector<double> row(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0, k = 0; j < n; ++j) {
            if (j == i) continue;
            row[k++] = (features.vectors.row(static_cast<Eigen::Index>(i)) - features.vectors.row(static_cast<Eigen::Index>(j))).squaredNorm();
        }
        auto res = detail::search_precision(row, perplexity);
        if (res.clamped) ++a.clamped_rows;
        for (std::size_t j = 0, k = 0; j < n; ++j) {
            if (j == i) continue;
            cond[i * n + j] = res.probabilities[k++];
        }
    }
    a.p.assign(n * n, 0.0);
    const double denom = 2.0 * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = (cond[i * n + j] + cond[j * n + i]) / denom;
            a.p[i * n + j] = v;
            a.p[j * n + i] = v;
        }
    }
    return a;
}

namespace detail {

inline double tsne_kl(const std::vector<double>& P, const std::vector<Point2>& Y) {
    const std::size_t n = Y.size();
    double z = 0.0;
    std::vector<double> num(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = Y[i][0] - Y[j][0];
            const double dy = Y[i][1] - Y[j][1];
            const double q = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = num[j * n + i] = q;
            z += 2.0 * q;
        }
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double p = P[i * n + j];
            if (i == j || p <= 0.0) continue;
            const double q = std::max(num[i * n + j] / z, std::numeric_limits<double>::min());
            kl += p * std::log(p / q);
        }
    }
    return kl;
}

} // namespace detail

/**
 * @brief Exact O(n^2) t-SNE to two dimensions.
 *
 * Perplexity is capped at (n - 1) / 3. The optimizer starts from the PCA
 * projection scaled to standard deviation 1e-4 plus seeded jitter of 1e-6,
 * then runs gradient descent with momentum, per-coordinate gains and early
 * exaggeration. Results are bit-identical for a fixed seed.
 */
inline Embedding tsne_2d(const FeatureMatrix& features, const TsneParams& params = {}) {
    detail::check_features(features);
    const std::size_t n = features.rows();
    if (n < tsne_min_points) {
        throw InvalidArgument("t-SNE needs at least " + std::to_string(tsne_min_points) + " points (got " + std::to_string(n) +
                              "); use PCA for smaller sets");
    }
    if (params.iterations < 0 || !(params.learning_rate > 0)) throw InvalidArgument("invalid t-SNE optimizer parameters");

    const double perplexity = std::min(params.perplexity, static_cast<double>(n - 1) / 3.0);
    const auto aff = tsne_affinities(features, perplexity);
    const auto& P = aff.p;

    // initial layout
    std::vector<Point2> Y = pca_2d(features).points;
    for (int c = 0; c < 2; ++c) {
        double mean = 0.0;
        for (const auto& y : Y) mean += y[c];
        mean /= static_cast<double>(n);
        double ss = 0.0;
        for (const auto& y : Y) ss += (y[c] - mean) * (y[c] - mean);
        const double sd = std::sqrt(ss / static_cast<double>(n));
        for (auto& y : Y) y[c] = sd > 0 ? (y[c] - mean) * (1e-4 / sd) : 0.0;
    }
    std::mt19937_64 rng(params.seed);
    std::normal_distribution<double> jitter(0.0, 1e-6);
    for (auto& y : Y) {
        y[0] += jitter(rng);
        y[1] += jitter(rng);
    }

    const double kl_initial = detail::tsne_kl(P, Y);

    std::vector<Point2> update(n, Point2{0.0, 0.0});
    std::vector<Point2> gains(n, Point2{1.0, 1.0});
    std::vector<Point2> grad(n);
    std::vector<double> num(n * n);

    for (int iter = 0; iter < params.iterations; ++iter) {
        const double exaggeration = iter < params.exaggeration_iterations ? params.early_exaggeration : 1.0;
        const double momentum = iter < params.momentum_switch ? params.momentum : params.final_momentum;

        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            num[i * n + i] = 0.0;
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dx = Y[i][0] - Y[j][0];
                const double dy = Y[i][1] - Y[j][1];
                const double q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            double gx = 0.0, gy = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double q = num[i * n + j];
                const double mult = (exaggeration * P[i * n + j] - q / z) * q;
                gx += mult * (Y[i][0] - Y[j][0]);
                gy += mult * (Y[i][1] - Y[j][1]);
            }
            grad[i] = {4.0 * gx, 4.0 * gy};
            if (!std::isfinite(grad[i][0]) || !std::isfinite(grad[i][1])) {
                for (std::size_t j = 0; j < n; ++j) {
                    if (j != i && !std::isfinite(num[i * n + j] / z)) {
                        throw Error("non-finite t-SNE gradient between " + features.ids[i] + " and " + features.ids[j]);
                    }
                }
                throw Error("non-finite t-SNE gradient at " + features.ids[i]);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (int c = 0; c < 2; ++c) {
                const bool same_sign = (grad[i][c] > 0) == (update[i][c] > 0);
                gains[i][c] = same_sign ? gains[i][c] * 0.8 : gains[i][c] + 0.2;
                gains[i][c] = std::max(gains[i][c], 0.01);
                update[i][c] = momentum * update[i][c] - params.learning_rate * gains[i][c] * grad[i][c];
                Y[i][c] += update[i][c];
            }
        }
        for (int c = 0; c < 2; ++c) {
            double mean = 0.0;
            for (const auto& y : Y) mean += y[c];
            mean /= static_cast<double>(n);
            for (auto& y : Y) y[c] -= mean;
        }
    }

    Embedding e;
    e.method = EmbeddingMethod::tsne;
    e.ids = features.ids;
    e.points = std::move(Y);
    TsneParams used = params;
    used.perplexity = perplexity;
    e.params = tsne_params_json(used);
    e.diagnostics = {{"kl_initial", kl_initial},
                     {"kl_final", detail::tsne_kl(P, e.points)},
                     {"iterations", params.iterations},
                     {"clamped_rows", aff.clamped_rows}};
    return e;
}

/**
 * Trustworthiness of an embedding at neighbourhood size k: one minus a
 * normalized penalty over points that are k-nearest in the embedding but not
 * in feature space, weighted by their feature-space rank. Needs k < n / 2,
 * except k = n - 1 where every point is a neighbour and the score is 1.
 */
inline double trustworthiness(const FeatureMatrix& features, const Embedding& embedding, std::size_t k) {
    detail::check_features(features);
    const std::size_t n = features.rows();
    if (embedding.ids != features.ids || embedding.points.size() != n) {
        throw InvalidArgument("embedding rows do not match the feature rows");
    }
    if (k < 1 || k >= n) throw InvalidArgument("trustworthiness needs 1 <= k < n");
    if (k == n - 1) return 1.0;
    if (2 * k >= n) throw InvalidArgument("trustworthiness needs k < n/2");

    auto order_by = [n](auto dist) {
        std::vector<std::size_t> idx;
        idx.reserve(n - 1);
        return [n, dist, idx](std::size_t i) mutable {
            idx.clear();
            for (std::size_t j = 0; j < n; ++j) {
                if (j != i) idx.push_back(j);
            }
            std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dist(i, a) < dist(i, b); });
            return idx;
        };
    };
    auto feature_dist = [&](std::size_t i, std::size_t j) {
        return (features.vectors.row(static_cast<Eigen::Index>(i)) - features.vectors.row(static_cast<Eigen::Index>(j))).squaredNorm();
    };
    auto embed_dist = [&](std::size_t i, std::size_t j) {
        const double dx = embedding.points[i][0] - embedding.points[j][0];
        const double dy = embedding.points[i][1] - embedding.points[j][1];
        return dx * dx + dy * dy;
    };
    auto feature_order = order_by(feature_dist);
    auto embed_order = order_by(embed_dist);

    double penalty = 0.0;
    std::vector<std::size_t> rank(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto orig = feature_order(i);
        for (std::size_t r = 0; r < orig.size(); ++r) rank[orig[r]] = r + 1;
        const auto emb = embed_order(i);
        for (std::size_t r = 0; r < k; ++r) {
            const std::size_t j = emb[r];
            if (rank[j] > k) penalty += static_cast<double>(rank[j] - k);
        }
    }
    const double nd = static_cast<double>(n);
    const double kd = static_cast<double>(k);
    return 1.0 - 2.0 / (nd * kd * (2.0 * nd - 3.0 * kd - 1.0)) * penalty;
}

// JSON: {"method", "params", "ids", "points", "diagnostics"}

inline nlohmann::json embedding_to_json(const Embedding& e) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : e.points) points.push_back({p[0], p[1]});
    return {{"method", to_string(e.method)}, {"params", e.params}, {"ids", e.ids}, {"points", points}, {"diagnostics", e.diagnostics}};
}

inline Embedding embedding_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("embedding must be a JSON object");
    Embedding e;
    const auto method = j.value("method", std::string("user"));
    auto m = parse_embedding_method(method);
    if (!m) throw ParseError("unknown embedding method '" + method + "'");
    e.method = *m;
    e.params = j.value("params", nlohmann::json::object());
    e.diagnostics = j.value("diagnostics", nlohmann::json::object());
    if (!j.contains("ids") || !j.contains("points")) throw ParseError("embedding needs ids and points");
    e.ids = j.at("ids").get<std::vector<std::string>>();
    for (const auto& p : j.at("points")) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) throw ParseError("each point must be [x, y]");
        Point2 pt{p[0].get<double>(), p[1].get<double>()};
        if (!std::isfinite(pt[0]) || !std::isfinite(pt[1])) throw ParseError("embedding points must be finite");
        e.points.push_back(pt);
    }
    if (e.ids.size() != e.points.size()) throw ParseError("embedding has " + std::to_string(e.ids.size()) + " ids but " +
                                                          std::to_string(e.points.size()) + " points");
    return e;
}

} // namespace biaslens
