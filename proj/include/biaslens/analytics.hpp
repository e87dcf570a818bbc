#pragma once

#include "biaslens/dataset.hpp"
#include "biaslens/error.hpp"
#include "biaslens/scoring.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace biaslens {

struct Quartiles {
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;

    bool operator==(const Quartiles&) const = default;
};

/// Quantile of already-sorted data, linear interpolation between order
/// statistics at position (n - 1) * p.
inline double sorted_quantile(std::span<const double> sorted, double p) {
    const double pos = static_cast<double>(sorted.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

inline Quartiles summary_stats(std::span<const double> values) {
    if (values.empty()) throw InvalidArgument("summary statistics need at least one value");
    std::vector<double> sorted(values.begin(), values.end());
    for (double v : sorted) {
        if (!std::isfinite(v)) throw InvalidArgument("summary statistics need finite values");
    }
    std::sort(sorted.begin(), sorted.end());
    return Quartiles{sorted_quantile(sorted, 0.5), sorted_quantile(sorted, 0.25), sorted_quantile(sorted, 0.75)};
}

/// Silverman's rule of thumb. Falls back to the standard deviation alone when
/// the IQR is zero.
inline double silverman_bandwidth(std::span<const double> values) {
    const auto n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    const auto q = summary_stats(values);
    const double iqr_scale = (q.q3 - q.q1) / 1.34;
    const double spread = iqr_scale > 0.0 ? std::min(sd, iqr_scale) : sd;
    return 0.9 * spread * std::pow(n, -0.2);
}

struct DensityPoint {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const DensityPoint&) const = default;
};

/**
 * Gaussian kernel density on `grid_size` evenly spaced points over
 * [min - 3h, max + 3h] with Silverman bandwidth h. The curve is rescaled so
 * its trapezoidal integral over the grid is exactly one.
 */
inline std::vector<DensityPoint> kde_density(std::span<const double> values, std::size_t grid_size = 256) {
    if (values.size() < 2) throw InvalidArgument("density estimation needs at least two values");
    if (grid_size < 2) throw InvalidArgument("density grid needs at least two points");
    for (double v : values) {
        if (!std::isfinite(v)) throw InvalidArgument("density estimation needs finite values");
    }
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    if (*mn == *mx) throw InvalidArgument("all values are identical; render a point mass instead of a density");

    const double h = silverman_bandwidth(values);
    const double lo = *mn - 3.0 * h;
    const double hi = *mx + 3.0 * h;
    const double norm = 1.0 / (static_cast<double>(values.size()) * h * std::sqrt(2.0 * std::numbers::pi));

    std::vector<DensityPoint> grid(grid_size);
    for (std::size_t i = 0; i < grid_size; ++i) {
        const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(grid_size - 1);
        double acc = 0.0;
        for (double v : values) {
            const double z = (x - v) / h;
            acc += std::exp(-0.5 * z * z);
        }
        grid[i] = DensityPoint{x, acc * norm};
    }

    double area = 0.0;
    for (std::size_t i = 1; i < grid_size; ++i) area += 0.5 * (grid[i].y + grid[i - 1].y) * (grid[i].x - grid[i - 1].x);
    for (auto& p : grid) p.y /= area;
    return grid;
}

inline double trapezoid_area(std::span<const DensityPoint> curve) {
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) area += 0.5 * (curve[i].y + curve[i - 1].y) * (curve[i].x - curve[i - 1].x);
    return area;
}

/// Density plus box-plot summary for one model axis. `density` is empty when
/// every score is identical (a point mass).
struct DistributionSummary {
    std::string model_id;
    std::vector<DensityPoint> density;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    std::size_t n = 0;

    bool operator==(const DistributionSummary&) const = default;
};

/// Scores of the corpus records that `model` has, in corpus order.
inline std::vector<double> corpus_scores(const ModelScores& model, const Corpus& corpus) {
    std::vector<double> out;
    out.reserve(corpus.size());
    for (const auto& r : corpus.records()) {
        if (const auto* s = model.find(r.id)) out.push_back(s->pll);
    }
    return out;
}

inline DistributionSummary distribution_summary(const ModelScores& model, const Corpus& corpus, std::size_t grid_size = 256) {
    auto values = corpus_scores(model, corpus);
    if (values.empty()) throw MissingScoresError("model " + model.model_id() + " has no scores", {});
    DistributionSummary out;
    out.model_id = model.model_id();
    out.n = values.size();
    const auto q = summary_stats(values);
    out.median = q.median;
    out.q1 = q.q1;
    out.q3 = q.q3;
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    if (*mn != *mx) out.density = kde_density(values, grid_size);
    return out;
}

struct CategoryBand {
    std::string model_id;
    std::string category;
    std::optional<Group> group;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    std::size_t n = 0;
    bool low_support = false; // n < 3

    bool operator==(const CategoryBand&) const = default;
};

struct BandResult {
    std::vector<CategoryBand> bands;
    std::vector<std::string> diagnostics;
};

/**
 * Median/IQR bands per (model, category), or per (model, category, group)
 * when `split_by_group` is set. Complete models only, in registration
 * order; categories in corpus order. Empty bands are omitted with a
 * diagnostic.
 */
inline BandResult category_bands(const ScoreMatrix& matrix, const Corpus& corpus, const std::vector<std::string>& categories,
                                 bool split_by_group) {
    for (const auto& c : categories) {
        if (!corpus.has_category(c)) throw InvalidArgument("unknown category '" + c + "'");
    }
    BandResult out;
    std::vector<std::optional<Group>> groups;
    if (split_by_group) groups = {Group::base, Group::stereotype};
    else groups = {std::nullopt};

    for (const auto& model : matrix.models()) {
        for (const auto& category : corpus.categories()) {
            if (std::find(categories.begin(), categories.end(), category) == categories.end()) continue;
            for (const auto& group : groups) {
                std::vector<double> values;
                for (const auto& r : corpus.records()) {
                    if (r.category != category || (group && r.group != *group)) continue;
                    if (const auto* s = model.find(r.id)) values.push_back(s->pll);
                }
                const std::string label = category + (group ? "/" + std::string(to_string(*group)) : std::string{});
                if (values.empty()) {
                    out.diagnostics.push_back("model " + model.model_id() + ": no scored sentences in " + label);
                    continue;
                }
                const auto q = summary_stats(values);
                out.bands.push_back(CategoryBand{model.model_id(), category, group, q.median, q.q1, q.q3, values.size(), values.size() < 3});
            }
        }
    }
    return out;
}

namespace detail {

inline double side_mean(const ModelScores& model, const std::vector<std::string>& ids, std::vector<std::string>& missing) {
    double sum = 0.0;
    for (const auto& id : ids) {
        if (const auto* s = model.find(id)) sum += s->pll;
        else missing.push_back(id);
    }
    return ids.empty() ? 0.0 : sum / static_cast<double>(ids.size());
}

} // namespace detail

/// Mean stereotype PLL minus mean base PLL for one pair.
inline double pairwise_delta(const ScoreMatrix& matrix, const SentencePair& pair, const std::string& model_id) {
    const auto* model = matrix.model(model_id);
    std::vector<std::string> missing;
    if (!model) {
        missing = pair.base_ids;
        missing.insert(missing.end(), pair.stereotype_ids.begin(), pair.stereotype_ids.end());
        throw MissingScoresError("model " + model_id + " is not scored", std::move(missing));
    }
    if (pair.base_ids.empty() || pair.stereotype_ids.empty()) {
        throw InvalidArgument("pair " + pair.pair_id + " needs both base and stereotype sentences");
    }
    const double stereo = detail::side_mean(*model, pair.stereotype_ids, missing);
    const double base = detail::side_mean(*model, pair.base_ids, missing);
    if (!missing.empty()) throw MissingScoresError("pair " + pair.pair_id + " has unscored members", std::move(missing));
    return stereo - base;
}

struct BiasStat {
    double preference_rate = 0.5;
    std::size_t n_pairs = 0;
    double mean_delta = 0.0;

    bool operator==(const BiasStat&) const = default;
};

/// Stereotype preference per category and overall. 0.5 means no preference.
struct BiasReport {
    std::string model_id;
    std::vector<std::pair<std::string, BiasStat>> per_category;
    BiasStat overall;

    bool operator==(const BiasReport&) const = default;
};

/// 1 if the stereotype side scores higher, 0 if lower, 0.5 on an exact tie.
inline double preference_contribution(double delta) {
    if (delta > 0.0) return 1.0;
    if (delta < 0.0) return 0.0;
    return 0.5;
}

inline BiasReport stereotype_preference_rate(const ScoreMatrix& matrix, const Corpus& corpus, const std::string& model_id) {
    const auto* model = matrix.model(model_id);
    if (!model) throw MissingScoresError("model " + model_id + " is not scored", {});

    std::vector<std::string> pending;
    for (const auto& r : corpus.records()) {
        if (!model->find(r.id)) pending.push_back(r.id);
    }
    if (!pending.empty()) throw MissingScoresError("model " + model_id + " is missing scores", std::move(pending));

    struct Acc {
        double contributions = 0.0;
        double deltas = 0.0;
        std::size_t n = 0;
    };
    std::vector<Acc> per(corpus.categories().size());
    Acc all;
    for (const auto& pair : corpus.pairs()) {
        if (pair.base_ids.empty() || pair.stereotype_ids.empty()) continue;
        const double delta = pairwise_delta(matrix, pair, model_id);
        const double c = preference_contribution(delta);
        const auto cat = static_cast<std::size_t>(
            std::find(corpus.categories().begin(), corpus.categories().end(), pair.category) - corpus.categories().begin());
        for (Acc* a : {&per[cat], &all}) {
            a->contributions += c;
            a->deltas += delta;
            ++a->n;
        }
    }

    auto finish = [](const Acc& a) {
        if (a.n == 0) return BiasStat{};
        const auto n = static_cast<double>(a.n);
        return BiasStat{a.contributions / n, a.n, a.deltas / n};
    };
    BiasReport report;
    report.model_id = model_id;
    for (std::size_t i = 0; i < per.size(); ++i) {
        if (per[i].n) report.per_category.emplace_back(corpus.categories()[i], finish(per[i]));
    }
    report.overall = finish(all);
    return report;
}

// Serialization

inline nlohmann::ordered_json bias_stat_json(const BiasStat& s) {
    return nlohmann::ordered_json{{"preference_rate", s.preference_rate}, {"n_pairs", s.n_pairs}, {"mean_delta", s.mean_delta}};
}

inline nlohmann::ordered_json bias_report_json(const std::vector<BiasReport>& reports) {
    nlohmann::ordered_json doc;
    auto& arr = doc["reports"] = nlohmann::ordered_json::array();
    for (const auto& r : reports) {
        nlohmann::ordered_json j;
        j["model_id"] = r.model_id;
        auto& per = j["per_category"] = nlohmann::ordered_json::object();
        for (const auto& [cat, stat] : r.per_category) per[cat] = bias_stat_json(stat);
        j["overall"] = bias_stat_json(r.overall);
        arr.push_back(std::move(j));
    }
    return doc;
}

/// One row per (model, category) plus an "(overall)" row per model.
inline std::string bias_report_csv(const std::vector<BiasReport>& reports) {
    auto num = [](double v) { return nlohmann::json(v).dump(); };
    std::ostringstream os;
    os << "model_id,category,n_pairs,preference_rate,mean_delta\n";
    for (const auto& r : reports) {
        for (const auto& [cat, s] : r.per_category) {
            os << detail::csv_escape(r.model_id) << ',' << detail::csv_escape(cat) << ',' << s.n_pairs << ',' << num(s.preference_rate)
               << ',' << num(s.mean_delta) << '\n';
        }
        os << detail::csv_escape(r.model_id) << ",(overall)," << r.overall.n_pairs << ',' << num(r.overall.preference_rate) << ','
           << num(r.overall.mean_delta) << '\n';
    }
    return os.str();
}

inline nlohmann::json distribution_json(const DistributionSummary& d) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : d.density) points.push_back({p.x, p.y});
    return {{"model_id", d.model_id}, {"density", points}, {"median", d.median}, {"q1", d.q1}, {"q3", d.q3}, {"n", d.n},
            {"point_mass", d.density.empty()}};
}

inline nlohmann::json band_json(const CategoryBand& b) {
    return {{"model_id", b.model_id},
            {"category", b.category},
            {"group", b.group ? nlohmann::json(std::string(to_string(*b.group))) : nlohmann::json(nullptr)},
            {"median", b.median},
            {"q1", b.q1},
            {"q3", b.q3},
            {"n", b.n},
            {"low_support", b.low_support}};
}

} // namespace biaslens
