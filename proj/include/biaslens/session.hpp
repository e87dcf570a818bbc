#pragma once

#include "biaslens/dataset.hpp"
#include "biaslens/embedding.hpp"
#include "biaslens/error.hpp"
#include "biaslens/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace biaslens {

/// Closed score interval on one model axis.
struct AxisFilter {
    std::string model_id;
    double min = 0.0;
    double max = 0.0;

    bool contains(double v) const { return min <= v && v <= max; }
    bool operator==(const AxisFilter&) const = default;
};

/**
 * Active predicates of an analysis session. Everything set here is ANDed
 * together; an empty filter set selects everything.
 */
struct FilterSet {
    std::vector<AxisFilter> axis_filters;
    std::optional<std::vector<std::string>> category_filter;
    std::optional<std::vector<Point2>> lasso;
    bool probe_only = false;

    /// Adds or replaces the filter for `f.model_id`.
    void set_axis_filter(AxisFilter f) {
        for (auto& a : axis_filters) {
            if (a.model_id == f.model_id) {
                a = std::move(f);
                return;
            }
        }
        axis_filters.push_back(std::move(f));
    }

    bool clear_axis_filter(std::string_view model_id) {
        auto it = std::remove_if(axis_filters.begin(), axis_filters.end(), [&](const AxisFilter& a) { return a.model_id == model_id; });
        const bool removed = it != axis_filters.end();
        axis_filters.erase(it, axis_filters.end());
        return removed;
    }

    bool empty() const { return axis_filters.empty() && !category_filter && !lasso && !probe_only; }

    /// Throws InvalidArgument for inverted or non-finite intervals, repeated
    /// axes and polygons with fewer than three finite vertices.
    void check() const {
        std::set<std::string> seen;
        for (const auto& a : axis_filters) {
            if (!std::isfinite(a.min) || !std::isfinite(a.max)) throw InvalidArgument("axis filter on " + a.model_id + " has a non-finite bound");
            if (a.min > a.max) throw InvalidArgument("axis filter on " + a.model_id + " has min > max");
            if (!seen.insert(a.model_id).second) throw InvalidArgument("more than one axis filter on " + a.model_id);
        }
        if (lasso) {
            if (lasso->size() < 3) throw InvalidArgument("lasso polygon needs at least 3 vertices");
            for (const auto& v : *lasso) {
                if (!std::isfinite(v[0]) || !std::isfinite(v[1])) throw InvalidArgument("lasso vertices must be finite");
            }
        }
    }

    bool operator==(const FilterSet&) const = default;
};

struct Selection {
    std::vector<std::string> ids;
    std::vector<std::string> provenance;

    bool operator==(const Selection&) const = default;
};

/**
 * Even-odd ray casting. Points on an edge or vertex count as inside, so a
 * zero-area polygon contains only its boundary.
 */
inline bool point_in_polygon(const Point2& p, std::span<const Point2> polygon) {
    if (polygon.size() < 3) throw InvalidArgument("polygon needs at least 3 vertices");
    const std::size_t n = polygon.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& a = polygon[i];
        const auto& b = polygon[(i + 1) % n];
        const double cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if (cross == 0.0 && std::min(a[0], b[0]) <= p[0] && p[0] <= std::max(a[0], b[0]) && std::min(a[1], b[1]) <= p[1] &&
            p[1] <= std::max(a[1], b[1])) {
            return true;
        }
    }
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const auto& a = polygon[i];
        const auto& b = polygon[j];
        if ((a[1] > p[1]) != (b[1] > p[1])) {
            const double x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if (p[0] < x) inside = !inside;
        }
    }
    return inside;
}

struct ProbeScore {
    std::string model_id;
    double pll = 0.0;

    bool operator==(const ProbeScore&) const = default;
};

/// A user-typed sentence scored on every model. Probes are overlays: they
/// never join pairs, categories or aggregate statistics.
struct ProbeSentence {
    std::string id;
    std::string text;
    std::vector<ProbeScore> scores;

    std::optional<double> pll(std::string_view model_id) const {
        for (const auto& s : scores) {
            if (s.model_id == model_id) return s.pll;
        }
        return std::nullopt;
    }

    bool operator==(const ProbeSentence&) const = default;
};

struct ViewSettings {
    std::vector<std::string> highlight_categories;
    bool split = false;
    std::vector<std::string> visible_columns;
    std::optional<std::string> active_embedding; // method name

    bool operator==(const ViewSettings&) const = default;
};

inline constexpr int project_format_version = 1;

struct Project {
    int version = project_format_version;
    Corpus corpus;
    ScoreMatrix scores;
    std::vector<Embedding> embeddings; // at most one per method
    FilterSet filters;
    std::vector<ProbeSentence> probes;
    ViewSettings view;

    const Embedding* embedding(std::string_view method) const {
        for (const auto& e : embeddings) {
            if (to_string(e.method) == method) return &e;
        }
        return nullptr;
    }

    const Embedding* active_embedding() const {
        return view.active_embedding ? embedding(*view.active_embedding) : nullptr;
    }

    /// Stores `e`, replacing one with the same method, and makes it active.
    void set_embedding(Embedding e) {
        const std::string method(to_string(e.method));
        auto it = std::find_if(embeddings.begin(), embeddings.end(), [&](const Embedding& x) { return x.method == e.method; });
        if (it != embeddings.end()) *it = std::move(e);
        else embeddings.push_back(std::move(e));
        view.active_embedding = method;
    }

    const ProbeSentence* probe(std::string_view id) const {
        for (const auto& p : probes) {
            if (p.id == id) return &p;
        }
        return nullptr;
    }

    bool operator==(const Project&) const = default;
};

inline std::vector<std::string> standard_columns() {
    return {"id", "pair_id", "group", "category", "text", "paraphrase_of"};
}

/**
 * Resolves `filters` against the project. The universe is every corpus
 * record followed by every probe. Probes can satisfy axis filters but never
 * category or lasso filters; `probe_only` drops the corpus records.
 */
inline Selection apply_filters(const Project& project, const FilterSet& filters) {
    filters.check();

    std::vector<const ModelScores*> axis_models;
    for (const auto& a : filters.axis_filters) {
        const auto* m = project.scores.model(a.model_id);
        if (!m || m->partial()) throw InvalidArgument("axis filter on unscored model " + a.model_id);
        axis_models.push_back(m);
    }
    const Embedding* embedding = nullptr;
    if (filters.lasso) {
        embedding = project.active_embedding();
        if (!embedding) throw InvalidArgument("lasso filter needs an active embedding");
    }
    std::set<std::string> categories;
    if (filters.category_filter) categories.insert(filters.category_filter->begin(), filters.category_filter->end());

    Selection sel;
    for (const auto& a : filters.axis_filters) {
        std::ostringstream os;
        os.precision(17);
        os << "axis:" << a.model_id << "[" << a.min << "," << a.max << "]";
        sel.provenance.push_back(os.str());
    }
    if (filters.category_filter) sel.provenance.emplace_back("category");
    if (filters.lasso) sel.provenance.emplace_back("lasso");
    if (filters.probe_only) sel.provenance.emplace_back("probe_only");
    std::sort(sel.provenance.begin(), sel.provenance.end()); // filter order must not show through

    if (!filters.probe_only) {
        std::unordered_map<std::string, const Point2*> points;
        if (embedding) {
            for (std::size_t i = 0; i < embedding->ids.size(); ++i) points.emplace(embedding->ids[i], &embedding->points[i]);
        }
        for (const auto& r : project.corpus.records()) {
            bool keep = true;
            for (std::size_t k = 0; keep && k < axis_models.size(); ++k) {
                const auto* s = axis_models[k]->find(r.id);
                keep = s && filters.axis_filters[k].contains(s->pll);
            }
            if (keep && filters.category_filter) keep = categories.count(r.category) > 0;
            if (keep && embedding) {
                auto it = points.find(r.id);
                keep = it != points.end() && point_in_polygon(*it->second, *filters.lasso);
            }
            if (keep) sel.ids.push_back(r.id);
        }
    }
    if (!filters.category_filter && !filters.lasso) {
        for (const auto& p : project.probes) {
            bool keep = true;
            for (const auto& a : filters.axis_filters) {
                auto v = p.pll(a.model_id);
                keep = keep && v && a.contains(*v);
            }
            if (keep) sel.ids.push_back(p.id);
        }
    }
    return sel;
}

using ProviderSet = std::map<std::string, std::shared_ptr<const ScoreProvider>>;

inline std::string next_probe_id(const Project& project) {
    std::size_t max_seq = 0;
    for (const auto& p : project.probes) {
        if (p.id.rfind("probe:", 0) != 0) continue;
        try {
            max_seq = std::max<std::size_t>(max_seq, std::stoul(p.id.substr(6)));
        } catch (const std::exception&) {
        }
    }
    return "probe:" + std::to_string(max_seq + 1);
}

/**
 * Scores `text` on every model of the project and appends it as a probe.
 * Nothing is appended unless every model scored it.
 */
inline ProbeSentence add_probe(Project& project, const std::string& text, const ProviderSet& providers) {
    if (utf8::trim(text).empty()) throw InvalidArgument("probe text is empty");
    if (project.scores.empty()) throw InvalidArgument("project has no scored models to probe");

    ProbeSentence probe;
    probe.id = next_probe_id(project);
    probe.text = text;
    const std::vector<std::string> batch{text};
    for (const auto& model : project.scores.models()) {
        auto it = providers.find(model.model_id());
        if (it == providers.end() || !it->second) throw ProviderError("no live provider for model " + model.model_id());
        ScoreOptions opts;
        opts.exclude_punctuation = model.provider().exclude_punctuation;
        std::vector<TokenLogProbs> raw;
        try {
            raw = it->second->score(batch);
        } catch (const ProviderError& e) {
            throw ProviderError("model " + model.model_id() + ": " + e.what(), e.position());
        }
        if (raw.size() != 1) throw ProviderError("model " + model.model_id() + " returned no result for the probe");
        probe.scores.push_back(ProbeScore{model.model_id(), make_sentence_score(raw.front(), opts).pll});
    }
    project.probes.push_back(probe);
    return probe;
}

inline bool remove_probe(Project& project, std::string_view id) {
    auto it = std::find_if(project.probes.begin(), project.probes.end(), [&](const ProbeSentence& p) { return p.id == id; });
    if (it == project.probes.end()) return false;
    project.probes.erase(it);
    return true;
}

/// Cross-component consistency problems; empty when the project is sound.
inline std::vector<std::string> check_project(const Project& project) {
    std::vector<std::string> out;
    const auto& corpus = project.corpus;
    for (const auto& d : validate(corpus)) out.push_back("corpus: " + d.message);

    for (const auto& m : project.scores.models()) {
        std::set<std::string> have;
        for (const auto& s : m.scores()) {
            if (!corpus.contains(s.sentence_id)) out.push_back("scores for " + m.model_id() + " reference unknown sentence " + s.sentence_id);
            if (s.model_id != m.model_id()) out.push_back("score for " + s.sentence_id + " is filed under the wrong model");
            have.insert(s.sentence_id);
        }
        std::set<std::string> pending(m.pending().begin(), m.pending().end());
        for (const auto& id : pending) {
            if (!corpus.contains(id)) out.push_back("model " + m.model_id() + " has unknown pending sentence " + id);
        }
        for (const auto& r : corpus.records()) {
            if (!have.count(r.id) && !pending.count(r.id)) out.push_back("model " + m.model_id() + " has no score for " + r.id);
        }
    }

    std::set<std::string> methods;
    for (const auto& e : project.embeddings) {
        if (!methods.insert(std::string(to_string(e.method))).second) out.push_back("more than one " + std::string(to_string(e.method)) + " embedding");
        std::set<std::string> ids(e.ids.begin(), e.ids.end());
        if (ids.size() != e.ids.size() || e.ids.size() != e.points.size()) out.push_back("embedding " + std::string(to_string(e.method)) + " has duplicate or misaligned ids");
        std::set<std::string> corpus_ids;
        for (const auto& r : corpus.records()) corpus_ids.insert(r.id);
        if (ids != corpus_ids) out.push_back("embedding " + std::string(to_string(e.method)) + " does not cover exactly the corpus ids");
    }

    try {
        project.filters.check();
    } catch (const InvalidArgument& e) {
        out.push_back(std::string("filters: ") + e.what());
    }
    for (const auto& a : project.filters.axis_filters) {
        if (!project.scores.has_model(a.model_id)) out.push_back("filter references unscored model " + a.model_id);
    }
    if (project.filters.category_filter) {
        for (const auto& c : *project.filters.category_filter) {
            if (!corpus.has_category(c)) out.push_back("filter references unknown category " + c);
        }
    }

    std::set<std::string> probe_ids;
    const auto model_ids = project.scores.model_ids();
    for (const auto& p : project.probes) {
        if (p.id.rfind("probe:", 0) != 0) out.push_back("probe id " + p.id + " lacks the probe: prefix");
        if (!probe_ids.insert(p.id).second || corpus.contains(p.id)) out.push_back("probe id " + p.id + " is not unique");
        std::vector<std::string> scored;
        for (const auto& s : p.scores) scored.push_back(s.model_id);
        if (scored != model_ids) out.push_back("probe " + p.id + " is not scored on every model");
    }

    for (const auto& c : project.view.highlight_categories) {
        if (!corpus.has_category(c)) out.push_back("view highlights unknown category " + c);
    }
    const auto std_cols = standard_columns();
    for (const auto& c : project.view.visible_columns) {
        const bool known = std::find(std_cols.begin(), std_cols.end(), c) != std_cols.end() ||
                           std::find(corpus.columns().begin(), corpus.columns().end(), c) != corpus.columns().end();
        if (!known) out.push_back("view shows unknown column " + c);
    }
    if (project.view.active_embedding && !project.embedding(*project.view.active_embedding)) {
        out.push_back("active embedding " + *project.view.active_embedding + " is missing");
    }
    return out;
}

} // namespace biaslens
