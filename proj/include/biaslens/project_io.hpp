#pragma once

#include "biaslens/dataset.hpp"
#include "biaslens/embedding.hpp"
#include "biaslens/error.hpp"
#include "biaslens/scoring.hpp"
#include "biaslens/session.hpp"

#include <json.hpp>
#include <openssl/evp.h>
#include <zlib.h>

#include <cstddef>
#include <cstdio>
#include <set>
#include <string>
#include <string_view>
#include <vector>

/**
 * @file project_io.hpp
 *
 * @brief Project file format.
 *
 * A project file is one JSON document with the fields version, corpus,
 * scores, embeddings, filters, probes, view_settings and checksum. The
 * checksum is the hex SHA-256 of the compact, key-sorted dump of every other
 * field. Files may be gzip-compressed; readers detect that from the magic
 * bytes.
 */

namespace biaslens {

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0x0F]);
    }
    return out;
}

inline bool is_gzip(std::string_view bytes) {
    return bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1F && static_cast<unsigned char>(bytes[1]) == 0x8B;
}

inline std::string gzip_compress(std::string_view data) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) throw Error("deflateInit2 failed");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
    zs.avail_in = static_cast<uInt>(data.size());
    std::string out;
    char buf[16384];
    int rc;
    do {
        zs.next_out = reinterpret_cast<Bytef*>(buf);
        zs.avail_out = sizeof(buf);
        rc = deflate(&zs, Z_FINISH);
        out.append(buf, sizeof(buf) - zs.avail_out);
    } while (rc == Z_OK);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw Error("gzip compression failed");
    return out;
}

inline std::string gzip_decompress(std::string_view data) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 16) != Z_OK) throw Error("inflateInit2 failed");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
    zs.avail_in = static_cast<uInt>(data.size());
    std::string out;
    char buf[16384];
    int rc;
    do {
        zs.next_out = reinterpret_cast<Bytef*>(buf);
        zs.avail_out = sizeof(buf);
        rc = inflate(&zs, Z_NO_FLUSH);
        out.append(buf, sizeof(buf) - zs.avail_out);
    } while (rc == Z_OK);
    inflateEnd(&zs);
    if (rc != Z_STREAM_END) throw LoadError(LoadError::Kind::checksum, "gzip stream is truncated or corrupt; checksum cannot be verified");
    return out;
}

// JSON encoding of project components

inline nlohmann::json corpus_to_json(const Corpus& c) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : c.records()) {
        nlohmann::json extra = nlohmann::json::array();
        for (const auto& [k, v] : r.extra) extra.push_back({k, v});
        records.push_back({{"id", r.id},
                           {"pair_id", r.pair_id},
                           {"group", to_string(r.group)},
                           {"category", r.category},
                           {"text", r.text},
                           {"paraphrase_of", r.paraphrase_of ? nlohmann::json(*r.paraphrase_of) : nlohmann::json(nullptr)},
                           {"extra", extra}});
    }
    return {{"columns", c.columns()}, {"records", records}};
}

inline Corpus corpus_from_json(const nlohmann::json& j) {
    std::vector<SentenceRecord> records;
    for (const auto& r : j.at("records")) {
        SentenceRecord rec;
        rec.id = r.at("id").get<std::string>();
        rec.pair_id = r.at("pair_id").get<std::string>();
        auto g = parse_group(r.at("group").get<std::string>());
        if (!g) throw InvalidArgument("record " + rec.id + " has an invalid group");
        rec.group = *g;
        rec.category = r.at("category").get<std::string>();
        rec.text = r.at("text").get<std::string>();
        if (!r.at("paraphrase_of").is_null()) rec.paraphrase_of = r.at("paraphrase_of").get<std::string>();
        for (const auto& kv : r.at("extra")) rec.extra.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
        records.push_back(std::move(rec));
    }
    return Corpus::from_records(std::move(records), j.at("columns").get<std::vector<std::string>>());
}

inline nlohmann::json score_matrix_to_json(const ScoreMatrix& m) {
    nlohmann::json models = nlohmann::json::array();
    for (const auto& ms : m.models()) {
        nlohmann::json scores = nlohmann::json::array();
        for (const auto& s : ms.scores()) {
            std::vector<std::string> tokens;
            std::vector<double> lps;
            for (const auto& t : s.token_scores) {
                tokens.push_back(t.token);
                lps.push_back(t.log_prob);
            }
            scores.push_back({{"id", s.sentence_id}, {"pll", s.pll}, {"tokens", tokens}, {"token_log_probs", lps}});
        }
        models.push_back({{"model_id", ms.model_id()},
                          {"provider", provider_spec_to_json(ms.provider())},
                          {"scores", scores},
                          {"pending", ms.pending()}});
    }
    return {{"models", models}};
}

inline ScoreMatrix score_matrix_from_json(const nlohmann::json& j) {
    ScoreMatrix matrix;
    for (const auto& mj : j.at("models")) {
        ModelScores ms(mj.at("model_id").get<std::string>(), provider_spec_from_json(mj.at("provider")));
        for (const auto& sj : mj.at("scores")) {
            SentenceScore s;
            s.sentence_id = sj.at("id").get<std::string>();
            s.pll = sj.at("pll").get<double>();
            const auto tokens = sj.at("tokens").get<std::vector<std::string>>();
            const auto lps = sj.at("token_log_probs").get<std::vector<double>>();
            if (tokens.size() != lps.size()) throw InvalidArgument("score for " + s.sentence_id + " has mismatched tokens");
            for (std::size_t i = 0; i < tokens.size(); ++i) s.token_scores.push_back(TokenScore{tokens[i], lps[i]});
            ms.add(std::move(s));
        }
        ms.set_pending(mj.at("pending").get<std::vector<std::string>>());
        matrix.add_model(std::move(ms));
    }
    return matrix;
}

inline nlohmann::json filters_to_json(const FilterSet& f) {
    nlohmann::json axes = nlohmann::json::array();
    for (const auto& a : f.axis_filters) axes.push_back({{"model_id", a.model_id}, {"min", a.min}, {"max", a.max}});
    nlohmann::json lasso = nullptr;
    if (f.lasso) {
        lasso = nlohmann::json::array();
        for (const auto& p : *f.lasso) lasso.push_back({p[0], p[1]});
    }
    return {{"axis_filters", axes},
            {"category_filter", f.category_filter ? nlohmann::json(*f.category_filter) : nlohmann::json(nullptr)},
            {"lasso", lasso},
            {"probe_only", f.probe_only}};
}

/// Parses a FilterSet; a repeated axis replaces the earlier one.
inline FilterSet filters_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidArgument("filter set must be a JSON object");
    FilterSet f;
    if (j.contains("axis_filters") && !j["axis_filters"].is_null()) {
        for (const auto& a : j["axis_filters"]) {
            if (!a.is_object() || !a.contains("model_id") || !a.contains("min") || !a.contains("max") || !a["min"].is_number() ||
                !a["max"].is_number()) {
                throw InvalidArgument("axis filter needs model_id, min and max");
            }
            f.set_axis_filter(AxisFilter{a["model_id"].get<std::string>(), a["min"].get<double>(), a["max"].get<double>()});
        }
    }
    if (j.contains("category_filter") && !j["category_filter"].is_null()) {
        f.category_filter = j["category_filter"].get<std::vector<std::string>>();
    }
    if (j.contains("lasso") && !j["lasso"].is_null()) {
        std::vector<Point2> poly;
        for (const auto& p : j["lasso"]) {
            if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) throw InvalidArgument("lasso vertices must be [x, y]");
            poly.push_back({p[0].get<double>(), p[1].get<double>()});
        }
        f.lasso = std::move(poly);
    }
    f.probe_only = j.value("probe_only", false);
    f.check();
    return f;
}

inline nlohmann::json probe_to_json(const ProbeSentence& p) {
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& s : p.scores) scores.push_back({{"model_id", s.model_id}, {"pll", s.pll}});
    return {{"id", p.id}, {"text", p.text}, {"scores", scores}};
}

inline ProbeSentence probe_from_json(const nlohmann::json& j) {
    ProbeSentence p;
    p.id = j.at("id").get<std::string>();
    p.text = j.at("text").get<std::string>();
    for (const auto& s : j.at("scores")) p.scores.push_back(ProbeScore{s.at("model_id").get<std::string>(), s.at("pll").get<double>()});
    return p;
}

inline nlohmann::json view_to_json(const ViewSettings& v) {
    return {{"highlight_categories", v.highlight_categories},
            {"split", v.split},
            {"visible_columns", v.visible_columns},
            {"active_embedding", v.active_embedding ? nlohmann::json(*v.active_embedding) : nlohmann::json(nullptr)}};
}

inline ViewSettings view_from_json(const nlohmann::json& j) {
    ViewSettings v;
    v.highlight_categories = j.at("highlight_categories").get<std::vector<std::string>>();
    v.split = j.at("split").get<bool>();
    v.visible_columns = j.at("visible_columns").get<std::vector<std::string>>();
    if (!j.at("active_embedding").is_null()) v.active_embedding = j.at("active_embedding").get<std::string>();
    return v;
}

/// Everything except the checksum.
inline nlohmann::json project_payload(const Project& p) {
    nlohmann::json embeddings = nlohmann::json::array();
    for (const auto& e : p.embeddings) embeddings.push_back(embedding_to_json(e));
    nlohmann::json probes = nlohmann::json::array();
    for (const auto& pr : p.probes) probes.push_back(probe_to_json(pr));
    return {{"version", p.version},
            {"corpus", corpus_to_json(p.corpus)},
            {"scores", score_matrix_to_json(p.scores)},
            {"embeddings", embeddings},
            {"filters", filters_to_json(p.filters)},
            {"probes", probes},
            {"view_settings", view_to_json(p.view)}};
}

inline std::string save_project(const Project& project, bool gzip = false) {
    auto doc = project_payload(project);
    doc["checksum"] = sha256_hex(doc.dump());
    auto text = doc.dump();
    return gzip ? gzip_compress(text) : text;
}

/**
 * Parses and verifies a project file. Throws LoadError for truncated or
 * corrupt bytes, unsupported versions or unknown fields, checksum mismatch,
 * and referential breakage; nothing is returned unless all checks pass.
 */
inline Project load_project(std::string_view bytes) {
    std::string inflated;
    if (is_gzip(bytes)) {
        inflated = gzip_decompress(bytes);
        bytes = inflated;
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(bytes);
    } catch (const nlohmann::json::parse_error& e) {
        throw LoadError(LoadError::Kind::checksum, std::string("project file is truncated or corrupt; checksum cannot be verified: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("version") || !doc["version"].is_number_integer()) {
        throw LoadError(LoadError::Kind::corrupt, "project file has no format version");
    }
    const auto version = doc["version"].get<long long>();
    if (version != project_format_version) {
        throw LoadError(LoadError::Kind::version, "project format version " + std::to_string(version) + " is not supported (this build reads version " +
                                                      std::to_string(project_format_version) + ")");
    }
    static const std::set<std::string> fields{"version", "corpus", "scores", "embeddings", "filters", "probes", "view_settings", "checksum"};
    for (const auto& item : doc.items()) {
        if (!fields.count(item.key())) {
            throw LoadError(LoadError::Kind::version, "unknown field '" + item.key() + "' for project format version " + std::to_string(version));
        }
    }
    for (const auto& f : fields) {
        if (!doc.contains(f)) throw LoadError(LoadError::Kind::corrupt, "project file is missing field '" + f + "'");
    }
    if (!doc["checksum"].is_string()) throw LoadError(LoadError::Kind::checksum, "project checksum is not a string");
    const auto stored = doc["checksum"].get<std::string>();
    doc.erase("checksum");
    if (sha256_hex(doc.dump()) != stored) throw LoadError(LoadError::Kind::checksum, "project checksum mismatch");

    Project p;
    try {
        p.version = static_cast<int>(version);
        p.corpus = corpus_from_json(doc["corpus"]);
        p.scores = score_matrix_from_json(doc["scores"]);
        for (const auto& e : doc["embeddings"]) p.embeddings.push_back(embedding_from_json(e));
        p.filters = filters_from_json(doc["filters"]);
        for (const auto& pr : doc["probes"]) p.probes.push_back(probe_from_json(pr));
        p.view = view_from_json(doc["view_settings"]);
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(LoadError::Kind::corrupt, std::string("project file is malformed: ") + e.what());
    } catch (const Error& e) {
        throw LoadError(LoadError::Kind::corrupt, std::string("project file is malformed: ") + e.what());
    }
    if (auto problems = check_project(p); !problems.empty()) {
        throw LoadError(LoadError::Kind::reference, "project file has referential problems", std::move(problems));
    }
    return p;
}

} // namespace biaslens
