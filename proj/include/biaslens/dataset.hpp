#pragma once

#include "biaslens/error.hpp"
#include "biaslens/utf8.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstddef>
#include <istream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

/**
 * @file dataset.hpp
 *
 * @brief Paired-sentence bias datasets: records, pairs and the corpus index,
 * plus JSON-lines and CSV readers/writers.
 */

namespace biaslens {

enum class Group { base, stereotype };

inline std::string_view to_string(Group g) {
    return g == Group::base ? "base" : "stereotype";
}

inline std::optional<Group> parse_group(std::string_view s) {
    if (s == "base") return Group::base;
    if (s == "stereotype") return Group::stereotype;
    return std::nullopt;
}

/// Category assigned when the input carries no category column.
inline constexpr std::string_view default_category = "uncategorized";

/**
 * One benchmark sentence. `paraphrase_of` links a paraphrase to the record it
 * was derived from; originals leave it empty. `extra` keeps every
 * unrecognized input column in input order.
 */
struct SentenceRecord {
    std::string id;
    std::string pair_id;
    Group group = Group::base;
    std::string category;
    std::string text;
    std::optional<std::string> paraphrase_of;
    std::vector<std::pair<std::string, std::string>> extra;

    const std::string* extra_value(std::string_view column) const {
        for (const auto& [k, v] : extra) {
            if (k == column) return &v;
        }
        return nullptr;
    }

    bool operator==(const SentenceRecord&) const = default;
};

struct SentencePair {
    std::string pair_id;
    std::vector<std::string> base_ids;
    std::vector<std::string> stereotype_ids;
    std::string category;

    bool operator==(const SentencePair&) const = default;
};

/**
 * @brief Immutable, indexed collection of sentence records.
 *
 * Pairs are derived by grouping records on `pair_id` (first-seen order) and
 * categories are deduplicated in first-seen order. A corpus built from
 * inconsistent records is still constructible; `validate()` reports what is
 * wrong with it.
 */
class Corpus {
public:
    Corpus() = default;

    static Corpus from_records(std::vector<SentenceRecord> records, std::vector<std::string> columns = {}) {
        Corpus c;
        c.records_ = std::move(records);

        std::set<std::string> seen_columns(columns.begin(), columns.end());
        c.columns_ = std::move(columns);
        std::set<std::string> seen_categories;
        std::unordered_map<std::string, std::size_t> pair_index;

        for (std::size_t i = 0; i < c.records_.size(); ++i) {
            const auto& r = c.records_[i];
            c.index_.emplace(r.id, i); // first occurrence wins on duplicates
            if (seen_categories.insert(r.category).second) c.categories_.push_back(r.category);
            for (const auto& kv : r.extra) {
                if (seen_columns.insert(kv.first).second) c.columns_.push_back(kv.first);
            }

            auto [it, inserted] = pair_index.emplace(r.pair_id, c.pairs_.size());
            if (inserted) c.pairs_.push_back(SentencePair{r.pair_id, {}, {}, r.category});
            auto& pair = c.pairs_[it->second];
            (r.group == Group::base ? pair.base_ids : pair.stereotype_ids).push_back(r.id);
        }
        return c;
    }

    const std::vector<SentenceRecord>& records() const noexcept { return records_; }
    const std::vector<SentencePair>& pairs() const noexcept { return pairs_; }
    const std::vector<std::string>& categories() const noexcept { return categories_; }
    const std::vector<std::string>& columns() const noexcept { return columns_; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

    const SentenceRecord* find(std::string_view id) const {
        auto it = index_.find(std::string(id));
        return it == index_.end() ? nullptr : &records_[it->second];
    }

    bool contains(std::string_view id) const { return find(id) != nullptr; }

    bool has_category(std::string_view category) const {
        return std::find(categories_.begin(), categories_.end(), category) != categories_.end();
    }

    std::vector<std::string> texts() const {
        std::vector<std::string> out;
        out.reserve(records_.size());
        for (const auto& r : records_) out.push_back(r.text);
        return out;
    }

    bool operator==(const Corpus& other) const {
        return records_ == other.records_ && columns_ == other.columns_;
    }

private:
    std::vector<SentenceRecord> records_;
    std::vector<SentencePair> pairs_;
    std::vector<std::string> categories_;
    std::vector<std::string> columns_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class DatasetFormat { jsonl, csv };

inline std::optional<DatasetFormat> parse_format(std::string_view s) {
    if (s == "jsonl" || s == "json") return DatasetFormat::jsonl;
    if (s == "csv") return DatasetFormat::csv;
    return std::nullopt;
}

/// Guesses the format from a file name; JSON-lines unless it ends in ".csv".
inline DatasetFormat format_for_path(std::string_view path) {
    return path.size() >= 4 && path.substr(path.size() - 4) == ".csv" ? DatasetFormat::csv : DatasetFormat::jsonl;
}

namespace detail {

inline const std::vector<std::string_view>& known_fields() {
    static const std::vector<std::string_view> fields{"id", "pair_id", "group", "category", "text", "paraphrase_of"};
    return fields;
}

inline bool is_known_field(std::string_view name) {
    const auto& f = known_fields();
    return std::find(f.begin(), f.end(), name) != f.end();
}

struct RawRow {
    std::size_t line;
    std::vector<std::pair<std::string, std::optional<std::string>>> fields; // nullopt = JSON null
};

inline std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < text.size()) lines.push_back(text.substr(start));
            break;
        }
        auto line = text.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        start = nl + 1;
    }
    return lines;
}

inline std::vector<RawRow> read_jsonl_rows(std::string_view text) {
    std::vector<RawRow> rows;
    auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        if (utf8::trim(lines[i]).empty()) continue;
        nlohmann::ordered_json obj;
        try {
            obj = nlohmann::ordered_json::parse(lines[i]);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        if (!obj.is_object()) throw ParseError("row is not a JSON object", line_no);

        RawRow row{line_no, {}};
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            const auto& v = it.value();
            std::optional<std::string> value;
            if (v.is_string()) value = v.get<std::string>();
            else if (!v.is_null()) value = v.dump();
            row.fields.emplace_back(it.key(), std::move(value));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// RFC 4180 records with quoted fields. Returns (starting line, cells) per record.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> read_csv_records(std::string_view text) {
    std::vector<std::pair<std::size_t, std::vector<std::string>>> out;
    std::vector<std::string> cells;
    std::string cell;
    bool in_quotes = false;
    bool cell_quoted = false;
    std::size_t line = 1;
    std::size_t record_line = 1;

    auto end_record = [&] {
        cells.push_back(std::move(cell));
        cell.clear();
        bool blank = cells.size() == 1 && cells[0].empty() && !cell_quoted;
        if (!blank) out.emplace_back(record_line, std::move(cells));
        cells.clear();
        cell_quoted = false;
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char ch = text[i];
        if (in_quotes) {
            if (ch == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    cell.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (ch == '\n') ++line;
                cell.push_back(ch);
            }
            continue;
        }
        switch (ch) {
        case '"':
            if (!cell.empty()) throw ParseError("unexpected quote inside unquoted CSV field", line);
            in_quotes = true;
            cell_quoted = true;
            break;
        case ',':
            cells.push_back(std::move(cell));
            cell.clear();
            break;
        case '\r':
            if (i + 1 < text.size() && text[i + 1] == '\n') break;
            cell.push_back(ch);
            break;
        case '\n':
            end_record();
            ++line;
            record_line = line;
            break;
        default:
            cell.push_back(ch);
        }
    }
    if (in_quotes) throw ParseError("unterminated quoted CSV field", record_line);
    if (!cell.empty() || !cells.empty() || cell_quoted) end_record();
    return out;
}

inline std::vector<RawRow> read_csv_rows(std::string_view text, std::vector<std::string>& header) {
    auto records = read_csv_records(text);
    if (records.empty()) return {};
    header = std::move(records.front().second);
    std::set<std::string> unique(header.begin(), header.end());
    if (unique.size() != header.size()) throw ParseError("duplicate column name in CSV header", records.front().first);

    std::vector<RawRow> rows;
    for (std::size_t r = 1; r < records.size(); ++r) {
        auto& [line, cells] = records[r];
        if (cells.size() != header.size()) {
            throw ParseError("expected " + std::to_string(header.size()) + " columns, found " + std::to_string(cells.size()), line);
        }
        RawRow row{line, {}};
        for (std::size_t c = 0; c < cells.size(); ++c) {
            std::optional<std::string> value = std::move(cells[c]);
            // empty optional columns mean "absent"
            if (value->empty() && (header[c] == "paraphrase_of" || header[c] == "category")) value.reset();
            row.fields.emplace_back(header[c], std::move(value));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline SentenceRecord record_from_row(const RawRow& row) {
    auto lookup = [&](std::string_view name) -> const std::optional<std::string>* {
        for (const auto& f : row.fields) {
            if (f.first == name) return &f.second;
        }
        return nullptr;
    };
    auto required = [&](std::string_view name) -> std::string {
        auto v = lookup(name);
        if (!v || !v->has_value()) throw ParseError("missing required field '" + std::string(name) + "'", row.line, std::string(name));
        if ((*v)->empty()) throw ParseError("required field '" + std::string(name) + "' is empty", row.line, std::string(name));
        return **v;
    };

    SentenceRecord rec;
    rec.id = required("id");
    rec.pair_id = required("pair_id");
    auto group = required("group");
    auto g = parse_group(group);
    if (!g) throw ParseError("group must be 'base' or 'stereotype', got '" + group + "'", row.line, "group");
    rec.group = *g;
    rec.text = required("text");
    if (utf8::trim(rec.text).empty()) throw ParseError("required field 'text' is blank", row.line, "text");

    auto cat = lookup("category");
    rec.category = (cat && cat->has_value() && !(*cat)->empty()) ? **cat : std::string(default_category);
    if (auto p = lookup("paraphrase_of"); p && p->has_value() && !(*p)->empty()) rec.paraphrase_of = **p;

    for (const auto& [name, value] : row.fields) {
        if (!is_known_field(name)) rec.extra.emplace_back(name, value.value_or(std::string{}));
    }
    return rec;
}

} // namespace detail

/**
 * Parses a JSON-lines or CSV dataset. Required fields are id, pair_id, group
 * and text; category falls back to "uncategorized"; every other field lands
 * in `extra`. Throws ParseError naming the line for invalid UTF-8, missing
 * fields, bad group values, duplicate ids and dangling paraphrase links.
 */
inline Corpus parse_dataset(std::string_view input, DatasetFormat format) {
    if (input.size() >= 3 && input.substr(0, 3) == "\xEF\xBB\xBF") input.remove_prefix(3);
    if (auto bad = utf8::find_invalid(input)) {
        auto line = 1 + static_cast<std::size_t>(std::count(input.begin(), input.begin() + static_cast<std::ptrdiff_t>(*bad), '\n'));
        throw ParseError("input is not valid UTF-8", line);
    }

    std::vector<std::string> header;
    auto rows = format == DatasetFormat::jsonl ? detail::read_jsonl_rows(input) : detail::read_csv_rows(input, header);

    std::vector<std::string> columns;
    for (const auto& h : header) {
        if (!detail::is_known_field(h)) columns.push_back(h);
    }

    std::vector<SentenceRecord> records;
    records.reserve(rows.size());
    std::unordered_map<std::string, std::size_t> first_line;
    for (const auto& row : rows) {
        auto rec = detail::record_from_row(row);
        if (auto [it, inserted] = first_line.emplace(rec.id, row.line); !inserted) {
            throw ParseError("duplicate id '" + rec.id + "' (first seen on line " + std::to_string(it->second) + ")", row.line, "id");
        }
        records.push_back(std::move(rec));
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& p = records[i].paraphrase_of;
        if (p && !first_line.count(*p)) {
            throw ParseError("paraphrase_of references unknown id '" + *p + "'", rows[i].line, "paraphrase_of");
        }
    }
    return Corpus::from_records(std::move(records), std::move(columns));
}

inline Corpus parse_dataset(std::istream& in, DatasetFormat format) {
    std::string buffer{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return parse_dataset(std::string_view(buffer), format);
}

namespace detail {

inline std::string csv_escape(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

} // namespace detail

/// Writes a corpus back out. parse(serialize(c)) reproduces c for both formats.
inline std::string serialize_dataset(const Corpus& corpus, DatasetFormat format) {
    std::string out;
    if (format == DatasetFormat::jsonl) {
        for (const auto& r : corpus.records()) {
            nlohmann::ordered_json row;
            row["id"] = r.id;
            row["pair_id"] = r.pair_id;
            row["group"] = to_string(r.group);
            row["category"] = r.category;
            row["text"] = r.text;
            row["paraphrase_of"] = r.paraphrase_of ? nlohmann::ordered_json(*r.paraphrase_of) : nlohmann::ordered_json(nullptr);
            for (const auto& [k, v] : r.extra) row[k] = v;
            out += row.dump();
            out.push_back('\n');
        }
        return out;
    }

    std::vector<std::string> header{"id", "pair_id", "group", "category", "text", "paraphrase_of"};
    header.insert(header.end(), corpus.columns().begin(), corpus.columns().end());
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out.push_back(',');
        out += detail::csv_escape(header[i]);
    }
    out.push_back('\n');
    for (const auto& r : corpus.records()) {
        out += detail::csv_escape(r.id) + ',' + detail::csv_escape(r.pair_id) + ',' + std::string(to_string(r.group)) + ',' +
               detail::csv_escape(r.category) + ',' + detail::csv_escape(r.text) + ',' + detail::csv_escape(r.paraphrase_of.value_or(""));
        for (const auto& col : corpus.columns()) {
            out.push_back(',');
            if (auto v = r.extra_value(col)) out += detail::csv_escape(*v);
        }
        out.push_back('\n');
    }
    return out;
}

enum class Severity { error, warning };

struct Diagnostic {
    Severity severity = Severity::error;
    std::string record_id;
    std::string message;

    bool operator==(const Diagnostic&) const = default;
};

namespace detail {

// Follows paraphrase_of links from `start`. Returns the root id, or the cycle
// (in traversal order, repeated node last) when the chain loops.
struct ChainResult {
    std::optional<std::string> root;
    std::vector<std::string> cycle;
    std::optional<std::string> dangling;
};

inline ChainResult follow_chain(const Corpus& corpus, const std::string& start) {
    std::vector<std::string> path;
    std::set<std::string> on_path;
    std::string current = start;
    while (true) {
        if (!on_path.insert(current).second) {
            auto it = std::find(path.begin(), path.end(), current);
            std::vector<std::string> cycle(it, path.end());
            cycle.push_back(current);
            return {std::nullopt, std::move(cycle), std::nullopt};
        }
        path.push_back(current);
        const auto* rec = corpus.find(current);
        if (!rec) return {std::nullopt, {}, current};
        if (!rec->paraphrase_of) return {current, {}, std::nullopt};
        current = *rec->paraphrase_of;
    }
}

inline std::string join(const std::vector<std::string>& items, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

} // namespace detail

/**
 * Checks every record and pair invariant. Returns an empty list iff the
 * corpus is consistent. Originals are checked against their pair's category;
 * paraphrases are checked against the record they paraphrase, so a single
 * bad link yields a single diagnostic.
 */
inline std::vector<Diagnostic> validate(const Corpus& corpus) {
    std::vector<Diagnostic> out;
    auto error = [&](std::string id, std::string message) {
        out.push_back(Diagnostic{Severity::error, std::move(id), std::move(message)});
    };

    std::set<std::string> seen;
    for (const auto& r : corpus.records()) {
        if (r.id.empty()) error(r.id, "record has an empty id");
        if (!seen.insert(r.id).second) error(r.id, "duplicate id " + r.id);
        if (utf8::trim(r.text).empty()) error(r.id, "record " + r.id + " has empty text");
        if (utf8::find_invalid(r.text)) error(r.id, "record " + r.id + " text is not valid UTF-8");
    }

    std::set<std::string> reported_cycles;
    for (const auto& r : corpus.records()) {
        if (!r.paraphrase_of) continue;
        const auto* target = corpus.find(*r.paraphrase_of);
        if (!target) {
            error(r.id, "record " + r.id + " is a paraphrase of unknown id " + *r.paraphrase_of);
            continue;
        }
        auto chain = detail::follow_chain(corpus, r.id);
        if (!chain.cycle.empty()) {
            std::vector<std::string> members(chain.cycle.begin(), chain.cycle.end() - 1);
            std::sort(members.begin(), members.end());
            if (reported_cycles.insert(detail::join(members, ",")).second) {
                error(r.id, "paraphrase cycle " + detail::join(chain.cycle, " -> "));
            }
            continue;
        }
        std::vector<std::string> differs;
        if (target->pair_id != r.pair_id) differs.emplace_back("pair_id");
        if (target->group != r.group) differs.emplace_back("group");
        if (target->category != r.category) differs.emplace_back("category");
        if (!differs.empty()) {
            error(r.id, "record " + r.id + " is a paraphrase of " + target->id + " but differs in " + detail::join(differs, ", "));
        }
    }

    for (const auto& p : corpus.pairs()) {
        const std::string& anchor = !p.base_ids.empty() ? p.base_ids.front() : p.stereotype_ids.front();
        if (p.base_ids.empty()) error(anchor, "pair " + p.pair_id + " has no base sentence");
        if (p.stereotype_ids.empty()) error(anchor, "pair " + p.pair_id + " has no stereotype sentence");
        for (const auto* side : {&p.base_ids, &p.stereotype_ids}) {
            for (const auto& id : *side) {
                const auto* rec = corpus.find(id);
                if (rec && !rec->paraphrase_of && rec->category != p.category) {
                    error(id, "record " + id + " has category " + rec->category + " but pair " + p.pair_id + " is " + p.category);
                }
            }
        }
    }
    return out;
}

inline bool has_errors(const std::vector<Diagnostic>& diagnostics) {
    return std::any_of(diagnostics.begin(), diagnostics.end(), [](const Diagnostic& d) { return d.severity == Severity::error; });
}

/**
 * Maps every original (a record without `paraphrase_of`) to itself plus all
 * records whose paraphrase chain resolves to it, in corpus order. Throws
 * InvalidArgument naming the cycle or the dangling link.
 */
inline std::map<std::string, std::vector<std::string>> paraphrase_groups(const Corpus& corpus) {
    std::map<std::string, std::vector<std::string>> groups;
    std::unordered_map<std::string, std::string> root_of;
    for (const auto& r : corpus.records()) {
        if (!r.paraphrase_of) {
            root_of[r.id] = r.id;
            continue;
        }
        auto chain = detail::follow_chain(corpus, r.id);
        if (!chain.cycle.empty()) throw InvalidArgument("paraphrase cycle: " + detail::join(chain.cycle, " -> "));
        if (chain.dangling) throw InvalidArgument("record " + r.id + " has a paraphrase chain ending at unknown id " + *chain.dangling);
        root_of[r.id] = *chain.root;
    }
    for (const auto& r : corpus.records()) groups[root_of[r.id]].push_back(r.id);
    return groups;
}

} // namespace biaslens
