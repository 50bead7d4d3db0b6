#include "valign/ingest.hpp"

#include <algorithm>
#include <optional>
#include <utility>

#include "valign/error.hpp"
#include "valign/text.hpp"

namespace valign::ingest {

namespace {

struct Range {
    std::size_t begin = 0;
    std::size_t end = 0;
};

struct Section {
    std::vector<std::string> path;
    std::vector<Range> lines; // body lines, newline excluded
};

struct Heading {
    std::size_t level = 0;
    std::string title;
};

// ATX headings only: up to three spaces of indent, 1-6 '#', then space or EOL.
std::optional<Heading> parse_heading(std::string_view line) {
    std::size_t i = 0;
    while (i < line.size() && i < 3 && line[i] == ' ') ++i;
    std::size_t hashes = 0;
    while (i + hashes < line.size() && line[i + hashes] == '#') ++hashes;
    if (hashes == 0 || hashes > 6) return std::nullopt;
    const std::size_t after = i + hashes;
    if (after < line.size() && line[after] != ' ' && line[after] != '\t') return std::nullopt;
    std::string_view title = text::trim(line.substr(after));
    // closing sequence "## Title ##"
    while (!title.empty() && title.back() == '#') title.remove_suffix(1);
    return Heading{hashes, std::string(text::trim(title))};
}

std::vector<Range> split_lines(std::string_view s) {
    std::vector<Range> lines;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == '\n') {
            if (i > start || i < s.size()) lines.push_back({start, i});
            start = i + 1;
        }
    }
    return lines;
}

std::vector<Section> sectionize(const RawDocument& doc, const ChunkPolicy& policy) {
    const std::string_view s = doc.text;
    const bool headings = policy.split_on_headings && doc.format == DocFormat::markdown;
    std::vector<Section> sections(1);
    std::vector<Heading> stack;
    for (const Range& line : split_lines(s)) {
        if (headings) {
            if (auto h = parse_heading(s.substr(line.begin, line.end - line.begin))) {
                while (!stack.empty() && stack.back().level >= h->level) stack.pop_back();
                stack.push_back(*h);
                Section next;
                for (const auto& st : stack) next.path.push_back(st.title);
                sections.push_back(std::move(next));
                continue;
            }
        }
        sections.back().lines.push_back(line);
    }
    return sections;
}

// Paragraphs are maximal runs of non-blank lines, trimmed to their content.
std::vector<Range> paragraphs(std::string_view s, const std::vector<Range>& lines) {
    std::vector<Range> out;
    std::optional<Range> cur;
    for (const Range& line : lines) {
        const std::string_view content = s.substr(line.begin, line.end - line.begin);
        if (text::is_blank(content)) {
            if (cur) out.push_back(*cur);
            cur.reset();
            continue;
        }
        if (!cur) cur = Range{line.begin, line.end};
        cur->end = line.end;
    }
    if (cur) out.push_back(*cur);
    for (Range& r : out) {
        const std::string_view t = text::trim(s.substr(r.begin, r.end - r.begin));
        r.begin = static_cast<std::size_t>(t.data() - s.data());
        r.end = r.begin + t.size();
    }
    return out;
}

std::size_t estimate(std::string_view s, const Range& r, TokenEstimator e) {
    return estimate_tokens(s.substr(r.begin, r.end - r.begin), e);
}

// Refine units until each fits the budget on its own: paragraph -> words -> code point runs.
void refine(std::string_view s, const Range& unit, const ChunkPolicy& policy, std::vector<Range>& out) {
    const auto e = policy.token_estimator;
    if (estimate(s, unit, e) <= policy.max_tokens) {
        out.push_back(unit);
        return;
    }
    const std::string_view body = s.substr(unit.begin, unit.end - unit.begin);
    const auto words = text::split_ws(body);
    if (words.size() > 1) {
        for (const auto w : words) {
            const auto b = static_cast<std::size_t>(w.data() - s.data());
            refine(s, Range{b, b + w.size()}, policy, out);
        }
        return;
    }
    // one oversized word (chars_div4 only): cut at code point boundaries
    const std::size_t max_cp = policy.max_tokens * 4;
    std::size_t pos = unit.begin;
    while (pos < unit.end) {
        std::size_t cp = 0;
        std::size_t end = pos;
        while (end < unit.end && cp < max_cp) {
            ++end;
            while (end < unit.end && (static_cast<unsigned char>(s[end]) & 0xC0) == 0x80) ++end;
            ++cp;
        }
        out.push_back({pos, end});
        pos = end;
    }
}

} // namespace

void ChunkPolicy::validate() const {
    if (max_tokens < 32) throw ConfigError("chunk policy max_tokens must be >= 32");
}

std::string normalize_text(std::string_view raw) {
    if (!text::is_valid_utf8(raw)) throw InputError("undecodable bytes: input is not valid UTF-8");
    if (raw.substr(0, 3) == "\xEF\xBB\xBF") raw.remove_prefix(3);
    std::string out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto c = static_cast<unsigned char>(raw[i]);
        if (c == '\r') {
            out.push_back('\n');
            if (i + 1 < raw.size() && raw[i + 1] == '\n') ++i;
            continue;
        }
        if (c == '\n' || c == '\t') {
            out.push_back(static_cast<char>(c));
            continue;
        }
        if (c < 0x20 || c == 0x7F) continue;
        // C1 controls U+0080..U+009F encode as C2 80..C2 9F
        if (c == 0xC2 && i + 1 < raw.size()) {
            const auto n = static_cast<unsigned char>(raw[i + 1]);
            if (n >= 0x80 && n <= 0x9F) {
                ++i;
                continue;
            }
        }
        out.push_back(static_cast<char>(c));
    }
    return out;
}

DocFormat format_from_path(const std::filesystem::path& path) {
    const auto ext = text::to_lower_ascii(path.extension().string());
    return (ext == ".md" || ext == ".markdown") ? DocFormat::markdown : DocFormat::plain;
}

RawDocument make_document(std::string doc_id, std::string_view raw_text, DocFormat format) {
    RawDocument doc;
    doc.doc_id = std::move(doc_id);
    doc.format = format;
    doc.text = normalize_text(raw_text);
    if (text::is_blank(doc.text)) throw InputError("empty document");
    return doc;
}

RawDocument load_document(const std::filesystem::path& path, DocFormat format, std::string doc_id) {
    if (!std::filesystem::exists(path)) throw InputError("missing file: " + path.string());
    if (doc_id.empty()) doc_id = path.stem().string();
    RawDocument doc = make_document(std::move(doc_id), text::read_file(path), format);
    doc.source_path = path.string();
    return doc;
}

std::size_t estimate_tokens(std::string_view s, TokenEstimator estimator) {
    switch (estimator) {
    case TokenEstimator::whitespace:
        return text::split_ws(s).size();
    case TokenEstimator::chars_div4:
        return (text::codepoint_count(s) + 3) / 4;
    }
    return 0;
}

std::vector<Chunk> chunk_document(const RawDocument& doc, const ChunkPolicy& policy) {
    policy.validate();
    const std::string_view s = doc.text;
    std::vector<Chunk> chunks;

    auto emit = [&](const Section& sec, const Range& r) {
        Chunk c;
        c.doc_id = doc.doc_id;
        c.index = chunks.size();
        c.text = std::string(s.substr(r.begin, r.end - r.begin));
        c.section_path = sec.path;
        c.token_estimate = estimate_tokens(c.text, policy.token_estimator);
        chunks.push_back(std::move(c));
    };

    for (const Section& sec : sectionize(doc, policy)) {
        std::vector<Range> units;
        for (const Range& p : paragraphs(s, sec.lines)) refine(s, p, policy, units);
        std::optional<Range> cur;
        for (const Range& u : units) {
            if (cur) {
                const Range grown{cur->begin, u.end};
                if (estimate(s, grown, policy.token_estimator) <= policy.max_tokens) {
                    cur = grown;
                    continue;
                }
                emit(sec, *cur);
            }
            cur = u;
        }
        if (cur) emit(sec, *cur);
    }
    return chunks;
}

std::string retained_text(const RawDocument& doc, const ChunkPolicy& policy) {
    std::string out;
    for (const Section& sec : sectionize(doc, policy)) {
        for (const Range& line : sec.lines) {
            out.append(doc.text, line.begin, line.end - line.begin);
            out.push_back('\n');
        }
    }
    return out;
}

nlohmann::json to_json(const Chunk& c) {
    return nlohmann::json{{"doc_id", c.doc_id},
                          {"index", c.index},
                          {"section_path", c.section_path},
                          {"text", c.text},
                          {"token_estimate", c.token_estimate}};
}

Chunk chunk_from_json(const nlohmann::json& j) {
    Chunk c;
    try {
        c.doc_id = j.at("doc_id").get<std::string>();
        c.index = j.at("index").get<std::size_t>();
        c.section_path = j.value("section_path", std::vector<std::string>{});
        c.text = j.at("text").get<std::string>();
        c.token_estimate = j.contains("token_estimate")
                               ? j.at("token_estimate").get<std::size_t>()
                               : estimate_tokens(c.text, TokenEstimator::whitespace);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed chunk record: ") + e.what());
    }
    if (text::is_blank(c.text)) throw InputError("malformed chunk record: empty text");
    return c;
}

void write_chunks(const std::filesystem::path& path, const std::vector<Chunk>& chunks) {
    std::vector<nlohmann::json> records;
    records.reserve(chunks.size());
    for (const auto& c : chunks) records.push_back(to_json(c));
    text::write_jsonl(path, records);
}

std::vector<Chunk> read_chunks(const std::filesystem::path& path) {
    std::vector<Chunk> out;
    for (const auto& j : text::read_jsonl(path)) out.push_back(chunk_from_json(j));
    return out;
}

std::string to_string(DocFormat f) { return f == DocFormat::markdown ? "markdown" : "plain"; }

DocFormat doc_format_from_string(std::string_view s) {
    if (s == "markdown" || s == "md") return DocFormat::markdown;
    if (s == "plain" || s == "txt") return DocFormat::plain;
    throw ConfigError("unknown document format: " + std::string(s));
}

std::string to_string(TokenEstimator e) {
    return e == TokenEstimator::whitespace ? "whitespace" : "chars_div4";
}

TokenEstimator token_estimator_from_string(std::string_view s) {
    if (s == "whitespace") return TokenEstimator::whitespace;
    if (s == "chars_div4") return TokenEstimator::chars_div4;
    throw ConfigError("unknown token estimator: " + std::string(s));
}

} // namespace valign::ingest
