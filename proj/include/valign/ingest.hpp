#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace valign::ingest {

enum class DocFormat { plain, markdown };

struct RawDocument {
    std::string doc_id;
    std::string source_path;
    DocFormat format = DocFormat::plain;
    std::string text; ///< normalized: LF line endings, no control characters
};

struct Chunk {
    std::string doc_id;
    std::size_t index = 0;
    std::string text;
    std::vector<std::string> section_path;
    std::size_t token_estimate = 0;

    bool operator==(const Chunk&) const = default;
};

enum class TokenEstimator { whitespace, chars_div4 };

struct ChunkPolicy {
    std::size_t max_tokens = 512;
    bool split_on_headings = true;
    TokenEstimator token_estimator = TokenEstimator::whitespace;

    /// Throws ConfigError when max_tokens < 32.
    void validate() const;
};

/// Unifies line endings, drops a leading BOM and strips control characters
/// other than tab and newline. Throws InputError on invalid UTF-8.
std::string normalize_text(std::string_view raw);

DocFormat format_from_path(const std::filesystem::path& path);

/// Reads and normalizes a document. `doc_id` defaults to the file stem.
RawDocument load_document(const std::filesystem::path& path, DocFormat format, std::string doc_id = {});

/// Same contract as load_document for in-memory text.
RawDocument make_document(std::string doc_id, std::string_view raw_text, DocFormat format);

std::size_t estimate_tokens(std::string_view text, TokenEstimator estimator);

/// Heading-first, then paragraph-greedy packing up to policy.max_tokens.
/// Chunks never overlap and every chunk text is a substring of doc.text.
std::vector<Chunk> chunk_document(const RawDocument& doc, const ChunkPolicy& policy);

/// The part of the document that chunking keeps (heading lines are moved
/// into section_path when splitting on headings).
std::string retained_text(const RawDocument& doc, const ChunkPolicy& policy);

nlohmann::json to_json(const Chunk& chunk);
Chunk chunk_from_json(const nlohmann::json& j);

void write_chunks(const std::filesystem::path& path, const std::vector<Chunk>& chunks);
std::vector<Chunk> read_chunks(const std::filesystem::path& path);

std::string to_string(DocFormat f);
DocFormat doc_format_from_string(std::string_view s);
std::string to_string(TokenEstimator e);
TokenEstimator token_estimator_from_string(std::string_view s);

} // namespace valign::ingest
