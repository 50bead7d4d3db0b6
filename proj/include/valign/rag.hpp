#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "valign/ingest.hpp"
#include "valign/teacher.hpp"

namespace valign::rag {

enum class IndexMode { lexical, embedding };

std::string to_string(IndexMode m);
IndexMode index_mode_from_string(std::string_view s);

inline constexpr std::size_t kDefaultTopK = 1;

struct IndexEntry {
    ingest::Chunk chunk;
    std::map<std::size_t, double> tfidf; ///< term id -> L2-normalized weight (lexical)
    std::vector<double> embedding;       ///< unit vector (embedding)
    bool operator==(const IndexEntry&) const = default;
};

/// Chunk index, immutable after build. Lexical mode is TF-IDF with smoothed idf
/// log((1 + N) / (1 + df)) + 1 and raw term counts.
class ChunkIndex {
public:
    IndexMode mode() const { return mode_; }
    std::size_t size() const { return entries_.size(); }
    const std::vector<IndexEntry>& entries() const { return entries_; }
    const std::map<std::string, std::size_t>& vocabulary() const { return vocab_; }
    const std::vector<double>& idf() const { return idf_; }
    std::size_t document_frequency(std::size_t term) const { return df_.at(term); }

    nlohmann::json to_json() const;
    static ChunkIndex from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static ChunkIndex load(const std::filesystem::path& path);

    bool operator==(const ChunkIndex&) const = default;

private:
    friend ChunkIndex build_index(const std::vector<ingest::Chunk>&, IndexMode, teacher::TeacherClient*);
    friend std::map<std::size_t, double> lexical_vector(const ChunkIndex&, std::string_view);

    IndexMode mode_ = IndexMode::lexical;
    std::vector<IndexEntry> entries_;
    std::map<std::string, std::size_t> vocab_;
    std::vector<double> idf_;
    std::vector<std::size_t> df_;
};

/// Throws InputError on an empty corpus. Embedding mode needs `embedder`.
ChunkIndex build_index(const std::vector<ingest::Chunk>& chunks, IndexMode mode,
                       teacher::TeacherClient* embedder = nullptr);

/// Query vector in the index's TF-IDF space; out-of-vocabulary terms are ignored.
std::map<std::size_t, double> lexical_vector(const ChunkIndex& index, std::string_view query);

struct Hit {
    std::size_t entry = 0; ///< position in index.entries()
    double score = 0.0;
};

/// Top-k by cosine similarity, ties broken by lower entry position. An empty or
/// fully out-of-vocabulary query returns no hits.
std::vector<Hit> retrieve(const ChunkIndex& index, std::string_view query, std::size_t k = kDefaultTopK,
                          teacher::TeacherClient* embedder = nullptr);

/// "Perfect retrieval": the hit is the entry for (doc_id, chunk index).
std::optional<Hit> oracle_retrieve(const ChunkIndex& index, const std::string& doc_id, std::size_t chunk_index);

struct RagPrompt {
    std::string prompt;
    bool fallback = false; ///< no chunk retrieved: the prompt is the bare query
};

/// Grounded prompt built from the answer-generation template with the chunk as context.
RagPrompt compose_rag_prompt(std::string_view query, const ingest::Chunk* chunk);

} // namespace valign::rag
