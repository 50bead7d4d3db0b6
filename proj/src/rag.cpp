#include "valign/rag.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "valign/error.hpp"
#include "valign/prompts.hpp"
#include "valign/text.hpp"

namespace valign::rag {

namespace {

void normalize(std::map<std::size_t, double>& v) {
    double norm = 0.0;
    for (const auto& [t, w] : v) norm += w * w;
    if (norm == 0.0) return;
    norm = std::sqrt(norm);
    for (auto& [t, w] : v) w /= norm;
}

double dot(const std::map<std::size_t, double>& a, const std::map<std::size_t, double>& b) {
    double s = 0.0;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (ia->first < ib->first) {
            ++ia;
        } else if (ib->first < ia->first) {
            ++ib;
        } else {
            s += ia->second * ib->second;
            ++ia;
            ++ib;
        }
    }
    return s;
}

std::vector<double> unit(std::vector<double> v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
    }
    return v;
}

std::vector<Hit> top_k(std::vector<Hit> hits, std::size_t k) {
    std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.entry < b.entry;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

} // namespace

std::string to_string(IndexMode m) { return m == IndexMode::lexical ? "lexical" : "embedding"; }

IndexMode index_mode_from_string(std::string_view s) {
    if (s == "lexical") return IndexMode::lexical;
    if (s == "embedding") return IndexMode::embedding;
    throw ConfigError("unknown index mode: " + std::string(s));
}

ChunkIndex build_index(const std::vector<ingest::Chunk>& chunks, IndexMode mode, teacher::TeacherClient* embedder) {
    if (chunks.empty()) throw InputError("cannot build an index over an empty corpus");
    ChunkIndex index;
    index.mode_ = mode;
    index.entries_.reserve(chunks.size());
    for (const auto& c : chunks) index.entries_.push_back(IndexEntry{c, {}, {}});

    if (mode == IndexMode::embedding) {
        if (!embedder) throw ConfigError("embedding index needs an embedding client");
        std::vector<std::string> texts;
        for (const auto& c : chunks) texts.push_back(c.text);
        auto vectors = embedder->embed(texts);
        for (std::size_t i = 0; i < chunks.size(); ++i) index.entries_[i].embedding = unit(std::move(vectors[i]));
        return index;
    }

    // Vocabulary in sorted term order so ids do not depend on chunk order.
    std::vector<std::map<std::string, std::size_t>> counts(chunks.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        for (auto& tok : text::alnum_tokens(chunks[i].text)) ++counts[i][tok];
        for (const auto& [term, n] : counts[i]) index.vocab_.emplace(term, 0);
    }
    std::size_t next_id = 0;
    for (auto& [term, id] : index.vocab_) id = next_id++;
    index.df_.assign(index.vocab_.size(), 0);
    for (const auto& doc : counts) {
        for (const auto& [term, n] : doc) ++index.df_[index.vocab_.at(term)];
    }
    const double n_docs = static_cast<double>(chunks.size());
    index.idf_.resize(index.vocab_.size());
    for (std::size_t t = 0; t < index.idf_.size(); ++t) {
        index.idf_[t] = std::log((1.0 + n_docs) / (1.0 + static_cast<double>(index.df_[t]))) + 1.0;
    }
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        auto& vec = index.entries_[i].tfidf;
        for (const auto& [term, n] : counts[i]) {
            const auto id = index.vocab_.at(term);
            vec[id] = static_cast<double>(n) * index.idf_[id];
        }
        normalize(vec);
    }
    return index;
}

std::map<std::size_t, double> lexical_vector(const ChunkIndex& index, std::string_view query) {
    std::map<std::size_t, double> vec;
    for (const auto& tok : text::alnum_tokens(query)) {
        if (auto it = index.vocab_.find(tok); it != index.vocab_.end()) vec[it->second] += 1.0;
    }
    for (auto& [id, w] : vec) w *= index.idf_[id];
    normalize(vec);
    return vec;
}

std::vector<Hit> retrieve(const ChunkIndex& index, std::string_view query, std::size_t k,
                          teacher::TeacherClient* embedder) {
    if (k == 0 || text::is_blank(query)) return {};
    std::vector<Hit> hits;
    hits.reserve(index.size());
    if (index.mode() == IndexMode::lexical) {
        const auto q = lexical_vector(index, query);
        if (q.empty()) {
            spdlog::warn("query has no in-vocabulary terms; no chunk retrieved");
            return {};
        }
        for (std::size_t i = 0; i < index.size(); ++i) hits.push_back({i, dot(q, index.entries()[i].tfidf)});
    } else {
        if (!embedder) throw ConfigError("embedding retrieval needs an embedding client");
        const auto q = unit(embedder->embed({std::string(query)}).front());
        for (std::size_t i = 0; i < index.size(); ++i) {
            const auto& e = index.entries()[i].embedding;
            if (e.size() != q.size()) throw InputError("query embedding dimensionality differs from the index");
            double s = 0.0;
            for (std::size_t d = 0; d < q.size(); ++d) s += q[d] * e[d];
            hits.push_back({i, s});
        }
    }
    return top_k(std::move(hits), k);
}

std::optional<Hit> oracle_retrieve(const ChunkIndex& index, const std::string& doc_id, std::size_t chunk_index) {
    for (std::size_t i = 0; i < index.size(); ++i) {
        const auto& c = index.entries()[i].chunk;
        if (c.doc_id == doc_id && c.index == chunk_index) return Hit{i, 1.0};
    }
    return std::nullopt;
}

RagPrompt compose_rag_prompt(std::string_view query, const ingest::Chunk* chunk) {
    if (!chunk) {
        spdlog::warn("no retrieval hit; falling back to the bare query");
        return {std::string(query), true};
    }
    prompts::RenderContext ctx;
    ctx.passage = chunk->text;
    ctx.question = std::string(query);
    return {prompts::render(prompts::TemplateId::AnswerGen, ctx), false};
}

nlohmann::json ChunkIndex::to_json() const {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : entries_) {
        nlohmann::json je{{"chunk", ingest::to_json(e.chunk)}};
        if (mode_ == IndexMode::lexical) {
            nlohmann::json terms = nlohmann::json::array();
            for (const auto& [t, w] : e.tfidf) terms.push_back({t, w});
            je["tfidf"] = std::move(terms);
        } else {
            je["embedding"] = e.embedding;
        }
        entries.push_back(std::move(je));
    }
    nlohmann::json vocab = nlohmann::json::array();
    for (const auto& [term, id] : vocab_) vocab.push_back({{"term", term}, {"id", id}, {"df", df_[id]}, {"idf", idf_[id]}});
    return {{"format", "valign-chunk-index/1"},
            {"mode", to_string(mode_)},
            {"size", entries_.size()},
            {"vocabulary", std::move(vocab)},
            {"entries", std::move(entries)}};
}

ChunkIndex ChunkIndex::from_json(const nlohmann::json& j) {
    try {
        ChunkIndex index;
        index.mode_ = index_mode_from_string(j.at("mode").get<std::string>());
        const auto& vocab = j.at("vocabulary");
        index.idf_.resize(vocab.size());
        index.df_.resize(vocab.size());
        for (const auto& v : vocab) {
            const auto id = v.at("id").get<std::size_t>();
            if (id >= vocab.size()) throw InputError("index vocabulary id out of range");
            index.vocab_.emplace(v.at("term").get<std::string>(), id);
            index.idf_[id] = v.at("idf").get<double>();
            index.df_[id] = v.at("df").get<std::size_t>();
        }
        for (const auto& je : j.at("entries")) {
            IndexEntry e{ingest::chunk_from_json(je.at("chunk")), {}, {}};
            if (index.mode_ == IndexMode::lexical) {
                for (const auto& tw : je.at("tfidf")) e.tfidf.emplace(tw.at(0).get<std::size_t>(), tw.at(1).get<double>());
            } else {
                e.embedding = je.at("embedding").get<std::vector<double>>();
            }
            index.entries_.push_back(std::move(e));
        }
        if (index.entries_.empty()) throw InputError("index has no entries");
        return index;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed index artifact: ") + e.what());
    }
}

void ChunkIndex::save(const std::filesystem::path& path) const { text::write_file(path, to_json().dump() + "\n"); }

ChunkIndex ChunkIndex::load(const std::filesystem::path& path) {
    return from_json(nlohmann::json::parse(text::read_file(path)));
}

} // namespace valign::rag
