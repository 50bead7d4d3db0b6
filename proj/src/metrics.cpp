#include "valign/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "valign/error.hpp"
#include "valign/text.hpp"

namespace valign::metrics {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_13a_symbol(char ch) {
    const auto c = static_cast<unsigned char>(ch);
    return (c >= 0x7B && c <= 0x7E) || (c >= 0x5B && c <= 0x60) || (c >= 0x20 && c <= 0x26) ||
           (c >= 0x28 && c <= 0x2B) || (c >= 0x3A && c <= 0x40) || c == '/';
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

// Left-to-right, non-overlapping substitution of a two-character pattern.
template <typename First, typename Second, typename Emit>
std::string sub_pairs(const std::string& s, First first, Second second, Emit emit) {
    std::string out;
    out.reserve(s.size() * 2);
    std::size_t i = 0;
    while (i < s.size()) {
        if (i + 1 < s.size() && first(s[i]) && second(s[i + 1])) {
            emit(out, s[i], s[i + 1]);
            i += 2;
        } else {
            out.push_back(s[i]);
            ++i;
        }
    }
    return out;
}

std::vector<std::string> words(std::string_view s) {
    std::vector<std::string> out;
    for (auto w : text::split_ws(s)) out.emplace_back(w);
    return out;
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> out;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[{toks.begin() + i, toks.begin() + i + n}];
    return out;
}

double my_log(double x) { return x == 0.0 ? -9999999999.0 : std::log(x); }

Prf prf(std::size_t overlap, std::size_t hyp_count, std::size_t ref_count) {
    Prf out;
    out.precision = static_cast<double>(overlap) / static_cast<double>(std::max<std::size_t>(hyp_count, 1));
    out.recall = static_cast<double>(overlap) / static_cast<double>(std::max<std::size_t>(ref_count, 1));
    if (out.precision + out.recall > 0.0) {
        out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    }
    return out;
}

Prf rouge_n(const std::vector<std::string>& hyp, const std::vector<std::string>& ref, std::size_t n) {
    const auto h = ngram_counts(hyp, n);
    const auto r = ngram_counts(ref, n);
    std::size_t overlap = 0, hc = 0, rc = 0;
    for (const auto& [g, c] : h) {
        hc += c;
        if (auto it = r.find(g); it != r.end()) overlap += std::min(c, it->second);
    }
    for (const auto& [g, c] : r) rc += c;
    return prf(overlap, hc, rc);
}

using Table = std::vector<std::vector<std::size_t>>;

Table lcs_table(const std::vector<std::string>& ref, const std::vector<std::string>& can) {
    Table t(ref.size() + 1, std::vector<std::size_t>(can.size() + 1, 0));
    for (std::size_t i = 1; i <= ref.size(); ++i) {
        for (std::size_t j = 1; j <= can.size(); ++j) {
            t[i][j] = ref[i - 1] == can[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
        }
    }
    return t;
}

// Indices into `ref` of one LCS with `can`.
std::vector<std::size_t> lcs_indices(const std::vector<std::string>& ref, const std::vector<std::string>& can) {
    const auto t = lcs_table(ref, can);
    std::vector<std::size_t> out;
    std::size_t i = ref.size(), j = can.size();
    while (i > 0 && j > 0) {
        if (ref[i - 1] == can[j - 1]) {
            out.push_back(i - 1);
            --i;
            --j;
        } else if (t[i][j - 1] > t[i - 1][j]) {
            --j;
        } else {
            --i;
        }
    }
    std::reverse(out.begin(), out.end());
    return out;
}

Prf rouge_lsum(const std::vector<std::vector<std::string>>& hyp_sents,
               const std::vector<std::vector<std::string>>& ref_sents) {
    std::size_t m = 0, n = 0;
    std::map<std::string, std::size_t> ref_counts, hyp_counts;
    for (const auto& s : ref_sents) {
        m += s.size();
        for (const auto& t : s) ++ref_counts[t];
    }
    for (const auto& s : hyp_sents) {
        n += s.size();
        for (const auto& t : s) ++hyp_counts[t];
    }
    if (m == 0 || n == 0) return {};
    std::size_t hits = 0;
    for (const auto& r : ref_sents) {
        std::set<std::size_t> uni;
        for (const auto& c : hyp_sents) {
            for (auto i : lcs_indices(r, c)) uni.insert(i);
        }
        for (auto i : uni) {
            const auto& tok = r[i];
            auto& hc = hyp_counts[tok];
            auto& rc = ref_counts[tok];
            if (hc > 0 && rc > 0) {
                ++hits;
                --hc;
                --rc;
            }
        }
    }
    return prf(hits, n, m);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw InputError("embedding dimensionality mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

} // namespace

std::string tokenize_13a(std::string_view segment) {
    std::string line(segment);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    replace_all(line, "<skipped>", "");
    replace_all(line, "-\n", "");
    replace_all(line, "\n", " ");
    if (line.find('&') != std::string::npos) {
        replace_all(line, "&quot;", "\"");
        replace_all(line, "&amp;", "&");
        replace_all(line, "&lt;", "<");
        replace_all(line, "&gt;", ">");
    }
    std::string s = " " + line + " ";

    std::string spaced;
    spaced.reserve(s.size() * 2);
    for (char c : s) {
        if (is_13a_symbol(c)) {
            spaced.push_back(' ');
            spaced.push_back(c);
            spaced.push_back(' ');
        } else {
            spaced.push_back(c);
        }
    }
    const auto period_comma = [](char c) { return c == '.' || c == ','; };
    const auto not_digit = [](char c) { return !is_digit(c); };
    s = sub_pairs(spaced, not_digit, period_comma, [](std::string& o, char a, char b) {
        o.push_back(a);
        o.push_back(' ');
        o.push_back(b);
        o.push_back(' ');
    });
    s = sub_pairs(s, period_comma, not_digit, [](std::string& o, char a, char b) {
        o.push_back(' ');
        o.push_back(a);
        o.push_back(' ');
        o.push_back(b);
    });
    s = sub_pairs(s, is_digit, [](char c) { return c == '-'; }, [](std::string& o, char a, char b) {
        o.push_back(a);
        o.push_back(' ');
        o.push_back(b);
        o.push_back(' ');
    });

    std::string out;
    for (auto w : text::split_ws(s)) {
        if (!out.empty()) out.push_back(' ');
        out.append(w);
    }
    return out;
}

BleuStats bleu_stats(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
    if (hypotheses.size() != references.size()) {
        throw InputError("hypothesis/reference length mismatch: " + std::to_string(hypotheses.size()) + " vs " +
                         std::to_string(references.size()));
    }
    if (hypotheses.empty()) throw InputError("empty corpus");
    BleuStats st;
    for (std::size_t k = 0; k < hypotheses.size(); ++k) {
        const auto hyp = words(tokenize_13a(hypotheses[k]));
        const auto ref = words(tokenize_13a(references[k]));
        st.sys_len += hyp.size();
        st.ref_len += ref.size();
        for (std::size_t n = 1; n <= 4; ++n) {
            const auto hc = ngram_counts(hyp, n);
            const auto rc = ngram_counts(ref, n);
            for (const auto& [g, c] : hc) {
                if (auto it = rc.find(g); it != rc.end()) st.correct[n - 1] += std::min(c, it->second);
            }
            st.total[n - 1] += hyp.size() >= n ? hyp.size() - n + 1 : 0;
        }
    }
    return st;
}

double bleu_from_stats(const BleuStats& st) {
    if (std::all_of(st.correct.begin(), st.correct.end(), [](std::size_t c) { return c == 0; })) return 0.0;
    double bp = 1.0;
    if (st.sys_len < st.ref_len) {
        bp = st.sys_len > 0 ? std::exp(1.0 - static_cast<double>(st.ref_len) / static_cast<double>(st.sys_len)) : 0.0;
    }
    std::array<double, 4> p{};
    double smooth = 1.0;
    for (std::size_t n = 0; n < 4; ++n) {
        if (st.total[n] == 0) break;
        if (st.correct[n] == 0) {
            smooth *= 2.0;
            p[n] = 100.0 / (smooth * static_cast<double>(st.total[n]));
        } else {
            p[n] = 100.0 * static_cast<double>(st.correct[n]) / static_cast<double>(st.total[n]);
        }
    }
    double log_sum = 0.0;
    for (double v : p) log_sum += my_log(v);
    return bp * std::exp(log_sum / 4.0);
}

double corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
    return bleu_from_stats(bleu_stats(hypotheses, references));
}

std::vector<std::string> rouge_tokenize(std::string_view text) { return text::alnum_tokens(text); }

std::vector<std::string> rouge_sentences(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        auto line = text.substr(start, nl - start);
        std::size_t s = 0;
        while (s <= line.size()) {
            auto dot = line.find(". ", s);
            const auto end = dot == std::string_view::npos ? line.size() : dot + 1;
            auto sent = text::trim(line.substr(s, end - s));
            if (!sent.empty()) out.emplace_back(sent);
            if (dot == std::string_view::npos) break;
            s = dot + 2;
        }
        start = nl + 1;
    }
    return out;
}

RougeScores rouge_scores(std::string_view hypothesis, std::string_view reference) {
    const auto hyp = rouge_tokenize(hypothesis);
    const auto ref = rouge_tokenize(reference);
    RougeScores out;
    if (hyp.empty() || ref.empty()) return out;
    out.rouge1 = rouge_n(hyp, ref, 1);
    out.rouge2 = rouge_n(hyp, ref, 2);
    const auto lcs = lcs_table(ref, hyp)[ref.size()][hyp.size()];
    out.rougeL = prf(lcs, hyp.size(), ref.size());

    std::vector<std::vector<std::string>> hs, rs;
    for (const auto& s : rouge_sentences(hypothesis)) hs.push_back(rouge_tokenize(s));
    for (const auto& s : rouge_sentences(reference)) rs.push_back(rouge_tokenize(s));
    out.rougeLsum = rouge_lsum(hs, rs);
    return out;
}

std::optional<double> embed_f1(std::string_view hypothesis, std::string_view reference, const Embedder& embedder) {
    const auto hyp = rouge_tokenize(hypothesis);
    const auto ref = rouge_tokenize(reference);
    if (hyp.empty() || ref.empty()) return 0.0;

    std::vector<std::string> vocab;
    std::map<std::string, std::size_t> slot;
    for (const auto* toks : {&hyp, &ref}) {
        for (const auto& t : *toks) {
            if (slot.emplace(t, vocab.size()).second) vocab.push_back(t);
        }
    }
    std::vector<std::vector<double>> vecs;
    try {
        vecs = embedder(vocab);
    } catch (const std::exception& e) {
        spdlog::warn("embedding metric unavailable: {}", e.what());
        return std::nullopt;
    }
    if (vecs.size() != vocab.size()) throw InputError("embedder returned the wrong number of vectors");

    const auto greedy_mean = [&](const std::vector<std::string>& from, const std::vector<std::string>& to) {
        double sum = 0.0;
        for (const auto& a : from) {
            double best = -1.0;
            for (const auto& b : to) best = std::max(best, cosine(vecs[slot.at(a)], vecs[slot.at(b)]));
            sum += best;
        }
        return sum / static_cast<double>(from.size());
    };
    const double p = greedy_mean(hyp, ref);
    const double r = greedy_mean(ref, hyp);
    if (p + r <= 0.0) return 0.0;
    return std::clamp(2.0 * p * r / (p + r), 0.0, 1.0);
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json j{{"bleu", bleu},     {"rouge1", rouge1},       {"rouge2", rouge2},
                     {"rougeL", rougeL}, {"rougeLsum", rougeLsum}, {"n", n}};
    if (embed_f1) j["embed_f1"] = *embed_f1;
    return j;
}

MetricReport evaluate(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                      const Embedder* embedder) {
    MetricReport rep;
    rep.bleu = corpus_bleu(hypotheses, references);
    rep.n = hypotheses.size();
    std::optional<double> ef_sum = embedder ? std::optional<double>(0.0) : std::nullopt;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        const auto r = rouge_scores(hypotheses[i], references[i]);
        rep.rouge1 += r.rouge1.f1;
        rep.rouge2 += r.rouge2.f1;
        rep.rougeL += r.rougeL.f1;
        rep.rougeLsum += r.rougeLsum.f1;
        if (ef_sum) {
            const auto ef = embed_f1(hypotheses[i], references[i], *embedder);
            if (ef) {
                *ef_sum += *ef;
            } else {
                ef_sum.reset();
            }
        }
    }
    const auto n = static_cast<double>(rep.n);
    rep.rouge1 /= n;
    rep.rouge2 /= n;
    rep.rougeL /= n;
    rep.rougeLsum /= n;
    if (ef_sum) rep.embed_f1 = *ef_sum / n;
    return rep;
}

} // namespace valign::metrics
