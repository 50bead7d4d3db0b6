#include "valign/judge.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <spdlog/spdlog.h>

#include "valign/error.hpp"
#include "valign/rng.hpp"
#include "valign/text.hpp"

namespace valign::judge {

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + (v[hi] - v[lo]) * frac;
}

std::string fmt(double x) {
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

} // namespace

std::string to_string(Winner w) { return w == Winner::A ? "A" : "B"; }
std::string to_string(Order o) { return o == Order::AB ? "AB" : "BA"; }

Order order_from_string(std::string_view s) {
    if (s == "AB") return Order::AB;
    if (s == "BA") return Order::BA;
    throw InputError("unknown presentation order: " + std::string(s));
}

std::optional<Winner> parse_verdict(std::string_view raw) {
    const auto a = raw.rfind("[[A]]");
    const auto b = raw.rfind("[[B]]");
    if (a == std::string_view::npos && b == std::string_view::npos) return std::nullopt;
    if (b == std::string_view::npos) return Winner::A;
    if (a == std::string_view::npos) return Winner::B;
    return a > b ? Winner::A : Winner::B;
}

std::string JudgeConfig::effective_rubric() const {
    return rubric.empty() ? std::string(prompts::default_rubric()) : rubric;
}

std::string LlmJudge::render(const JudgeRequest& req) const {
    prompts::RenderContext ctx;
    ctx.question = req.prompt;
    ctx.response_a = req.response_a;
    ctx.response_b = req.response_b;
    ctx.rubric = req.rubric.empty() ? cfg_.effective_rubric() : req.rubric;
    return cfg_.templates ? cfg_.templates->render(prompts::TemplateId::JudgePairwise, ctx)
                          : prompts::render(prompts::TemplateId::JudgePairwise, ctx);
}

std::vector<std::string> LlmJudge::complete(const std::vector<JudgeRequest>& requests) {
    std::vector<teacher::ChatRequest> batch;
    batch.reserve(requests.size());
    for (const auto& r : requests) {
        auto params = cfg_.params;
        params.seed = cfg_.seed + r.attempt;
        batch.push_back({{{teacher::Role::user, render(r)}}, params});
    }
    auto results = client_.chat_complete_batch(batch);
    std::vector<std::string> out;
    out.reserve(results.size());
    for (auto& r : results) {
        if (!r.ok()) throw *r.error;
        out.push_back(std::move(r.text));
    }
    return out;
}

std::vector<std::string> ScriptedJudge::complete(const std::vector<JudgeRequest>& requests) {
    std::vector<std::string> out;
    out.reserve(requests.size());
    for (const auto& r : requests) out.push_back(fn_(r));
    return out;
}

JudgeVerdict judge_pair(JudgeBackend& backend, const std::string& prompt, const std::string& response_a,
                        const std::string& response_b, const std::string& rubric, Order order) {
    JudgeVerdict v;
    v.order = order;
    for (int attempt = 0; attempt < 2; ++attempt) {
        v.raw_response = backend.complete({JudgeRequest{prompt, response_a, response_b, rubric, attempt}}).at(0);
        v.attempts = attempt + 1;
        v.winner = parse_verdict(v.raw_response);
        if (v.winner) break;
    }
    if (!v.winner) spdlog::warn("judge output has no verdict marker after retry");
    return v;
}

BootstrapCi bootstrap_ci(const std::vector<double>& outcomes, double level, std::size_t resamples,
                         std::uint64_t seed) {
    if (outcomes.size() < 2) throw InputError("bootstrap needs at least two outcomes");
    if (!(level > 0.0 && level < 1.0)) throw InputError("confidence level must lie in (0, 1)");
    if (resamples < 2) throw InputError("bootstrap needs at least two resamples");
    SplitMix64 rng(seed);
    const auto n = outcomes.size();
    std::vector<double> means;
    means.reserve(resamples);
    for (std::size_t r = 0; r < resamples; ++r) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += outcomes[rng.below(n)];
        means.push_back(sum / static_cast<double>(n));
    }
    std::sort(means.begin(), means.end());
    const double alpha = 1.0 - level;
    BootstrapCi ci;
    ci.lo = quantile_sorted(means, alpha / 2.0);
    ci.hi = quantile_sorted(means, 1.0 - alpha / 2.0);
    ci.halfwidth = (ci.hi - ci.lo) / 2.0;
    return ci;
}

nlohmann::json to_json(const TranscriptEntry& e) {
    nlohmann::json j{{"prompt_id", e.prompt_id}, {"first", e.first},       {"second", e.second},
                     {"raw_response", e.raw_response}, {"attempts", e.attempts}};
    j["winner"] = e.winner ? nlohmann::json(*e.winner) : nlohmann::json(nullptr);
    return j;
}

TranscriptEntry transcript_entry_from_json(const nlohmann::json& j) {
    try {
        TranscriptEntry e;
        e.prompt_id = j.at("prompt_id").get<std::string>();
        e.first = j.at("first").get<std::string>();
        e.second = j.at("second").get<std::string>();
        e.raw_response = j.at("raw_response").get<std::string>();
        e.attempts = j.value("attempts", 1);
        if (!j.at("winner").is_null()) e.winner = j.at("winner").get<std::string>();
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw InputError(std::string("malformed transcript entry: ") + ex.what());
    }
}

nlohmann::json WinRateCell::to_json() const {
    nlohmann::json j{{"method_a", method_a},         {"method_b", method_b}, {"wins_a", wins_a},
                     {"n", n},                       {"rate", rate},         {"ci_halfwidth", ci_halfwidth},
                     {"parse_failures", parse_failures}};
    j["rate_a_first"] = rate_a_first ? nlohmann::json(*rate_a_first) : nlohmann::json(nullptr);
    j["rate_a_second"] = rate_a_second ? nlohmann::json(*rate_a_second) : nlohmann::json(nullptr);
    return j;
}

const WinRateCell& WinRateMatrix::cell(const std::string& a, const std::string& b) const {
    const auto ia = std::find(methods.begin(), methods.end(), a);
    const auto ib = std::find(methods.begin(), methods.end(), b);
    if (ia == methods.end() || ib == methods.end()) throw InputError("unknown method: " + (ia == methods.end() ? a : b));
    const auto& c = cells[ia - methods.begin()][ib - methods.begin()];
    if (!c) throw InputError("no cell for a method against itself");
    return *c;
}

double WinRateMatrix::average_rate(const std::string& method) const {
    double sum = 0.0;
    std::size_t k = 0;
    for (const auto& other : methods) {
        if (other == method) continue;
        sum += cell(method, other).rate;
        ++k;
    }
    return k ? sum / static_cast<double>(k) : 0.0;
}

nlohmann::json WinRateMatrix::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t a = 0; a < methods.size(); ++a) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t b = 0; b < methods.size(); ++b) {
            row.push_back(cells[a][b] ? cells[a][b]->to_json() : nlohmann::json(nullptr));
        }
        rows.push_back(std::move(row));
    }
    nlohmann::json avg = nlohmann::json::object();
    for (const auto& m : methods) avg[m] = average_rate(m);
    return {{"methods", methods}, {"cells", std::move(rows)}, {"average_rate", std::move(avg)}};
}

std::string WinRateMatrix::to_csv() const {
    std::ostringstream os;
    os << "method";
    for (const auto& m : methods) os << ',' << m;
    os << ",average\n";
    for (std::size_t a = 0; a < methods.size(); ++a) {
        os << methods[a];
        for (std::size_t b = 0; b < methods.size(); ++b) {
            os << ',';
            if (cells[a][b]) os << fmt(cells[a][b]->rate) << "+-" << fmt(cells[a][b]->ci_halfwidth);
        }
        os << ',' << fmt(average_rate(methods[a])) << '\n';
    }
    return os.str();
}

WinRateMatrix winrate_from_transcript(const std::vector<std::string>& methods,
                                      const std::vector<TranscriptEntry>& transcript, const BootstrapSpec& boot) {
    if (methods.size() < 2) throw InputError("win-rate comparison needs at least two methods");
    WinRateMatrix m;
    m.methods = methods;
    m.transcript = transcript;
    const auto k = methods.size();
    m.cells.assign(k, std::vector<std::optional<WinRateCell>>(k));
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) {
            if (a == b) continue;
            const auto& ma = methods[a];
            const auto& mb = methods[b];
            WinRateCell cell;
            cell.method_a = ma;
            cell.method_b = mb;
            std::size_t first_wins = 0, first_n = 0, second_wins = 0, second_n = 0;
            // per-prompt (wins, valid) in first-appearance order
            std::vector<std::string> prompt_order;
            std::map<std::string, std::pair<std::size_t, std::size_t>> per_prompt;
            for (const auto& e : transcript) {
                const bool a_first = e.first == ma && e.second == mb;
                const bool a_second = e.first == mb && e.second == ma;
                if (!a_first && !a_second) continue;
                if (!e.winner) {
                    ++cell.parse_failures;
                    continue;
                }
                const bool won = *e.winner == ma;
                if (!won && *e.winner != mb) throw InputError("transcript winner is not one of the compared methods");
                ++cell.n;
                cell.wins_a += won;
                (a_first ? first_n : second_n) += 1;
                (a_first ? first_wins : second_wins) += won;
                auto [it, fresh] = per_prompt.try_emplace(e.prompt_id, 0, 0);
                if (fresh) prompt_order.push_back(e.prompt_id);
                it->second.first += won;
                it->second.second += 1;
            }
            if (cell.n > 0) cell.rate = static_cast<double>(cell.wins_a) / static_cast<double>(cell.n);
            if (first_n) cell.rate_a_first = static_cast<double>(first_wins) / static_cast<double>(first_n);
            if (second_n) cell.rate_a_second = static_cast<double>(second_wins) / static_cast<double>(second_n);
            std::vector<double> outcomes;
            for (const auto& pid : prompt_order) {
                const auto [w, v] = per_prompt.at(pid);
                outcomes.push_back(static_cast<double>(w) / static_cast<double>(v));
            }
            if (outcomes.size() >= 2) {
                cell.ci_halfwidth = bootstrap_ci(outcomes, boot.level, boot.resamples, boot.seed).halfwidth;
            }
            m.cells[a][b] = std::move(cell);
        }
    }
    return m;
}

WinRateMatrix winrate_matrix(const std::vector<std::string>& methods, const std::vector<Prompt>& prompts,
                             const std::map<std::string, std::vector<Response>>& responses, JudgeBackend& backend,
                             const std::string& rubric, const BootstrapSpec& boot) {
    if (methods.size() < 2) throw InputError("win-rate comparison needs at least two methods");
    std::map<std::string, std::vector<const std::string*>> aligned;
    for (const auto& method : methods) {
        const auto it = responses.find(method);
        if (it == responses.end()) throw InputError("no responses for method " + method);
        if (it->second.size() != prompts.size()) throw InputError("misaligned response lists for method " + method);
        auto& col = aligned[method];
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            if (it->second[i].prompt_id != prompts[i].prompt_id) {
                throw InputError("misaligned response lists for method " + method + " at prompt " +
                                 prompts[i].prompt_id);
            }
            col.push_back(&it->second[i].response);
        }
    }

    std::vector<TranscriptEntry> transcript;
    std::vector<JudgeRequest> requests;
    for (std::size_t a = 0; a < methods.size(); ++a) {
        for (std::size_t b = a + 1; b < methods.size(); ++b) {
            for (std::size_t p = 0; p < prompts.size(); ++p) {
                for (const auto& [first, second] : {std::pair{a, b}, std::pair{b, a}}) {
                    transcript.push_back({prompts[p].prompt_id, methods[first], methods[second], {}, {}, 1});
                    requests.push_back({prompts[p].prompt, *aligned[methods[first]][p], *aligned[methods[second]][p],
                                        rubric, 0});
                }
            }
        }
    }

    auto raw = backend.complete(requests);
    if (raw.size() != requests.size()) throw Error("judge backend returned the wrong number of results");
    std::vector<std::size_t> retry;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        transcript[i].raw_response = std::move(raw[i]);
        if (const auto w = parse_verdict(transcript[i].raw_response)) {
            transcript[i].winner = *w == Winner::A ? transcript[i].first : transcript[i].second;
        } else {
            retry.push_back(i);
        }
    }
    if (!retry.empty()) {
        std::vector<JudgeRequest> again;
        for (auto i : retry) {
            again.push_back(requests[i]);
            again.back().attempt = 1;
        }
        auto raw2 = backend.complete(again);
        std::size_t failures = 0;
        for (std::size_t k = 0; k < retry.size(); ++k) {
            auto& e = transcript[retry[k]];
            e.raw_response = std::move(raw2.at(k));
            e.attempts = 2;
            if (const auto w = parse_verdict(e.raw_response)) {
                e.winner = *w == Winner::A ? e.first : e.second;
            } else {
                ++failures;
            }
        }
        if (failures) spdlog::warn("{} judge verdicts unparseable after retry; excluded from win rates", failures);
    }
    return winrate_from_transcript(methods, transcript, boot);
}

void write_transcript(const std::filesystem::path& path, const std::vector<TranscriptEntry>& transcript) {
    std::vector<nlohmann::json> records;
    records.reserve(transcript.size());
    for (const auto& e : transcript) records.push_back(to_json(e));
    text::write_jsonl(path, records);
}

std::vector<TranscriptEntry> read_transcript(const std::filesystem::path& path) {
    std::vector<TranscriptEntry> out;
    for (const auto& j : text::read_jsonl(path)) out.push_back(transcript_entry_from_json(j));
    return out;
}

std::vector<Response> read_responses(const std::filesystem::path& path) {
    std::vector<Response> out;
    for (const auto& j : text::read_jsonl(path)) {
        try {
            out.push_back({j.at("prompt_id").get<std::string>(), j.at("response").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw InputError(path.string() + ": malformed response record: " + e.what());
        }
    }
    return out;
}

std::vector<Prompt> read_prompts(const std::filesystem::path& path) {
    std::vector<Prompt> out;
    for (const auto& j : text::read_jsonl(path)) {
        try {
            out.push_back({j.at("prompt_id").get<std::string>(), j.at("prompt").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw InputError(path.string() + ": malformed prompt record: " + e.what());
        }
    }
    return out;
}

} // namespace valign::judge
