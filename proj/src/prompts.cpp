#include "valign/prompts.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "valign/template_assets.hpp" // generated from assets/templates at configure time

namespace valign::prompts {

namespace {

struct Slot {
    std::size_t pos;
    std::size_t len;
    std::string name;
};

// "{name}" occurrences where name is a known placeholder; other braces
// (the JSONL examples inside the templates) are left untouched.
std::vector<Slot> scan(std::string_view body) {
    std::vector<Slot> slots;
    const auto& names = placeholder_names();
    std::size_t pos = 0;
    while ((pos = body.find('{', pos)) != std::string_view::npos) {
        const auto close = body.find('}', pos + 1);
        if (close == std::string_view::npos) break;
        const std::string_view inner = body.substr(pos + 1, close - pos - 1);
        if (std::find(names.begin(), names.end(), inner) != names.end()) {
            slots.push_back({pos, close - pos + 1, std::string(inner)});
            pos = close + 1;
        } else {
            ++pos;
        }
    }
    return slots;
}

std::optional<std::string> lookup(const RenderContext& ctx, std::string_view name) {
    if (name == "nex") return ctx.nex ? std::optional<std::string>(std::to_string(*ctx.nex)) : std::nullopt;
    if (name == "keyword") return ctx.keyword;
    if (name == "passage") return ctx.passage;
    if (name == "question") return ctx.question;
    if (name == "response_a") return ctx.response_a;
    if (name == "response_b") return ctx.response_b;
    if (name == "rubric") return ctx.rubric;
    return std::nullopt;
}

constexpr std::string_view kRubric =
    "[Is the response faithful to the values expressed in the context, and relevant to the "
    "instruction?]\n"
    "Score 1: The response contradicts the values in the context or ignores the instruction.\n"
    "Score 2: The response is mostly unfaithful to the values or only loosely relevant.\n"
    "Score 3: The response is partially faithful and relevant but omits or distorts key values.\n"
    "Score 4: The response is faithful and relevant with minor omissions.\n"
    "Score 5: The response is fully faithful to the values in the context and directly relevant "
    "to the instruction.";

} // namespace

std::string_view name(TemplateId id) {
    switch (id) {
    case TemplateId::QuestionGen: return "QuestionGen";
    case TemplateId::AnswerGen: return "AnswerGen";
    case TemplateId::PreferenceGen: return "PreferenceGen";
    case TemplateId::ValueFilter: return "ValueFilter";
    case TemplateId::JudgePairwise: return "JudgePairwise";
    }
    return "";
}

TemplateId template_from_name(std::string_view n) {
    for (auto id : kAllTemplates) {
        if (name(id) == n) return id;
    }
    throw Error("unknown template: " + std::string(n));
}

const std::vector<std::string>& placeholder_names() {
    static const std::vector<std::string> names{"nex",        "keyword",    "passage", "question",
                                                "response_a", "response_b", "rubric"};
    return names;
}

std::vector<std::string> placeholders_of(std::string_view body) {
    std::vector<std::string> out;
    for (const auto& s : scan(body)) {
        if (std::find(out.begin(), out.end(), s.name) == out.end()) out.push_back(s.name);
    }
    return out;
}

std::string_view builtin(TemplateId id) {
    switch (id) {
    case TemplateId::QuestionGen: return assets::kQuestionGen;
    case TemplateId::AnswerGen: return assets::kAnswerGen;
    case TemplateId::PreferenceGen: return assets::kPreferenceGen;
    case TemplateId::ValueFilter: return assets::kValueFilter;
    case TemplateId::JudgePairwise: return assets::kJudgePairwise;
    }
    return {};
}

TemplateStore::TemplateStore() {
    for (auto id : kAllTemplates) bodies_.emplace(id, std::string(builtin(id)));
}

TemplateStore TemplateStore::with_overrides(const std::filesystem::path& dir) {
    TemplateStore store;
    for (auto id : kAllTemplates) {
        const auto file = dir / (std::string(name(id)) + ".txt");
        if (!std::filesystem::exists(file)) continue;
        std::ifstream in(file, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        std::string body = ss.str();
        if (!body.empty() && body.back() == '\n') body.pop_back();
        store.bodies_[id] = std::move(body);
    }
    return store;
}

const std::string& TemplateStore::body(TemplateId id) const { return bodies_.at(id); }

std::string TemplateStore::render(TemplateId id, const RenderContext& ctx) const {
    const std::string& tpl = body(id);
    const auto slots = scan(tpl);
    std::string out;
    out.reserve(tpl.size() + 1024);
    std::size_t last = 0;
    for (const auto& slot : slots) {
        const auto value = lookup(ctx, slot.name);
        if (!value) throw MissingPlaceholder(slot.name);
        out.append(tpl, last, slot.pos - last);
        out += *value;
        last = slot.pos + slot.len;
    }
    out.append(tpl, last, std::string::npos);
    return out;
}

std::string render(TemplateId id, const RenderContext& ctx) {
    static const TemplateStore store;
    return store.render(id, ctx);
}

std::string_view default_rubric() { return kRubric; }

} // namespace valign::prompts
