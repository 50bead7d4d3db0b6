#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "valign/error.hpp"

namespace valign::prompts {

enum class TemplateId { QuestionGen, AnswerGen, PreferenceGen, ValueFilter, JudgePairwise };

inline constexpr TemplateId kAllTemplates[] = {TemplateId::QuestionGen, TemplateId::AnswerGen,
                                               TemplateId::PreferenceGen, TemplateId::ValueFilter,
                                               TemplateId::JudgePairwise};

std::string_view name(TemplateId id);
TemplateId template_from_name(std::string_view name);

struct RenderContext {
    std::optional<int> nex;
    std::optional<std::string> keyword;
    std::optional<std::string> passage;
    std::optional<std::string> question;
    std::optional<std::string> response_a;
    std::optional<std::string> response_b;
    std::optional<std::string> rubric;
};

class MissingPlaceholder : public Error {
public:
    explicit MissingPlaceholder(std::string placeholder)
        : Error("missing placeholder: " + placeholder), placeholder_(std::move(placeholder)) {}
    const std::string& placeholder() const noexcept { return placeholder_; }

private:
    std::string placeholder_;
};

/// Placeholder names recognised inside templates, e.g. "passage" for "{passage}".
const std::vector<std::string>& placeholder_names();

/// Placeholders that occur in the template body, in order of first use.
std::vector<std::string> placeholders_of(std::string_view body);

/// Immutable template set. Bodies default to the built-in text; a directory
/// holding <TemplateName>.txt files overrides individual templates.
class TemplateStore {
public:
    TemplateStore();
    static TemplateStore with_overrides(const std::filesystem::path& dir);

    const std::string& body(TemplateId id) const;
    std::string render(TemplateId id, const RenderContext& ctx) const;

private:
    std::map<TemplateId, std::string> bodies_;
};

/// Built-in canonical template text.
std::string_view builtin(TemplateId id);

/// Renders with the built-in templates.
std::string render(TemplateId id, const RenderContext& ctx);

/// Default rubric for pairwise judging (faithfulness and relevance).
std::string_view default_rubric();

} // namespace valign::prompts
