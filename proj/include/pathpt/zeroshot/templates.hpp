#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pathpt::zeroshot {

inline constexpr std::string_view kCategoryPlaceholder = "{category}";

// Natural-language prompt pattern with exactly one "{category}" slot.
class PromptTemplate {
public:
    explicit PromptTemplate(std::string text);  // throws ConfigError

    const std::string& text() const { return text_; }
    std::string instantiate(std::string_view category) const;

    friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;

private:
    std::string text_;
};

// Built-in registry; the first entry is the canonical template.
const std::vector<PromptTemplate>& default_templates();

// One template per line. Blank lines and lines starting with '#' are skipped.
std::vector<PromptTemplate> load_templates(const std::filesystem::path& path);
void save_templates(const std::vector<PromptTemplate>& templates, const std::filesystem::path& path);

}  // namespace pathpt::zeroshot
