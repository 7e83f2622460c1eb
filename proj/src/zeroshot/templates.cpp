#include "pathpt/zeroshot/templates.hpp"

#include <fstream>

#include "pathpt/error.hpp"

namespace pathpt::zeroshot {

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
    const auto first = text_.find(kCategoryPlaceholder);
    if (first == std::string::npos)
        throw ConfigError("prompt template has no {category} placeholder: \"" + text_ + "\"");
    if (text_.find(kCategoryPlaceholder, first + 1) != std::string::npos)
        throw ConfigError("prompt template has more than one {category} placeholder: \"" + text_ + "\"");
}

std::string PromptTemplate::instantiate(std::string_view category) const {
    std::string out = text_;
    out.replace(out.find(kCategoryPlaceholder), kCategoryPlaceholder.size(), category);
    return out;
}

const std::vector<PromptTemplate>& default_templates() {
    static const std::vector<PromptTemplate> registry = [] {
        std::vector<PromptTemplate> out;
        for (const char* t : {
                 "a histopathological image of {category}.",
                 "an image showing {category}.",
                 "a histopathology image of {category}.",
                 "{category}.",
                 "an H&E image of {category}.",
                 "a photomicrograph showing {category}.",
                 "a whole slide image region of {category}.",
                 "histology of {category}.",
                 "a microscopic view of {category}.",
                 "a pathology slide showing {category}.",
                 "an example of {category}.",
                 "a stained section of {category}.",
                 "microscopy of {category}.",
                 "a biopsy specimen with {category}.",
                 "a high power field of {category}.",
                 "{category} under the microscope.",
                 "presence of {category}.",
                 "a digital pathology image of {category}.",
                 "a light microscopy image of {category}.",
                 "a section demonstrating {category}.",
             })
            out.emplace_back(t);
        return out;
    }();
    return registry;
}

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open template registry: " + path.string());
    std::vector<PromptTemplate> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        out.emplace_back(line);
    }
    if (out.empty()) throw ConfigError("template registry is empty: " + path.string());
    return out;
}

void save_templates(const std::vector<PromptTemplate>& templates, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write template registry: " + path.string());
    for (const auto& t : templates) out << t.text() << '\n';
}

}  // namespace pathpt::zeroshot
