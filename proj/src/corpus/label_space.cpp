#include "pathpt/corpus/label_space.hpp"

#include <set>

#include "pathpt/error.hpp"

namespace pathpt::corpus {
namespace {

// Rare tumor entity names; single words so each class owns distinct tokens.
constexpr const char* kSubtypeNames[] = {
    "astrocytoma",       "oligodendroglioma", "ependymoma",      "medulloblastoma",  "meningioma",
    "glioblastoma",      "schwannoma",        "hemangioblastoma", "craniopharyngioma", "pineoblastoma",
    "chordoma",          "germinoma",         "ganglioglioma",   "neurocytoma",      "hemangiopericytoma",
    "nephroblastoma",    "hepatoblastoma",    "neuroblastoma",   "rhabdomyosarcoma", "leiomyosarcoma",
    "liposarcoma",       "thymoma",           "carcinosarcoma",  "chondrosarcoma",   "osteosarcoma",
    "retinoblastoma",    "pleuroblastoma",    "paraganglioma",   "pheochromocytoma", "subependymoma",
};

}  // namespace

LabelSpace::LabelSpace(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.size() < 2) throw ConfigError("label space needs normal tissue plus at least one subtype");
    if (names_.front() != kNormalClassName)
        throw ConfigError("label space index 0 must be \"normal tissue\", got \"" + names_.front() + "\"");
    std::set<std::string> seen;
    for (const auto& n : names_) {
        if (n.empty()) throw ConfigError("label space contains an empty class name");
        if (!seen.insert(n).second) throw ConfigError("label space contains duplicate class name \"" + n + "\"");
    }
}

LabelSpace LabelSpace::synthetic(std::size_t num_subtypes) {
    std::vector<std::string> names{std::string(kNormalClassName)};
    constexpr std::size_t kKnown = std::size(kSubtypeNames);
    for (std::size_t i = 0; i < num_subtypes; ++i) {
        if (i < kKnown)
            names.emplace_back(kSubtypeNames[i]);
        else
            names.push_back(std::string(kSubtypeNames[i % kKnown]) + " variant " + std::to_string(i / kKnown));
    }
    return LabelSpace(std::move(names));
}

}  // namespace pathpt::corpus
