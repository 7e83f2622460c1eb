#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace pathpt::corpus {

inline constexpr std::string_view kNormalClassName = "normal tissue";

// Ordered class names. Index 0 is always "normal tissue"; 1..C are subtypes.
class LabelSpace {
public:
    // Throws ConfigError on duplicates, empty names, a wrong class-0 name or C < 1.
    explicit LabelSpace(std::vector<std::string> names);

    // "normal tissue" followed by `num_subtypes` built-in subtype names.
    static LabelSpace synthetic(std::size_t num_subtypes);

    std::size_t size() const { return names_.size(); }          // C + 1
    std::size_t num_subtypes() const { return names_.size() - 1; }  // C
    const std::string& name(std::size_t i) const { return names_.at(i); }
    const std::vector<std::string>& names() const { return names_; }

    bool is_subtype(int label) const { return label >= 1 && static_cast<std::size_t>(label) < names_.size(); }

    friend bool operator==(const LabelSpace&, const LabelSpace&) = default;

private:
    std::vector<std::string> names_;
};

}  // namespace pathpt::corpus
