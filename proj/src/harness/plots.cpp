#include "pathpt/harness/plots.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pathpt/format.hpp"
#include "pathpt/harness/experiment.hpp"

namespace pathpt::harness {
namespace {

namespace fs = std::filesystem;

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::optional<double> number(const std::string& s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

constexpr double kWidthPerSlot = 46.0;
constexpr double kLeft = 60.0;
constexpr double kTop = 30.0;
constexpr double kPlotHeight = 300.0;
constexpr double kBottom = 110.0;

double y_of(double v) { return kTop + (1.0 - std::clamp(v, 0.0, 1.0)) * kPlotHeight; }

struct Slot {
    std::string method, k;
    std::string median, q1, q3, n;
    std::vector<std::string> points;  // per-run values from runs.csv
};

std::string svg_open(double width, const std::string& title) {
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << format_fixed(width, 0) << "\" height=\""
      << format_fixed(kTop + kPlotHeight + kBottom, 0) << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<title>" << escape(title) << "</title>\n"
      << "<text x=\"" << kLeft << "\" y=\"18\" font-size=\"13\">" << escape(title) << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = i / 4.0;
        const double y = y_of(v);
        o << "<line x1=\"" << kLeft << "\" x2=\"" << format_fixed(width - 10, 1) << "\" y1=\"" << format_fixed(y, 1)
          << "\" y2=\"" << format_fixed(y, 1) << "\" stroke=\"#ddd\"/>\n"
          << "<text x=\"" << kLeft - 6 << "\" y=\"" << format_fixed(y + 4, 1) << "\" text-anchor=\"end\">"
          << format_fixed(v, 2) << "</text>\n";
    }
    return o.str();
}

std::string slot_label(const Slot& s, double cx) {
    std::ostringstream o;
    const double y = kTop + kPlotHeight + 12;
    o << "<text transform=\"translate(" << format_fixed(cx, 1) << ',' << format_fixed(y, 1)
      << ") rotate(60)\">" << escape(s.method) << " k=" << escape(s.k) << "</text>\n";
    return o.str();
}

std::string box_svg(const std::vector<Slot>& slots, const std::string& title, const std::string& metric) {
    const double width = kLeft + kWidthPerSlot * static_cast<double>(slots.size()) + 20;
    std::ostringstream o;
    o << svg_open(width, title);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const Slot& s = slots[i];
        const double cx = kLeft + kWidthPerSlot * (static_cast<double>(i) + 0.5);
        std::vector<double> pts;
        for (const auto& p : s.points)
            if (auto v = number(p)) pts.push_back(*v);
        const auto [lo, hi] = pts.empty() ? std::pair{0.0, 0.0} : std::pair{*std::min_element(pts.begin(), pts.end()),
                                                                             *std::max_element(pts.begin(), pts.end())};
        std::string points_attr;
        for (std::size_t p = 0; p < s.points.size(); ++p) points_attr += (p ? " " : "") + s.points[p];
        o << "<g class=\"box\" data-metric=\"" << metric << "\" data-method=\"" << escape(s.method) << "\" data-k=\""
          << escape(s.k) << "\" data-n=\"" << escape(s.n) << "\" data-median=\"" << escape(s.median)
          << "\" data-q1=\"" << escape(s.q1) << "\" data-q3=\"" << escape(s.q3) << "\" data-points=\""
          << escape(points_attr) << "\">\n";
        const auto q1 = number(s.q1), q3 = number(s.q3), med = number(s.median);
        if (q1 && q3 && med) {
            const double half = kWidthPerSlot * 0.3;
            if (!pts.empty())
                o << "<line x1=\"" << format_fixed(cx, 1) << "\" x2=\"" << format_fixed(cx, 1) << "\" y1=\""
                  << format_fixed(y_of(lo), 1) << "\" y2=\"" << format_fixed(y_of(hi), 1)
                  << "\" stroke=\"#555\"/>\n";
            o << "<rect x=\"" << format_fixed(cx - half, 1) << "\" y=\"" << format_fixed(y_of(*q3), 1)
              << "\" width=\"" << format_fixed(2 * half, 1) << "\" height=\""
              << format_fixed(std::max(y_of(*q1) - y_of(*q3), 0.5), 1)
              << "\" fill=\"#9ecae1\" stroke=\"#08519c\"/>\n"
              << "<line x1=\"" << format_fixed(cx - half, 1) << "\" x2=\"" << format_fixed(cx + half, 1)
              << "\" y1=\"" << format_fixed(y_of(*med), 1) << "\" y2=\"" << format_fixed(y_of(*med), 1)
              << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
            for (double p : pts)
                o << "<circle cx=\"" << format_fixed(cx, 1) << "\" cy=\"" << format_fixed(y_of(p), 1)
                  << "\" r=\"1.8\" fill=\"#333\" fill-opacity=\"0.5\"/>\n";
        }
        o << "</g>\n" << slot_label(s, cx - 4);
    }
    o << "</svg>\n";
    return o.str();
}

std::string bar_svg(const std::vector<Slot>& slots, const std::string& title) {
    const double width = kLeft + kWidthPerSlot * static_cast<double>(slots.size()) + 20;
    std::ostringstream o;
    o << svg_open(width, title);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const Slot& s = slots[i];
        const double cx = kLeft + kWidthPerSlot * (static_cast<double>(i) + 0.5);
        o << "<g class=\"bar\" data-metric=\"dice\" data-method=\"" << escape(s.method) << "\" data-k=\""
          << escape(s.k) << "\" data-n=\"" << escape(s.n) << "\" data-median=\"" << escape(s.median)
          << "\" data-q1=\"" << escape(s.q1) << "\" data-q3=\"" << escape(s.q3) << "\">\n";
        const auto q1 = number(s.q1), q3 = number(s.q3), med = number(s.median);
        if (q1 && q3 && med) {
            const double half = kWidthPerSlot * 0.32;
            o << "<rect x=\"" << format_fixed(cx - half, 1) << "\" y=\"" << format_fixed(y_of(*med), 1)
              << "\" width=\"" << format_fixed(2 * half, 1) << "\" height=\""
              << format_fixed(y_of(0.0) - y_of(*med), 1) << "\" fill=\"#a1d99b\" stroke=\"#006d2c\"/>\n"
              << "<line x1=\"" << format_fixed(cx, 1) << "\" x2=\"" << format_fixed(cx, 1) << "\" y1=\""
              << format_fixed(y_of(*q1), 1) << "\" y2=\"" << format_fixed(y_of(*q3), 1)
              << "\" stroke=\"#222\"/>\n";
        }
        o << "</g>\n" << slot_label(s, cx - 4);
    }
    o << "</svg>\n";
    return o.str();
}

std::string safe_name(std::string s) {
    for (char& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
    return s.empty() ? "unnamed" : s;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("CSV has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing CSV: " + path.string());
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty CSV (no header): " + path.string());
    table.header = split_line(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (cells.size() != table.header.size())
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                                     std::to_string(table.header.size()) + " cells");
        table.rows.push_back(std::move(cells));
    }
    return table;
}

PlotResult emit_plots(const fs::path& bundle) {
    if (!fs::is_directory(bundle)) throw std::runtime_error("bundle directory not found: " + bundle.string());
    const CsvTable summary = read_csv(bundle / kSummaryCsv);
    const CsvTable runs = read_csv(bundle / kRunsCsv);

    PlotResult result;
    if (summary.rows.empty()) {
        result.warnings.push_back("bundle " + bundle.string() + " has no results; no plots written");
        return result;
    }

    std::vector<std::string> qualities;
    for (std::size_t r = 0; r < summary.rows.size(); ++r) {
        const auto& q = summary.at(r, "base_quality");
        if (std::find(qualities.begin(), qualities.end(), q) == qualities.end()) qualities.push_back(q);
    }

    const fs::path out_dir = bundle / "plots";
    fs::create_directories(out_dir);
    auto write = [&](const fs::path& path, const std::string& text) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << text;
        result.files.push_back(path);
    };

    for (const auto& quality : qualities) {
        for (const char* metric : {"bacc", "auc", "dice"}) {
            std::vector<Slot> slots;
            for (std::size_t r = 0; r < summary.rows.size(); ++r) {
                if (summary.at(r, "base_quality") != quality) continue;
                Slot s{summary.at(r, "method"), summary.at(r, "k"),
                       summary.at(r, std::string(metric) + "_median"), summary.at(r, std::string(metric) + "_q1"),
                       summary.at(r, std::string(metric) + "_q3"), summary.at(r, "n"), {}};
                if (s.median == "NA") continue;
                for (std::size_t i = 0; i < runs.rows.size(); ++i)
                    if (runs.at(i, "base_quality") == quality && runs.at(i, "method") == s.method &&
                        runs.at(i, "k") == s.k && runs.at(i, "status") == "ok" && runs.at(i, metric) != "NA")
                        s.points.push_back(runs.at(i, metric));
                slots.push_back(std::move(s));
            }
            if (slots.empty()) {
                result.warnings.push_back(std::string("no ") + metric + " values for " + quality);
                continue;
            }
            const std::string upper = metric == std::string("bacc") ? "BACC" : metric == std::string("auc") ? "AUC" : "DICE";
            if (metric == std::string("dice"))
                write(out_dir / ("dice_bars_" + safe_name(quality) + ".svg"),
                      bar_svg(slots, upper + " median with Q1-Q3 (" + quality + ")"));
            else
                write(out_dir / (std::string(metric) + "_box_" + safe_name(quality) + ".svg"),
                      box_svg(slots, upper + " over repeats (" + quality + ")", metric));
        }
    }
    return result;
}

}  // namespace pathpt::harness
