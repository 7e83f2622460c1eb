#include "pathpt/corpus/feature_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "json.hpp"

#include "pathpt/error.hpp"

namespace pathpt::corpus {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'P', 'T', 'P', 'F'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
public:
    Reader(std::span<const std::uint8_t> bytes, const std::string& slide_id) : bytes_(bytes), id_(slide_id) {}

    template <typename T>
    T get() {
        using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
        if (pos_ + sizeof(T) > bytes_.size()) fail("truncated slide file");
        U bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) bits |= U(bytes_[pos_ + i]) << (8 * i);
        pos_ += sizeof(T);
        return std::bit_cast<T>(bits);
    }

    void expect_magic() {
        if (bytes_.size() < 4 || std::memcmp(bytes_.data(), kMagic, 4) != 0) fail("bad magic, expected PTPF");
        pos_ = 4;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

    [[noreturn]] void fail(const std::string& what) const {
        throw LoadError("slide \"" + id_ + "\": " + what);
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    const std::string& id_;
};

void check_slide_id(const std::string& id) {
    if (id.empty() || id.find('/') != std::string::npos || id.find('\\') != std::string::npos || id == "." ||
        id == "..")
        throw InvalidInput("slide id \"" + id + "\" cannot be used as a file name");
}

}  // namespace

std::vector<std::uint8_t> encode_slide_file(const SlideRecord& slide, std::size_t feature_dim) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_le<std::uint32_t>(out, kSlideFileVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(slide.tiles.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(feature_dim));
    for (const Tile& t : slide.tiles) {
        if (t.feature.size() != feature_dim)
            throw InvalidInput("slide \"" + slide.slide_id + "\": tile dimension mismatch");
        put_le<std::uint32_t>(out, t.row);
        put_le<std::uint32_t>(out, t.col);
        put_le<std::int32_t>(out, t.gt_label.value_or(-1));
        for (float v : t.feature) put_le<float>(out, v);
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(slide.slide_label));
    return out;
}

void decode_slide_file(std::span<const std::uint8_t> bytes, SlideRecord& slide, std::size_t feature_dim) {
    Reader in(bytes, slide.slide_id);
    in.expect_magic();
    const auto version = in.get<std::uint32_t>();
    if (version != kSlideFileVersion) in.fail("unsupported version " + std::to_string(version));
    const auto m = in.get<std::uint32_t>();
    const auto d = in.get<std::uint32_t>();
    if (d != feature_dim)
        in.fail("feature dimension " + std::to_string(d) + " does not match manifest " + std::to_string(feature_dim));
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    slide.tiles.clear();
    slide.tiles.reserve(m);
    for (std::uint32_t i = 0; i < m; ++i) {
        Tile t;
        t.row = in.get<std::uint32_t>();
        t.col = in.get<std::uint32_t>();
        const auto gt = in.get<std::int32_t>();
        if (gt >= 0) t.gt_label = gt;
        else if (gt != -1) in.fail("invalid ground-truth label " + std::to_string(gt));
        t.feature.resize(d);
        for (auto& v : t.feature) v = in.get<float>();
        if (!seen.emplace(t.row, t.col).second)
            in.fail("duplicate coordinates (" + std::to_string(t.row) + "," + std::to_string(t.col) + ")");
        slide.tiles.push_back(std::move(t));
    }
    const auto label = in.get<std::uint32_t>();
    if (static_cast<int>(label) != slide.slide_label)
        in.fail("slide label " + std::to_string(label) + " disagrees with manifest");
    if (!in.at_end()) in.fail("trailing bytes after slide label");
}

void write_feature_store(const FeatureStore& store, const fs::path& dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["schema_version"] = kFeatureStoreSchemaVersion;
    manifest["format"] = "PTPF";
    manifest["d"] = store.feature_dim;
    manifest["labels"] = store.labels.names();
    if (!store.base_quality.empty()) manifest["base_quality"] = store.base_quality;
    if (store.encoder) manifest["encoder"] = {{"seed", store.encoder->seed}, {"token_dim", store.encoder->token_dim}};
    json slides = json::array();
    for (const SlideRecord& s : store.slides) {
        check_slide_id(s.slide_id);
        validate_slide(s, store.feature_dim, store.labels.size());
        const std::string file = s.slide_id + ".npyish";
        const auto bytes = encode_slide_file(s, store.feature_dim);
        std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
        if (!out) throw InvalidInput("cannot write " + (dir / file).string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        slides.push_back({{"id", s.slide_id},
                          {"file", file},
                          {"grid_h", s.grid_h},
                          {"grid_w", s.grid_w},
                          {"num_tiles", s.tiles.size()},
                          {"slide_label", s.slide_label},
                          {"split", to_string(s.split)}});
    }
    manifest["slides"] = std::move(slides);
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw InvalidInput("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

FeatureStore read_feature_store(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw LoadError("feature store: missing manifest.json in " + dir.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw LoadError(std::string("feature store: malformed manifest: ") + e.what());
    }
    try {
        if (manifest.at("schema_version").get<std::uint32_t>() != kFeatureStoreSchemaVersion)
            throw LoadError("feature store: unsupported schema version");
        FeatureStore store{LabelSpace(manifest.at("labels").get<std::vector<std::string>>()),
                           manifest.at("d").get<std::size_t>(), {}, std::nullopt,
                           manifest.value("base_quality", std::string())};
        if (store.feature_dim == 0) throw LoadError("feature store: d must be positive");
        if (manifest.contains("encoder"))
            store.encoder = EncoderInfo{manifest["encoder"].at("seed").get<std::uint64_t>(),
                                        manifest["encoder"].at("token_dim").get<std::size_t>()};
        std::set<std::string> ids;
        for (const json& entry : manifest.at("slides")) {
            SlideRecord slide;
            slide.slide_id = entry.at("id").get<std::string>();
            if (!ids.insert(slide.slide_id).second)
                throw LoadError("slide \"" + slide.slide_id + "\": listed twice in manifest");
            try {
                check_slide_id(slide.slide_id);
                slide.grid_h = entry.at("grid_h").get<std::uint32_t>();
                slide.grid_w = entry.at("grid_w").get<std::uint32_t>();
                slide.slide_label = entry.at("slide_label").get<int>();
                slide.split = parse_split(entry.at("split").get<std::string>());
                const fs::path file = dir / entry.at("file").get<std::string>();
                std::ifstream bin(file, std::ios::binary);
                if (!bin) throw LoadError("slide \"" + slide.slide_id + "\": missing file " + file.string());
                const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(bin), {}};
                decode_slide_file(bytes, slide, store.feature_dim);
                if (slide.tiles.size() != entry.at("num_tiles").get<std::size_t>())
                    throw LoadError("slide \"" + slide.slide_id + "\": tile count disagrees with manifest");
                validate_slide(slide, store.feature_dim, store.labels.size());
            } catch (const InvalidInput& e) {
                throw LoadError(e.what());
            } catch (const json::exception& e) {
                throw LoadError("slide \"" + slide.slide_id + "\": malformed manifest entry: " + e.what());
            }
            store.slides.push_back(std::move(slide));
        }
        return store;
    } catch (const json::exception& e) {
        throw LoadError(std::string("feature store: malformed manifest: ") + e.what());
    } catch (const ConfigError& e) {
        throw LoadError(std::string("feature store: ") + e.what());
    }
}

}  // namespace pathpt::corpus
