#include "pathpt/model/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "json.hpp"

#include "pathpt/error.hpp"

namespace pathpt::model {
namespace {

constexpr char kMagic[4] = {'P', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::string& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string text(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

    [[noreturn]] void fail(const std::string& what) const { throw LoadError("checkpoint " + path_ + ": " + what); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) fail("truncated");
    }
    const std::string& bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

nlohmann::json to_json(const CheckpointHeader& h) {
    return {{"kind", h.kind},
            {"d", h.feature_dim},
            {"d_tok", h.token_dim},
            {"K", h.context_length},
            {"num_classes", h.num_classes},
            {"heads", h.heads},
            {"tau", h.tau},
            {"flags", {{"use_spatial", h.use_spatial}, {"use_learnable_prompts", h.use_learnable_prompts}}}};
}

CheckpointHeader from_json(const nlohmann::json& j) {
    CheckpointHeader h;
    h.kind = j.at("kind").get<std::string>();
    h.feature_dim = j.at("d").get<std::size_t>();
    h.token_dim = j.at("d_tok").get<std::size_t>();
    h.context_length = j.at("K").get<std::size_t>();
    h.num_classes = j.at("num_classes").get<std::size_t>();
    h.heads = j.at("heads").get<std::size_t>();
    h.tau = j.at("tau").get<double>();
    h.use_spatial = j.at("flags").at("use_spatial").get<bool>();
    h.use_learnable_prompts = j.at("flags").at("use_learnable_prompts").get<bool>();
    return h;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                      std::span<const Parameter* const> params) {
    std::string out(kMagic, 4);
    put_u32(out, kVersion);
    const std::string head = to_json(header).dump();
    put_u32(out, static_cast<std::uint32_t>(head.size()));
    out += head;
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const Parameter* p : params) {
        put_u32(out, static_cast<std::uint32_t>(p->name.size()));
        out += p->name;
        put_u32(out, static_cast<std::uint32_t>(p->value.rows()));
        put_u32(out, static_cast<std::uint32_t>(p->value.cols()));
        for (double v : p->value.flat()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw LoadError("cannot open " + path.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw LoadError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("checkpoint " + path.string() + ": cannot open");
    const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    Reader r(bytes, path.string());
    if (r.text(4) != std::string(kMagic, 4)) r.fail("bad magic, expected PTCK");
    if (const auto v = r.u32(); v != kVersion) r.fail("unsupported version " + std::to_string(v));
    Checkpoint ckpt;
    try {
        ckpt.header = from_json(nlohmann::json::parse(r.text(r.u32())));
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("bad header: ") + e.what());
    }
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.text(r.u32());
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        Matrix m(rows, cols);
        for (double& v : m.flat()) v = std::bit_cast<float>(r.u32());
        if (!ckpt.tensors.emplace(name, std::move(m)).second) r.fail("duplicate tensor " + name);
    }
    if (!r.at_end()) r.fail("trailing bytes");
    return ckpt;
}

void restore_parameters(const Checkpoint& ckpt, const CheckpointHeader& expected, std::span<Parameter* const> params) {
    if (!(ckpt.header == expected))
        throw LoadError("checkpoint header " + to_json(ckpt.header).dump() + " does not match model " +
                        to_json(expected).dump());
    if (ckpt.tensors.size() != params.size())
        throw LoadError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                        std::to_string(params.size()));
    for (const Parameter* p : params) {
        const auto it = ckpt.tensors.find(p->name);
        if (it == ckpt.tensors.end()) throw LoadError("checkpoint lacks tensor " + p->name);
        if (!it->second.same_shape(p->value)) throw LoadError("checkpoint tensor " + p->name + " has the wrong shape");
    }
    for (Parameter* p : params) {
        p->value = ckpt.tensors.at(p->name);
        p->zero_grad();
    }
}

}  // namespace pathpt::model
