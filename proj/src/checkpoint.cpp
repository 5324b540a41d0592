#include "efm/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace efm::nn {

void NamedTensors::add(const std::string& name, Tensor t) {
    if (name.empty()) throw ContractError("NamedTensors: empty tensor name");
    if (!t.defined()) throw ContractError("NamedTensors: undefined tensor '" + name + "'");
    if (contains(name)) throw ContractError("NamedTensors: duplicate tensor name '" + name + "'");
    items_.emplace_back(name, std::move(t));
}

bool NamedTensors::contains(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return true;
    return false;
}

const Tensor& NamedTensors::at(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return t;
    throw ContractError("NamedTensors: no tensor named '" + name + "'");
}

namespace {

constexpr char kMagic[4] = {'E', 'F', 'M', 'C'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw FormatError("cannot open '" + path + "' for writing", 0);
    }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void bytes(const void* p, size_t n) { raw(p, n); }
    void raw(const void* p, size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void done(const std::string& path) {
        out_.flush();
        if (!out_) throw FormatError("write failed for '" + path + "'", 0);
    }

private:
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw FormatError("cannot open '" + path + "'", 0);
    }
    std::uint32_t u32(const char* what) {
        std::uint32_t v = 0;
        raw(&v, sizeof v, what);
        return v;
    }
    void raw(void* p, size_t n, const char* what) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_.gcount()) != n)
            throw FormatError("truncated file '" + path_ + "' while reading " + what, offset_);
        offset_ += n;
    }
    size_t offset() const { return offset_; }

private:
    std::ifstream in_;
    std::string path_;
    size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const NamedTensors& tensors, const std::string& path) {
    Writer w(path);
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        const auto& shape = t.shape();
        w.u32(static_cast<std::uint32_t>(shape.size()));
        for (int d : shape) w.u32(static_cast<std::uint32_t>(d));
        w.bytes(t.data().data(), t.data().size() * sizeof(float));
    }
    w.done(path);
}

NamedTensors load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.raw(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("bad magic in '" + path + "': expected EFMC", 0);
    const std::uint32_t version = r.u32("version");
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    const std::uint32_t count = r.u32("tensor count");

    NamedTensors out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32("name length");
        if (name_len == 0) throw FormatError("empty tensor name", r.offset() - 4);
        if (name_len > (1u << 20)) throw FormatError("implausible name length", r.offset() - 4);
        std::string name(name_len, '\0');
        r.raw(name.data(), name_len, "name");
        const std::uint32_t ndim = r.u32("ndim");
        if (ndim == 0 || ndim > 8) throw FormatError("implausible ndim", r.offset() - 4);
        Shape shape(ndim);
        std::uint64_t numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            const std::uint32_t dim = r.u32("dim");
            if (dim == 0 || dim > (1u << 28)) throw FormatError("implausible dim", r.offset() - 4);
            shape[d] = static_cast<int>(dim);
            numel *= dim;
        }
        if (numel > (1ull << 31)) throw FormatError("implausible tensor size", r.offset());
        std::vector<float> data(numel);
        r.raw(data.data(), numel * sizeof(float), "tensor payload");
        out.add(name, Tensor::from_data(std::move(shape), std::move(data)));
    }
    return out;
}

}  // namespace efm::nn
