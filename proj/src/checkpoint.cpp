#include "xad/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace xad {

namespace {

constexpr char kMagic[8] = {'X', 'A', 'D', 'C', 'K', 'P', 'T', '1'};

static_assert(sizeof(float) == 4 && sizeof(double) == 8, "IEEE sizes expected");

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}

    void need(size_t n, const char* what) {
        if (pos + n > buf.size())
            throw CorruptCheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = static_cast<uint8_t>(buf[pos]) | (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<uint8_t>(buf[pos++]);
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string out = buf.substr(pos, n);
        pos += n;
        return out;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw std::runtime_error("checkpoint: name too long: " + name);
        put_u16(out, static_cast<uint16_t>(name.size()));
        out.append(name);
        out.push_back(0);  // dtype f32
        out.push_back(static_cast<char>(t.rank()));
        for (int e : t.shape) put_u32(out, static_cast<uint32_t>(e));
        size_t bytes = t.data.size() * sizeof(float);
        size_t off = out.size();
        out.resize(off + bytes);
        std::memcpy(out.data() + off, t.data.data(), bytes);
    }
    write_text_file(path, out);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::string buf = read_text_file(path);
    if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw BadMagicError("checkpoint " + path + ": unknown magic");
    Reader r(buf);
    r.pos = sizeof(kMagic);
    uint32_t count = r.u32("count");
    std::map<std::string, Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t nlen = r.u16("name length");
        std::string name = r.bytes(nlen, "name");
        uint8_t dtype = r.u8("dtype");
        if (dtype != 0 && dtype != 1)
            throw CorruptCheckpointError("checkpoint: unknown dtype code for " + name);
        uint8_t rank = r.u8("rank");
        std::vector<int> shape;
        int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            uint32_t e = r.u32("extent");
            if (e == 0 || e > (1u << 28)) throw CorruptCheckpointError("checkpoint: bad extent for " + name);
            shape.push_back(static_cast<int>(e));
            numel *= e;
        }
        Tensor t(shape.empty() ? std::vector<int>{1} : shape);
        if (shape.empty()) numel = 1;
        if (dtype == 0) {
            std::string raw = r.bytes(static_cast<size_t>(numel) * 4, "values");
            std::memcpy(t.data.data(), raw.data(), raw.size());
        } else {
            std::string raw = r.bytes(static_cast<size_t>(numel) * 8, "values");
            const double* src = reinterpret_cast<const double*>(raw.data());
            for (int64_t j = 0; j < numel; ++j) t[j] = static_cast<float>(src[j]);
        }
        if (out.count(name)) throw CorruptCheckpointError("checkpoint: duplicate name " + name);
        out.emplace(name, std::move(t));
    }
    if (r.pos != buf.size()) throw CorruptCheckpointError("checkpoint: trailing bytes after last parameter");
    return out;
}

void save_store(const std::string& path, const ParamStore& store, const std::string& prefix) {
    std::map<std::string, Tensor> dump;
    for (const auto& [name, e] : store.entries)
        if (prefix.empty() || name.rfind(prefix, 0) == 0) dump.emplace(name, e.value);
    save_checkpoint(path, dump);
}

void load_into_store(const std::string& path, ParamStore& store) {
    auto tensors = load_checkpoint(path);
    for (auto& [name, t] : tensors) {
        if (!store.has(name)) throw CorruptCheckpointError("checkpoint: unexpected parameter " + name);
        Tensor& dst = store.at(name);
        if (!same_shape(dst.shape, t.shape))
            throw CorruptCheckpointError("checkpoint: shape mismatch for " + name + ": " +
                                         shape_str(t.shape) + " vs " + shape_str(dst.shape));
        dst = std::move(t);
    }
}

uint64_t file_checksum(const std::string& path) {
    std::string buf = read_text_file(path);
    return fnv1a64(buf.data(), buf.size());
}

bool file_exists(const std::string& path) {
    return std::filesystem::exists(path);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace xad
