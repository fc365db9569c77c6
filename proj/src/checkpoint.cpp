#include "tpinv/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tpinv {

namespace {

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const unsigned char* p;
    const unsigned char* end;
    void need(size_t n, const std::string& path) const {
        if (static_cast<size_t>(end - p) < n)
            throw std::runtime_error("truncated checkpoint: " + path);
    }
    uint16_t u16(const std::string& path) {
        need(2, path);
        uint16_t v = static_cast<uint16_t>(p[0]) | (static_cast<uint16_t>(p[1]) << 8);
        p += 2;
        return v;
    }
    uint32_t u32(const std::string& path) {
        need(4, path);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
        p += 4;
        return v;
    }
};

}  // namespace

void Checkpoint::put(const std::string& name, Tensor t, CkptDtype dtype) {
    auto it = index_.find(name);
    if (it != index_.end()) {
        entries_[it->second].dtype = dtype;
        entries_[it->second].tensor = std::move(t);
        return;
    }
    index_[name] = entries_.size();
    entries_.push_back({name, dtype, std::move(t)});
}

void Checkpoint::put_string(const std::string& name, const std::string& text) {
    Tensor t({static_cast<int>(text.size())});
    for (size_t i = 0; i < text.size(); ++i)
        t[static_cast<int>(i)] = static_cast<unsigned char>(text[i]);
    put(name, std::move(t), CkptDtype::U8);
}

const Tensor& Checkpoint::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
        throw std::runtime_error("checkpoint entry missing: " + name);
    return entries_[it->second].tensor;
}

std::string Checkpoint::get_string(const std::string& name) const {
    const Tensor& t = get(name);
    std::string s(t.size(), '\0');
    for (int i = 0; i < t.size(); ++i) s[i] = static_cast<char>(static_cast<int>(t[i]));
    return s;
}

std::vector<std::string> Checkpoint::names(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
        if (e.name.rfind(prefix, 0) == 0) out.push_back(e.name);
    return out;
}

void Checkpoint::merge(const Checkpoint& other) {
    for (const auto& e : other.entries_) put(e.name, e.tensor, e.dtype);
}

void Checkpoint::save(const std::string& path) const {
    std::string buf;
    buf += "TPCK";
    put_u32(buf, 1);  // version
    put_u32(buf, static_cast<uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
        if (e.name.size() > 0xffff)
            throw std::runtime_error("checkpoint name too long: " + e.name);
        put_u16(buf, static_cast<uint16_t>(e.name.size()));
        buf += e.name;
        buf.push_back(static_cast<char>(e.dtype));
        buf.push_back(static_cast<char>(e.tensor.rank()));
        for (int d = 0; d < e.tensor.rank(); ++d)
            put_u32(buf, static_cast<uint32_t>(e.tensor.dim(d)));
        const int n = e.tensor.size();
        switch (e.dtype) {
            case CkptDtype::F32:
                for (int i = 0; i < n; ++i) {
                    const float f = static_cast<float>(e.tensor[i]);
                    uint32_t bits;
                    std::memcpy(&bits, &f, 4);
                    put_u32(buf, bits);
                }
                break;
            case CkptDtype::F64:
                for (int i = 0; i < n; ++i) {
                    const double v = e.tensor[i];
                    uint64_t bits;
                    std::memcpy(&bits, &v, 8);
                    put_u32(buf, static_cast<uint32_t>(bits & 0xffffffffull));
                    put_u32(buf, static_cast<uint32_t>(bits >> 32));
                }
                break;
            case CkptDtype::U8:
                for (int i = 0; i < n; ++i)
                    buf.push_back(static_cast<char>(static_cast<int>(e.tensor[i]) & 0xff));
                break;
        }
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw std::runtime_error("write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string data((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
    Reader r{reinterpret_cast<const unsigned char*>(data.data()),
             reinterpret_cast<const unsigned char*>(data.data()) + data.size()};
    r.need(4, path);
    if (std::memcmp(r.p, "TPCK", 4) != 0)
        throw std::runtime_error("bad checkpoint magic: " + path);
    r.p += 4;
    const uint32_t version = r.u32(path);
    if (version != 1)
        throw std::runtime_error("unsupported checkpoint version: " + path);
    const uint32_t count = r.u32(path);
    Checkpoint ck;
    for (uint32_t e = 0; e < count; ++e) {
        const uint16_t name_len = r.u16(path);
        r.need(name_len, path);
        std::string name(reinterpret_cast<const char*>(r.p), name_len);
        r.p += name_len;
        r.need(2, path);
        const uint8_t dtype_code = *r.p++;
        const uint8_t rank = *r.p++;
        if (dtype_code > 2) throw std::runtime_error("bad dtype in checkpoint: " + path);
        std::vector<int> shape(rank);
        int64_t n = 1;
        for (int d = 0; d < rank; ++d) {
            shape[d] = static_cast<int>(r.u32(path));
            n *= shape[d];
        }
        if (n < 0 || n > (1ll << 31))
            throw std::runtime_error("bad entry size in checkpoint: " + path);
        Tensor t(rank == 0 ? std::vector<int>{} : shape);
        const auto dtype = static_cast<CkptDtype>(dtype_code);
        switch (dtype) {
            case CkptDtype::F32:
                for (int i = 0; i < t.size(); ++i) {
                    const uint32_t bits = r.u32(path);
                    float f;
                    std::memcpy(&f, &bits, 4);
                    t[i] = f;
                }
                break;
            case CkptDtype::F64:
                for (int i = 0; i < t.size(); ++i) {
                    const uint64_t lo = r.u32(path);
                    const uint64_t hi = r.u32(path);
                    const uint64_t bits = lo | (hi << 32);
                    double d;
                    std::memcpy(&d, &bits, 8);
                    t[i] = d;
                }
                break;
            case CkptDtype::U8:
                r.need(static_cast<size_t>(t.size()), path);
                for (int i = 0; i < t.size(); ++i) t[i] = r.p[i];
                r.p += t.size();
                break;
        }
        ck.put(name, std::move(t), dtype);
    }
    return ck;
}

}  // namespace tpinv
