#include "fb/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

namespace fb {

static constexpr char k_magic[8] = {'F', 'B', 'C', 'H', 'K', 'P', 'T', '1'};

static void put_u64(std::string &out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

static void put_f32(std::string &out, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

void checkpoint_save(const std::string &path, const TensorMap &tensors) {
    std::string buf;
    buf.append(k_magic, 8);
    for (const auto &[name, t] : tensors) {
        require(!name.empty(), "checkpoint_save: empty tensor name");
        require(t.numel() == static_cast<int64_t>(t.data.size()),
                "checkpoint_save: inconsistent tensor " + name);
        put_u64(buf, name.size());
        buf.append(name);
        put_u64(buf, static_cast<uint64_t>(t.rank()));
        for (int e : t.shape) put_u64(buf, static_cast<uint64_t>(e));
        for (float v : t.data) put_f32(buf, v);
    }
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        require(f.good(), "checkpoint_save: cannot open " + tmp);
        f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        require(f.good(), "checkpoint_save: write failed for " + tmp);
    }
    require(std::rename(tmp.c_str(), path.c_str()) == 0,
            "checkpoint_save: rename to " + path + " failed");
}

namespace {

struct Reader {
    std::vector<char> bytes;
    size_t pos = 0;
    std::string path;

    void need(size_t n, const char *what) {
        require(pos + n <= bytes.size(),
                "checkpoint_load: truncated file " + path + " reading " + what);
    }
    uint64_t u64(const char *what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        }
        pos += 8;
        return v;
    }
    float f32(const char *what) {
        need(4, what);
        uint32_t u = 0;
        for (int i = 0; i < 4; ++i) {
            u |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        }
        pos += 4;
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
};

}  // namespace

TensorMap checkpoint_load(const std::string &path) {
    Reader r;
    r.path = path;
    {
        std::ifstream f(path, std::ios::binary);
        require(f.good(), "checkpoint_load: cannot open " + path);
        r.bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    }
    r.need(8, "magic");
    require(std::memcmp(r.bytes.data(), k_magic, 8) == 0,
            "checkpoint_load: bad magic in " + path);
    r.pos = 8;
    TensorMap out;
    while (r.pos < r.bytes.size()) {
        uint64_t name_len = r.u64("name length");
        require(name_len > 0 && name_len <= 4096, "checkpoint_load: bad name length in " + path);
        r.need(name_len, "name");
        std::string name(&r.bytes[r.pos], name_len);
        r.pos += name_len;
        uint64_t rank = r.u64("rank");
        require(rank <= 8, "checkpoint_load: bad rank in " + path);
        std::vector<int> shape;
        int64_t count = 1;
        for (uint64_t i = 0; i < rank; ++i) {
            uint64_t e = r.u64("extent");
            require(e > 0 && e <= (1u << 24), "checkpoint_load: bad extent in " + path);
            shape.push_back(static_cast<int>(e));
            count *= static_cast<int64_t>(e);
        }
        Tensor t(shape.empty() ? std::vector<int>{1} : shape);
        if (shape.empty()) count = 1;
        require(t.numel() == count, "checkpoint_load: shape overflow in " + path);
        for (int64_t i = 0; i < count; ++i) t.data[static_cast<size_t>(i)] = r.f32("data");
        require(out.emplace(name, std::move(t)).second,
                "checkpoint_load: duplicate tensor " + name + " in " + path);
    }
    return out;
}

}  // namespace fb
