#include "tscir/params.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "tscir/errors.hpp"

namespace tscir {

void ParameterSet::add(const std::string& name, Mat m, bool train) {
    if (params.count(name)) throw ConfigError("duplicate parameter name: " + name);
    params.emplace(name, std::move(m));
    trainable[name] = train;
}

Mat& ParameterSet::at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw StateError("missing parameter: " + name);
    return it->second;
}

const Mat& ParameterSet::at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw StateError("missing parameter: " + name);
    return it->second;
}

size_t ParameterSet::count_scalars(const std::string& prefix) const {
    size_t n = 0;
    for (const auto& [name, m] : params)
        if (name.rfind(prefix, 0) == 0) n += m.size();
    return n;
}

uint64_t ParameterSet::fingerprint(const std::string& prefix) const {
    uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, size_t len) {
        const uint8_t* b = static_cast<const uint8_t*>(p);
        for (size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, m] : params) {
        if (name.rfind(prefix, 0) != 0) continue;
        mix(name.data(), name.size());
        mix(m.a.data(), m.a.size() * sizeof(double));
    }
    return h;
}

void ParameterSet::set_trainable_by_prefixes(const std::vector<std::string>& prefixes) {
    for (auto& [name, t] : trainable) {
        t = false;
        for (const auto& p : prefixes)
            if (name.rfind(p, 0) == 0) t = true;
    }
}

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
    static uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    uint32_t c = seed ^ 0xffffffffu;
    for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xff] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

namespace {

constexpr char kMagic[4] = {'T', 'S', 'C', 'K'};

struct Writer {
    std::string buf;
    void bytes(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u8(uint8_t v) { bytes(&v, 1); }
    void u32(uint32_t v) { bytes(&v, 4); }
    void u64(uint64_t v) { bytes(&v, 8); }
    void i32(int32_t v) { bytes(&v, 4); }
    void f32(float v) { bytes(&v, 4); }
    void f64(double v) { bytes(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
};

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    void need(size_t n) const {
        if (pos + n > buf.size())
            throw IntegrityError("truncated record at offset " + std::to_string(pos));
    }
    void bytes(void* p, size_t n) {
        need(n);
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    uint8_t u8() { uint8_t v; bytes(&v, 1); return v; }
    uint32_t u32() { uint32_t v; bytes(&v, 4); return v; }
    uint64_t u64() { uint64_t v; bytes(&v, 8); return v; }
    int32_t i32() { int32_t v; bytes(&v, 4); return v; }
    float f32() { float v; bytes(&v, 4); return v; }
    double f64() { double v; bytes(&v, 8); return v; }
    std::string str() {
        uint32_t n = u32();
        if (n > (1u << 20)) throw IntegrityError("implausible string length at offset " +
                                                 std::to_string(pos - 4));
        need(n);
        std::string s(buf.data() + pos, n);
        pos += n;
        return s;
    }
};

void write_int_list(Writer& w, const std::vector<int>& v) {
    w.u32(static_cast<uint32_t>(v.size()));
    for (int x : v) w.i32(x);
}

std::vector<int> read_int_list(Reader& r) {
    uint32_t n = r.u32();
    if (n > 4096) throw IntegrityError("implausible list length at offset " +
                                       std::to_string(r.pos - 4));
    std::vector<int> v(n);
    for (auto& x : v) x = r.i32();
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(ck.format_version);
    w.u32(static_cast<uint32_t>(ck.stage));

    const ModelConfig& c = ck.config;
    w.i32(c.embed_dim);
    w.i32(c.image_size);
    w.i32(c.patch_size);
    w.i32(c.max_tokens);
    w.i32(c.num_layers_img);
    w.i32(c.num_layers_txt);
    w.i32(c.num_heads);
    w.i32(c.vocab_size);
    w.i32(c.adapter_dim);
    w.i32(c.latent_dim);
    w.i32(c.mlp_ratio);
    w.u8(c.phi_linear ? 1 : 0);
    w.u8(c.adapter_linear ? 1 : 0);
    w.u64(c.seed);
    write_int_list(w, c.vsi_layers);
    write_int_list(w, c.adapter_layers);

    for (int i = 0; i < 4; ++i) w.u64(ck.rng.s[i]);
    w.u8(ck.rng.has_spare);
    w.f64(ck.rng.spare);

    w.u32(static_cast<uint32_t>(ck.params.params.size()));
    for (const auto& [name, m] : ck.params.params) {
        w.str(name);
        w.u8(ck.params.trainable.at(name) ? 1 : 0);
        w.u32(static_cast<uint32_t>(m.rows));
        w.u32(static_cast<uint32_t>(m.cols));
        size_t payload_start = w.buf.size();
        for (double x : m.a) w.f32(static_cast<float>(x));
        w.u32(crc32(reinterpret_cast<const uint8_t*>(w.buf.data() + payload_start),
                    w.buf.size() - payload_start));
    }

    w.u32(crc32(reinterpret_cast<const uint8_t*>(w.buf.data()), w.buf.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ArgumentError("cannot write checkpoint: " + path);
    f.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!f) throw ArgumentError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 12) throw IntegrityError("file too small to be a checkpoint");

    uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
    uint32_t actual = crc32(reinterpret_cast<const uint8_t*>(buf.data()), buf.size() - 4);
    if (stored_crc != actual)
        throw IntegrityError("file checksum mismatch (stored at offset " +
                             std::to_string(buf.size() - 4) + ")");

    Reader r(buf);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw IntegrityError("bad magic at offset 0");

    Checkpoint ck;
    ck.format_version = r.u32();
    if (ck.format_version != 1)
        throw IntegrityError("unsupported format version " + std::to_string(ck.format_version));
    ck.stage = static_cast<int>(r.u32());
    if (ck.stage != 1 && ck.stage != 2)
        throw IntegrityError("invalid stage tag at offset " + std::to_string(r.pos - 4));

    ModelConfig& c = ck.config;
    c.embed_dim = r.i32();
    c.image_size = r.i32();
    c.patch_size = r.i32();
    c.max_tokens = r.i32();
    c.num_layers_img = r.i32();
    c.num_layers_txt = r.i32();
    c.num_heads = r.i32();
    c.vocab_size = r.i32();
    c.adapter_dim = r.i32();
    c.latent_dim = r.i32();
    c.mlp_ratio = r.i32();
    c.phi_linear = r.u8() != 0;
    c.adapter_linear = r.u8() != 0;
    c.seed = r.u64();
    c.vsi_layers = read_int_list(r);
    c.adapter_layers = read_int_list(r);

    for (int i = 0; i < 4; ++i) ck.rng.s[i] = r.u64();
    ck.rng.has_spare = r.u8();
    ck.rng.spare = r.f64();

    uint32_t nparams = r.u32();
    for (uint32_t i = 0; i < nparams; ++i) {
        std::string name = r.str();
        bool train = r.u8() != 0;
        uint32_t rows = r.u32();
        uint32_t cols = r.u32();
        if (static_cast<uint64_t>(rows) * cols > (1ull << 28))
            throw IntegrityError("implausible parameter shape at offset " +
                                 std::to_string(r.pos - 8));
        size_t payload_off = r.pos;
        Mat m(static_cast<int>(rows), static_cast<int>(cols));
        for (auto& x : m.a) x = static_cast<double>(r.f32());
        uint32_t rec_crc = r.u32();
        uint32_t rec_actual = crc32(reinterpret_cast<const uint8_t*>(buf.data() + payload_off),
                                    static_cast<size_t>(rows) * cols * 4);
        if (rec_crc != rec_actual)
            throw IntegrityError("parameter '" + name + "' payload corrupt at offset " +
                                 std::to_string(payload_off));
        ck.params.add(name, std::move(m), train);
    }
    return ck;
}

}  // namespace tscir
