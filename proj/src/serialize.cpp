#include "bar/serialize.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include "bar/errors.hpp"

namespace bar {

namespace {

constexpr char kCheckpointMagic[8] = {'B', 'A', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr char kLogitsMagic[8] = {'B', 'A', 'R', 'L', 'O', 'G', 'T', '1'};

void put_u16(std::vector<unsigned char>& buf, std::uint16_t v) {
    buf.push_back(static_cast<unsigned char>(v));
    buf.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f32(std::vector<unsigned char>& buf, float v) {
    put_u32(buf, std::bit_cast<std::uint32_t>(v));
}

/// Bounds-checked little-endian reader over an in-memory file image.
struct Cursor {
    const unsigned char* p;
    std::size_t size;
    std::size_t off = 0;
    const std::string& path;

    void need(std::size_t n) const {
        if (off + n > size) throw IntegrityError(path + ": truncated (needed " +
                                                 std::to_string(n) + " bytes at offset " +
                                                 std::to_string(off) + ")");
    }
    std::uint16_t u16() {
        need(2);
        const std::uint16_t v = static_cast<std::uint16_t>(p[off] | (p[off + 1] << 8));
        off += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[off + i]) << (8 * i);
        off += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::uint8_t u8() {
        need(1);
        return p[off++];
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p + off), n);
        off += n;
        return s;
    }
};

std::uint32_t crc_of(const std::vector<unsigned char>& buf, std::size_t n) {
    return static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(buf.data()),
              static_cast<uInt>(n)));
}

void write_file(const std::string& path, std::vector<unsigned char>& buf) {
    const std::uint32_t crc = crc_of(buf, buf.size());
    put_u32(buf, crc);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error(path + ": cannot open for writing");
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw std::runtime_error(path + ": write failed");
}

std::vector<unsigned char> read_file_checked(const std::string& path, const char magic[8]) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IntegrityError(path + ": cannot open");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 12) throw IntegrityError(path + ": too short to hold a header and CRC");
    if (std::memcmp(buf.data(), magic, 8) != 0)
        throw IntegrityError(path + ": bad magic (not a " + std::string(magic, 8) + " file)");
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<std::uint32_t>(buf[buf.size() - 4 + static_cast<std::size_t>(i)])
                  << (8 * i);
    if (crc_of(buf, buf.size() - 4) != stored)
        throw IntegrityError(path + ": CRC mismatch (file is corrupt)");
    buf.resize(buf.size() - 4);
    return buf;
}

}  // namespace

NamedArray NamedArray::floats(std::string name, std::vector<std::uint32_t> dims,
                              std::vector<float> data) {
    NamedArray a;
    a.name = std::move(name);
    a.dtype = 0;
    a.dims = std::move(dims);
    a.f32 = std::move(data);
    if (a.f32.size() != a.numel())
        throw std::invalid_argument("checkpoint array " + a.name + ": data size " +
                                    std::to_string(a.f32.size()) + " does not match dims");
    return a;
}

NamedArray NamedArray::words(std::string name, std::vector<std::uint32_t> dims,
                             std::vector<std::uint32_t> data) {
    NamedArray a;
    a.name = std::move(name);
    a.dtype = 1;
    a.dims = std::move(dims);
    a.u32 = std::move(data);
    if (a.u32.size() != a.numel())
        throw std::invalid_argument("checkpoint array " + a.name + ": data size " +
                                    std::to_string(a.u32.size()) + " does not match dims");
    return a;
}

void write_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays) {
    std::unordered_set<std::string> seen;
    for (const auto& a : arrays)
        if (!seen.insert(a.name).second)
            throw std::invalid_argument("checkpoint: duplicate array name " + a.name);
    std::vector<unsigned char> buf;
    buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + 8);
    put_u32(buf, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        if (a.name.size() > 0xffff)
            throw std::invalid_argument("checkpoint: array name too long");
        put_u16(buf, static_cast<std::uint16_t>(a.name.size()));
        buf.insert(buf.end(), a.name.begin(), a.name.end());
        buf.push_back(a.dtype);
        buf.push_back(static_cast<unsigned char>(a.dims.size()));
        for (auto d : a.dims) put_u32(buf, d);
        if (a.dtype == 0)
            for (float v : a.f32) put_f32(buf, v);
        else if (a.dtype == 1)
            for (auto v : a.u32) put_u32(buf, v);
        else
            throw std::invalid_argument("checkpoint: unknown dtype for array " + a.name);
    }
    write_file(path, buf);
}

std::vector<NamedArray> read_checkpoint(const std::string& path) {
    const auto buf = read_file_checked(path, kCheckpointMagic);
    Cursor c{buf.data(), buf.size(), 8, path};
    const std::uint32_t count = c.u32();
    std::vector<NamedArray> arrays;
    arrays.reserve(count);
    std::unordered_set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray a;
        a.name = c.str(c.u16());
        if (!seen.insert(a.name).second)
            throw IntegrityError(path + ": duplicate array name " + a.name);
        a.dtype = c.u8();
        if (a.dtype > 1)
            throw IntegrityError(path + ": array " + a.name + " has unknown dtype " +
                                 std::to_string(a.dtype));
        const int rank = c.u8();
        a.dims.resize(static_cast<std::size_t>(rank));
        for (auto& d : a.dims) d = c.u32();
        const std::size_t n = a.numel();
        if (a.dtype == 0) {
            a.f32.resize(n);
            for (auto& v : a.f32) v = c.f32();
        } else {
            a.u32.resize(n);
            for (auto& v : a.u32) v = c.u32();
        }
        arrays.push_back(std::move(a));
    }
    if (c.off != c.size) throw IntegrityError(path + ": trailing bytes after last array");
    return arrays;
}

void write_logits_cache(const std::string& path, const LogitsCache& cache) {
    if (cache.logits.size() != static_cast<std::size_t>(cache.n) * cache.c)
        throw std::invalid_argument("logits cache: data size does not match n*c");
    std::vector<unsigned char> buf;
    buf.insert(buf.end(), kLogitsMagic, kLogitsMagic + 8);
    put_u32(buf, static_cast<std::uint32_t>(cache.n));
    put_u32(buf, static_cast<std::uint32_t>(cache.c));
    for (float v : cache.logits) put_f32(buf, v);
    write_file(path, buf);
}

LogitsCache read_logits_cache(const std::string& path) {
    const auto buf = read_file_checked(path, kLogitsMagic);
    Cursor c{buf.data(), buf.size(), 8, path};
    LogitsCache cache;
    cache.n = static_cast<int>(c.u32());
    cache.c = static_cast<int>(c.u32());
    if (cache.n < 0 || cache.c < 1) throw IntegrityError(path + ": implausible cache dims");
    cache.logits.resize(static_cast<std::size_t>(cache.n) * cache.c);
    for (auto& v : cache.logits) v = c.f32();
    if (c.off != c.size) throw IntegrityError(path + ": trailing bytes after logits");
    return cache;
}

// ===== model schema =====

namespace {

std::vector<std::uint32_t> encode_spec(const NetworkSpec& s) {
    std::vector<std::uint32_t> v = {static_cast<std::uint32_t>(s.in_channels),
                                    static_cast<std::uint32_t>(s.in_h),
                                    static_cast<std::uint32_t>(s.in_w),
                                    static_cast<std::uint32_t>(s.num_classes),
                                    static_cast<std::uint32_t>(s.stem_channels),
                                    static_cast<std::uint32_t>(s.kernel),
                                    static_cast<std::uint32_t>(s.stages.size())};
    for (const auto& st : s.stages) {
        v.push_back(static_cast<std::uint32_t>(st.width));
        v.push_back(static_cast<std::uint32_t>(st.num_blocks));
        v.push_back(static_cast<std::uint32_t>(st.stride));
    }
    return v;
}

NetworkSpec decode_spec(const std::string& path, const NamedArray& a) {
    if (a.dtype != 1 || a.u32.size() < 7)
        throw IntegrityError(path + ": malformed spec array");
    NetworkSpec s;
    s.in_channels = static_cast<int>(a.u32[0]);
    s.in_h = static_cast<int>(a.u32[1]);
    s.in_w = static_cast<int>(a.u32[2]);
    s.num_classes = static_cast<int>(a.u32[3]);
    s.stem_channels = static_cast<int>(a.u32[4]);
    s.kernel = static_cast<int>(a.u32[5]);
    const std::size_t n_stages = a.u32[6];
    if (a.u32.size() != 7 + 3 * n_stages)
        throw IntegrityError(path + ": spec array length does not match stage count");
    for (std::size_t i = 0; i < n_stages; ++i) {
        StageSpec st;
        st.width = static_cast<int>(a.u32[7 + 3 * i]);
        st.num_blocks = static_cast<int>(a.u32[8 + 3 * i]);
        st.stride = static_cast<int>(a.u32[9 + 3 * i]);
        s.stages.push_back(st);
    }
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw IntegrityError(path + ": stored spec invalid: " + e.what());
    }
    return s;
}

std::vector<std::uint32_t> dims_of(const std::vector<int>& shape) {
    std::vector<std::uint32_t> d;
    for (int v : shape) d.push_back(static_cast<std::uint32_t>(v));
    return d;
}

/// Lookup table over a checkpoint's arrays with required-presence reads.
struct ArrayMap {
    const std::string& path;
    std::vector<NamedArray> arrays;

    const NamedArray& get(const std::string& name, std::uint8_t dtype,
                          std::size_t expect_numel) const {
        for (const auto& a : arrays)
            if (a.name == name) {
                if (a.dtype != dtype)
                    throw IntegrityError(path + ": array " + name + " has wrong dtype");
                if (a.numel() != expect_numel)
                    throw IntegrityError(path + ": array " + name + " holds " +
                                         std::to_string(a.numel()) + " values, expected " +
                                         std::to_string(expect_numel));
                return a;
            }
        throw IntegrityError(path + ": missing array " + name);
    }
    const NamedArray* find(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return &a;
        return nullptr;
    }
};

int checkpoint_kind(const std::string& path, const ArrayMap& m) {
    const NamedArray& kind = m.get("kind", 1, 1);
    return static_cast<int>(kind.u32[0]);
}

NetworkSpec spec_of(const std::string& path, const ArrayMap& m) {
    const NamedArray* a = m.find("spec");
    if (!a) throw IntegrityError(path + ": missing array spec");
    return decode_spec(path, *a);
}

}  // namespace

void save_model(const std::string& path, const Model& m) {
    std::vector<NamedArray> arrays;
    arrays.push_back(NamedArray::words("kind", {1}, {0}));
    arrays.push_back(NamedArray::words("spec", {static_cast<std::uint32_t>(encode_spec(m.spec).size())},
                                       encode_spec(m.spec)));
    for (std::size_t i = 0; i < m.convs.size(); ++i) {
        const auto& u = m.convs[i];
        const std::string p = "conv" + std::to_string(i) + ".";
        arrays.push_back(NamedArray::floats(p + "w", dims_of(u.w.shape), u.w.data));
        arrays.push_back(NamedArray::floats(p + "bn_gamma", dims_of(u.bn_gamma.shape),
                                            u.bn_gamma.data));
        arrays.push_back(NamedArray::floats(p + "bn_beta", dims_of(u.bn_beta.shape),
                                            u.bn_beta.data));
        arrays.push_back(NamedArray::floats(p + "bn_rmean",
                                            {static_cast<std::uint32_t>(u.bn_rmean.size())},
                                            u.bn_rmean));
        arrays.push_back(NamedArray::floats(p + "bn_rvar",
                                            {static_cast<std::uint32_t>(u.bn_rvar.size())},
                                            u.bn_rvar));
        arrays.push_back(NamedArray::floats(p + "log_alpha",
                                            {static_cast<std::uint32_t>(u.gate.log_alpha.size())},
                                            u.gate.log_alpha));
    }
    arrays.push_back(NamedArray::floats("fc.w", dims_of(m.fc_w.shape), m.fc_w.data));
    arrays.push_back(NamedArray::floats("fc.b", dims_of(m.fc_b.shape), m.fc_b.data));
    write_checkpoint(path, arrays);
}

Model load_model(const std::string& path) {
    ArrayMap m{path, read_checkpoint(path)};
    if (checkpoint_kind(path, m) != 0)
        throw IntegrityError(path + ": holds a pruned graph, not a dense model");
    const NetworkSpec spec = spec_of(path, m);
    Rng scratch(0);
    Model model = build_network<float>(spec, scratch);
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        auto& u = model.convs[i];
        const std::string p = "conv" + std::to_string(i) + ".";
        u.w.data = m.get(p + "w", 0, u.w.data.size()).f32;
        u.bn_gamma.data = m.get(p + "bn_gamma", 0, u.bn_gamma.data.size()).f32;
        u.bn_beta.data = m.get(p + "bn_beta", 0, u.bn_beta.data.size()).f32;
        u.bn_rmean = m.get(p + "bn_rmean", 0, u.bn_rmean.size()).f32;
        u.bn_rvar = m.get(p + "bn_rvar", 0, u.bn_rvar.size()).f32;
        u.gate.log_alpha = m.get(p + "log_alpha", 0, u.gate.log_alpha.size()).f32;
    }
    model.fc_w.data = m.get("fc.w", 0, model.fc_w.data.size()).f32;
    model.fc_b.data = m.get("fc.b", 0, model.fc_b.data.size()).f32;
    return model;
}

// ===== pruned graph schema =====

namespace {

void push_pruned_conv(std::vector<NamedArray>& arrays, const std::string& p,
                      const PrunedConv& pc) {
    arrays.push_back(NamedArray::floats(p + "w", dims_of(pc.w.shape), pc.w.data));
    arrays.push_back(NamedArray::floats(p + "bias", {static_cast<std::uint32_t>(pc.bias.size())},
                                        pc.bias));
    arrays.push_back(NamedArray::words(p + "in", {static_cast<std::uint32_t>(pc.in_channels.size())},
                                       pc.in_channels));
    arrays.push_back(NamedArray::words(p + "out",
                                       {static_cast<std::uint32_t>(pc.out_channels.size())},
                                       pc.out_channels));
    arrays.push_back(NamedArray::words(
        p + "meta", {6},
        {static_cast<std::uint32_t>(pc.full_out_width), static_cast<std::uint32_t>(pc.kernel),
         static_cast<std::uint32_t>(pc.stride), static_cast<std::uint32_t>(pc.pad),
         static_cast<std::uint32_t>(pc.out_h), static_cast<std::uint32_t>(pc.out_w)}));
}

PrunedConv pull_pruned_conv(const std::string& path, const ArrayMap& m, const std::string& p) {
    PrunedConv pc;
    const NamedArray& meta = m.get(p + "meta", 1, 6);
    pc.full_out_width = static_cast<int>(meta.u32[0]);
    pc.kernel = static_cast<int>(meta.u32[1]);
    pc.stride = static_cast<int>(meta.u32[2]);
    pc.pad = static_cast<int>(meta.u32[3]);
    pc.out_h = static_cast<int>(meta.u32[4]);
    pc.out_w = static_cast<int>(meta.u32[5]);
    const NamedArray* in = m.find(p + "in");
    const NamedArray* out = m.find(p + "out");
    if (!in || !out) throw IntegrityError(path + ": missing index arrays for " + p);
    pc.in_channels = in->u32;
    pc.out_channels = out->u32;
    const std::size_t wn = pc.in_channels.size() * pc.out_channels.size() *
                           static_cast<std::size_t>(pc.kernel) * pc.kernel;
    pc.w = Tensor({static_cast<int>(pc.out_channels.size()), static_cast<int>(pc.in_channels.size()),
                   pc.kernel, pc.kernel},
                  m.get(p + "w", 0, wn).f32);
    pc.bias = m.get(p + "bias", 0, pc.out_channels.size()).f32;
    for (const auto* idx : {&pc.in_channels, &pc.out_channels})
        if (!std::is_sorted(idx->begin(), idx->end()))
            throw IntegrityError(path + ": unsorted channel index set in " + p);
    return pc;
}

}  // namespace

void save_pruned_graph(const std::string& path, const PrunedGraph& g) {
    std::vector<NamedArray> arrays;
    arrays.push_back(NamedArray::words("kind", {1}, {1}));
    arrays.push_back(NamedArray::words("spec", {static_cast<std::uint32_t>(encode_spec(g.spec).size())},
                                       encode_spec(g.spec)));
    arrays.push_back(NamedArray::words(
        "totals", {4},
        {static_cast<std::uint32_t>(g.full_volume_ & 0xffffffffULL),
         static_cast<std::uint32_t>(static_cast<unsigned long long>(g.full_volume_) >> 32),
         static_cast<std::uint32_t>(g.full_flops_ & 0xffffffffULL),
         static_cast<std::uint32_t>(static_cast<unsigned long long>(g.full_flops_) >> 32)}));
    push_pruned_conv(arrays, "stem.", g.stem);
    arrays.push_back(NamedArray::words("nblocks", {1},
                                       {static_cast<std::uint32_t>(g.blocks.size())}));
    for (std::size_t j = 0; j < g.blocks.size(); ++j) {
        const auto& pb = g.blocks[j];
        const std::string p = "blk" + std::to_string(j) + ".";
        arrays.push_back(NamedArray::words(
            p + "meta", {4},
            {pb.pooling ? 1u : 0u, static_cast<std::uint32_t>(pb.stage), pb.has_delta ? 1u : 0u,
             static_cast<std::uint32_t>(pb.n_res)}));
        arrays.push_back(NamedArray::words(p + "out",
                                           {static_cast<std::uint32_t>(pb.out_set.size())},
                                           pb.out_set));
        if (pb.has_delta) {
            push_pruned_conv(arrays, p + "c1.", pb.conv1);
            push_pruned_conv(arrays, p + "c2.", pb.conv2);
        }
        if (pb.pooling) push_pruned_conv(arrays, p + "res.", pb.res);
    }
    arrays.push_back(NamedArray::words("final",
                                       {static_cast<std::uint32_t>(g.final_channels.size())},
                                       g.final_channels));
    arrays.push_back(NamedArray::floats("fc.w", dims_of(g.fc_w.shape), g.fc_w.data));
    arrays.push_back(NamedArray::floats("fc.b", {static_cast<std::uint32_t>(g.fc_b.size())},
                                        g.fc_b));
    write_checkpoint(path, arrays);
}

PrunedGraph load_pruned_graph(const std::string& path) {
    ArrayMap m{path, read_checkpoint(path)};
    if (checkpoint_kind(path, m) != 1)
        throw IntegrityError(path + ": holds a dense model, not a pruned graph");
    PrunedGraph g;
    g.spec = spec_of(path, m);
    const NamedArray& totals = m.get("totals", 1, 4);
    g.full_volume_ = static_cast<long long>(totals.u32[0]) |
                     (static_cast<long long>(totals.u32[1]) << 32);
    g.full_flops_ = static_cast<long long>(totals.u32[2]) |
                    (static_cast<long long>(totals.u32[3]) << 32);
    g.stem = pull_pruned_conv(path, m, "stem.");
    const int nblocks = static_cast<int>(m.get("nblocks", 1, 1).u32[0]);
    std::vector<std::uint32_t> carried = g.stem.out_channels;
    for (int j = 0; j < nblocks; ++j) {
        const std::string p = "blk" + std::to_string(j) + ".";
        const NamedArray& meta = m.get(p + "meta", 1, 4);
        PrunedBlock pb;
        pb.pooling = meta.u32[0] != 0;
        pb.stage = static_cast<int>(meta.u32[1]);
        pb.has_delta = meta.u32[2] != 0;
        pb.n_res = static_cast<int>(meta.u32[3]);
        const NamedArray* out = m.find(p + "out");
        if (!out) throw IntegrityError(path + ": missing array " + p + "out");
        pb.out_set = out->u32;
        if (pb.has_delta) {
            pb.conv1 = pull_pruned_conv(path, m, p + "c1.");
            pb.conv2 = pull_pruned_conv(path, m, p + "c2.");
        }
        if (pb.pooling) pb.res = pull_pruned_conv(path, m, p + "res.");
        try {
            if (pb.pooling) pb.res_pos = scatter_positions(pb.res.out_channels, pb.out_set);
            else pb.carry_pos = scatter_positions(carried, pb.out_set);
            if (pb.has_delta)
                pb.delta_pos = scatter_positions(pb.conv2.out_channels, pb.out_set);
        } catch (const std::runtime_error& e) {
            throw IntegrityError(path + ": inconsistent channel sets: " + e.what());
        }
        carried = pb.out_set;
        g.blocks.push_back(std::move(pb));
    }
    const NamedArray* fin = m.find("final");
    if (!fin) throw IntegrityError(path + ": missing array final");
    g.final_channels = fin->u32;
    if (g.final_channels != carried)
        throw IntegrityError(path + ": final channel set disagrees with block chain");
    g.fc_w = Tensor({g.spec.num_classes, static_cast<int>(g.final_channels.size())},
                    m.get("fc.w", 0, static_cast<std::size_t>(g.spec.num_classes) *
                                         g.final_channels.size())
                        .f32);
    g.fc_b = m.get("fc.b", 0, static_cast<std::size_t>(g.spec.num_classes)).f32;
    return g;
}

bool checkpoint_holds_pruned_graph(const std::string& path) {
    ArrayMap m{path, read_checkpoint(path)};
    return checkpoint_kind(path, m) == 1;
}

}  // namespace bar
