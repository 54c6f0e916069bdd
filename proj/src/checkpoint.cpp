#include "usra/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "usra/digest.hpp"
#include "usra/error.hpp"

namespace usra {

namespace {

constexpr char kMagic[5] = {'U', 'S', 'R', 'A', '1'};

void put_u16(std::vector<unsigned char>& out, uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>(v >> 8));
}
void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

struct Reader {
    const unsigned char* p;
    std::size_t len;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > len) raise(ErrorKind::corrupt_artifact, "checkpoint truncated");
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    uint8_t u8() {
        need(1);
        return p[pos++];
    }
};

}  // namespace

const Tensor* CheckpointData::find(const std::string& name) const {
    for (const auto& [n, t] : entries)
        if (n == name) return &t;
    return nullptr;
}

float CheckpointData::meta_or(const std::string& key, float fallback) const {
    const Tensor* t = find("meta/" + key);
    return t && t->size() == 1 ? (*t)[0] : fallback;
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    std::vector<unsigned char> buf;
    buf.insert(buf.end(), kMagic, kMagic + 5);
    put_u32(buf, kCheckpointVersion);
    put_u32(buf, static_cast<uint32_t>(data.entries.size()));
    for (const auto& [name, t] : data.entries) {
        if (name.size() > 0xFFFF) raise(ErrorKind::logic, "checkpoint entry name too long");
        put_u16(buf, static_cast<uint16_t>(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        buf.push_back(static_cast<unsigned char>(t.rank()));
        for (int d = 0; d < t.rank(); ++d) put_u32(buf, static_cast<uint32_t>(t.dim(d)));
        const std::size_t bytes = t.size() * sizeof(float);
        const std::size_t off = buf.size();
        buf.resize(off + bytes);
        std::memcpy(buf.data() + off, t.data(), bytes);  // little-endian host assumed
    }
    put_u32(buf, crc32(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::filesystem, "cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) raise(ErrorKind::filesystem, "short write to '" + path + "'");
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::filesystem, "cannot open checkpoint '" + path + "'");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 5 + 4 + 4 + 4) raise(ErrorKind::corrupt_artifact, "checkpoint truncated");
    if (std::memcmp(buf.data(), kMagic, 5) != 0) raise(ErrorKind::corrupt_artifact, "bad checkpoint magic");
    const uint32_t stored_crc = crc32(buf.data(), buf.size() - 4);
    uint32_t file_crc = 0;
    for (int i = 0; i < 4; ++i) file_crc |= static_cast<uint32_t>(buf[buf.size() - 4 + static_cast<std::size_t>(i)]) << (8 * i);
    if (stored_crc != file_crc) raise(ErrorKind::corrupt_artifact, "checkpoint CRC mismatch");

    Reader r{buf.data(), buf.size() - 4, 5};
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        raise(ErrorKind::corrupt_artifact, "unsupported checkpoint version " + std::to_string(version));
    const uint32_t count = r.u32();
    CheckpointData data;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = r.u16();
        r.need(name_len);
        std::string name(reinterpret_cast<const char*>(r.p + r.pos), name_len);
        r.pos += name_len;
        const uint8_t rank = r.u8();
        std::vector<int> shape;
        for (uint8_t d = 0; d < rank; ++d) {
            const uint32_t e = r.u32();
            if (e == 0 || e > (1u << 28)) raise(ErrorKind::corrupt_artifact, "bad extent in checkpoint");
            shape.push_back(static_cast<int>(e));
        }
        const std::size_t n = shape_numel(shape);
        r.need(n * sizeof(float));
        std::vector<float> vals(n);
        std::memcpy(vals.data(), r.p + r.pos, n * sizeof(float));
        r.pos += n * sizeof(float);
        data.entries.emplace_back(std::move(name), Tensor(std::move(shape), std::move(vals)));
    }
    if (r.pos != r.len) raise(ErrorKind::corrupt_artifact, "trailing bytes in checkpoint");
    return data;
}

CheckpointData bundle_to_checkpoint(ModelBundle& bundle) {
    CheckpointData data;
    for (Parameter* p : bundle.online_params()) data.add(p->name, p->value);
    for (Parameter* p : bundle.target_params()) data.add(p->name, p->value);
    data.add_meta("q_input", bundle.q_input == QInput::full_z ? 0.0f : 1.0f);
    return data;
}

ModelBundle bundle_from_checkpoint(const CheckpointData& data) {
    const QInput qi = data.meta_or("q_input", 0.0f) == 0.0f ? QInput::full_z : QInput::general_mu;
    ModelBundle bundle = ModelBundle::init(0, qi);
    auto restore = [&data](ParamSet ps) {
        for (Parameter* p : ps) {
            const Tensor* t = data.find(p->name);
            if (!t) raise(ErrorKind::corrupt_artifact, "checkpoint missing parameter '" + p->name + "'");
            if (!t->same_shape(p->value))
                raise(ErrorKind::corrupt_artifact, "checkpoint shape mismatch for '" + p->name + "': " +
                                                       t->shape_str() + " vs " + p->value.shape_str());
            p->value = *t;
        }
    };
    restore(bundle.online_params());
    restore(bundle.target_params());
    return bundle;
}

}  // namespace usra
