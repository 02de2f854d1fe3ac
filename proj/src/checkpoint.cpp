#include "separator/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace separator {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'P', 'C', 'K', 'P', 'T', '1'};

size_t dtype_width(const std::string& dtype) {
    if (dtype == "f64") return 8;
    if (dtype == "f32") return 4;
    throw std::runtime_error("checkpoint: unknown dtype " + dtype);
}

void put_u64_le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64_le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

void Checkpoint::put(const std::string& name, ad::Shape shape, std::vector<double> data,
                     std::string dtype) {
    if (ad::numel(shape) != data.size())
        throw std::runtime_error("checkpoint: tensor " + name + " shape " +
                                 ad::shape_str(shape) + " does not match " +
                                 std::to_string(data.size()) + " values");
    dtype_width(dtype);
    entries_[name] = Entry{std::move(shape), std::move(dtype), std::move(data)};
}

void Checkpoint::put_tensor(const std::string& name, const ad::Tensor& t) {
    put(name, t.shape(), t.values());
}

bool Checkpoint::has(const std::string& name) const { return entries_.count(name) > 0; }

const Checkpoint::Entry& Checkpoint::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
        throw std::runtime_error("checkpoint: missing tensor " + name);
    return it->second;
}

void Checkpoint::load_into(const std::string& name, ad::Tensor& t) const {
    const Entry& e = at(name);
    if (e.shape != t.shape())
        throw std::runtime_error("checkpoint: tensor " + name + " has shape " +
                                 ad::shape_str(e.shape) + ", expected " +
                                 ad::shape_str(t.shape()));
    t.node()->value = e.data;
}

void Checkpoint::save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["meta"] = meta;
    nlohmann::json tens = nlohmann::json::object();
    uint64_t offset = 0;
    for (const auto& [name, e] : entries_) {
        nlohmann::json rec;
        rec["shape"] = e.shape;
        rec["dtype"] = e.dtype;
        rec["offset"] = offset;
        tens[name] = rec;
        offset += e.data.size() * dtype_width(e.dtype);
    }
    manifest["tensors"] = tens;
    const std::string mjson = manifest.dump();

    std::string blob;
    blob.reserve(16 + mjson.size() + offset);
    blob.append(kMagic, 8);
    put_u64_le(blob, mjson.size());
    blob += mjson;
    for (const auto& [name, e] : entries_) {
        if (e.dtype == "f64") {
            for (double v : e.data) {
                uint64_t bits;
                std::memcpy(&bits, &v, 8);
                put_u64_le(blob, bits);
            }
        } else {
            for (double v : e.data) {
                const float f = static_cast<float>(v);
                uint32_t bits;
                std::memcpy(&bits, &f, 4);
                for (int i = 0; i < 4; ++i)
                    blob.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
            }
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: " + path + " is not a SEPCKPT1 container");
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
    const uint64_t mlen = get_u64_le(bytes + 8);
    if (16 + mlen > blob.size())
        throw std::runtime_error("checkpoint: manifest length exceeds file size in " + path);

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(blob.substr(16, mlen));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint: bad manifest in " + path + ": " + e.what());
    }

    Checkpoint ck;
    ck.meta = manifest.value("meta", nlohmann::json::object());
    const size_t data_start = 16 + mlen;
    for (const auto& [name, rec] : manifest.at("tensors").items()) {
        Entry e;
        e.shape = rec.at("shape").get<ad::Shape>();
        e.dtype = rec.at("dtype").get<std::string>();
        const uint64_t off = rec.at("offset").get<uint64_t>();
        const size_t width = dtype_width(e.dtype);
        const size_t count = ad::numel(e.shape);
        if (data_start + off + count * width > blob.size())
            throw std::runtime_error("checkpoint: tensor " + name +
                                     " extends past end of " + path);
        e.data.resize(count);
        const unsigned char* p = bytes + data_start + off;
        for (size_t i = 0; i < count; ++i) {
            if (width == 8) {
                const uint64_t bits = get_u64_le(p + i * 8);
                double v;
                std::memcpy(&v, &bits, 8);
                e.data[i] = v;
            } else {
                uint32_t bits = 0;
                for (int b = 0; b < 4; ++b)
                    bits |= static_cast<uint32_t>(p[i * 4 + b]) << (8 * b);
                float f;
                std::memcpy(&f, &bits, 4);
                e.data[i] = static_cast<double>(f);
            }
        }
        ck.entries_[name] = std::move(e);
    }
    return ck;
}

}  // namespace separator
