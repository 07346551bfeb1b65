#include "odsurv/encoder/safetensors.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <nlohmann/json.hpp>

#include "odsurv/common/error.hpp"

namespace odsurv::encoder {

static_assert(std::endian::native == std::endian::little, "safetensors IO assumes a little-endian host");

std::int64_t Tensor::numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace {

std::size_t dtype_size(DType d) {
    switch (d) {
        case DType::F64: return 8;
        case DType::F32: return 4;
        case DType::F16:
        case DType::BF16: return 2;
    }
    return 0;
}

const char* dtype_name(DType d) {
    switch (d) {
        case DType::F64: return "F64";
        case DType::F32: return "F32";
        case DType::F16: return "F16";
        case DType::BF16: return "BF16";
    }
    return "?";
}

DType parse_dtype(const std::string& s, const std::string& path) {
    if (s == "F64") return DType::F64;
    if (s == "F32") return DType::F32;
    if (s == "F16") return DType::F16;
    if (s == "BF16") return DType::BF16;
    throw ParseError(path + ": unsupported tensor dtype " + s);
}

double half_to_double(std::uint16_t h) {
    const int sign = (h >> 15) & 1;
    const int exp = (h >> 10) & 0x1f;
    const int frac = h & 0x3ff;
    double v;
    if (exp == 0) v = std::ldexp(frac, -24);
    else if (exp == 31) v = frac ? std::numeric_limits<double>::quiet_NaN() : std::numeric_limits<double>::infinity();
    else v = std::ldexp(frac + 1024, exp - 25);
    return sign ? -v : v;
}

double decode(const unsigned char* p, DType d) {
    switch (d) {
        case DType::F64: {
            double v;
            std::memcpy(&v, p, 8);
            return v;
        }
        case DType::F32: {
            float v;
            std::memcpy(&v, p, 4);
            return v;
        }
        case DType::F16: {
            std::uint16_t h;
            std::memcpy(&h, p, 2);
            return half_to_double(h);
        }
        case DType::BF16: {
            std::uint16_t h;
            std::memcpy(&h, p, 2);
            const std::uint32_t bits = static_cast<std::uint32_t>(h) << 16;
            float v;
            std::memcpy(&v, &bits, 4);
            return v;
        }
    }
    return 0.0;
}

}  // namespace

TensorFile read_safetensors(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open tensor file " + path);
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), 8);
    if (!in || header_len == 0 || header_len > (100u << 20)) throw ParseError(path + ": bad safetensors header length");
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw ParseError(path + ": truncated header");
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": header is not JSON: " + e.what());
    }
    TensorFile out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "__metadata__") {
            for (auto m = it->begin(); m != it->end(); ++m)
                out.metadata[m.key()] = m->is_string() ? m->get<std::string>() : m->dump();
            continue;
        }
        const auto dtype = parse_dtype(it->at("dtype").get<std::string>(), path);
        Tensor t;
        t.shape = it->at("shape").get<std::vector<std::int64_t>>();
        const auto offsets = it->at("data_offsets").get<std::vector<std::uint64_t>>();
        const auto n = static_cast<std::uint64_t>(t.numel());
        if (offsets.size() != 2 || offsets[1] < offsets[0] || offsets[1] > data.size() ||
            offsets[1] - offsets[0] != n * dtype_size(dtype))
            throw ParseError(path + ": inconsistent offsets for tensor " + it.key());
        t.values.resize(n);
        const unsigned char* base = data.data() + offsets[0];
        for (std::uint64_t i = 0; i < n; ++i) t.values[i] = decode(base + i * dtype_size(dtype), dtype);
        out.tensors.emplace(it.key(), std::move(t));
    }
    return out;
}

void write_safetensors(const std::string& path, const TensorFile& file, DType dtype) {
    if (dtype == DType::F16 || dtype == DType::BF16) throw ConfigError("writing half-precision tensors is not supported");
    nlohmann::ordered_json header;
    if (!file.metadata.empty()) {
        nlohmann::ordered_json meta = nlohmann::ordered_json::object();
        for (const auto& [k, v] : file.metadata) meta[k] = v;
        header["__metadata__"] = meta;
    }
    std::uint64_t offset = 0;
    for (const auto& [name, t] : file.tensors) {
        if (static_cast<std::int64_t>(t.values.size()) != t.numel())
            throw ShapeError("tensor " + name + " has " + std::to_string(t.values.size()) + " values for its shape");
        const std::uint64_t bytes = t.values.size() * dtype_size(dtype);
        header[name] = {{"dtype", dtype_name(dtype)}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    std::string h = header.dump();
    while ((h.size() + 8) % 8 != 0) h.push_back(' ');

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError("cannot write tensor file " + path);
    const std::uint64_t len = h.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& [name, t] : file.tensors) {
        if (dtype == DType::F64) {
            out.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * 8));
        } else {
            std::vector<float> f(t.values.begin(), t.values.end());
            out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * 4));
        }
    }
    if (!out) throw IngestError("failed writing tensor file " + path);
}

}  // namespace odsurv::encoder
