#pragma once

// Tensor file format: one UTF-8 JSON header line {"shape":[...],"dtype":"f32"}
// terminated by '\n', followed by the payload as little-endian IEEE-754
// 32-bit floats in row-major order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spot/tensor.hpp"

namespace spot {

inline void write_f32_payload(std::ofstream& out, const float* data, int64_t count) {
    for (int64_t i = 0; i < count; ++i) {
        uint32_t bits;
        std::memcpy(&bits, &data[i], 4);
        const unsigned char bytes[4] = {
            static_cast<unsigned char>(bits & 0xFF),
            static_cast<unsigned char>((bits >> 8) & 0xFF),
            static_cast<unsigned char>((bits >> 16) & 0xFF),
            static_cast<unsigned char>((bits >> 24) & 0xFF),
        };
        out.write(reinterpret_cast<const char*>(bytes), 4);
    }
}

inline void write_tensor_file(const std::filesystem::path& path, const Shape& shape,
                              const std::vector<float>& data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw std::invalid_argument("write_tensor_file: shape " + shape_str(shape) +
                                    " does not match " + std::to_string(data.size()) +
                                    " values");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_tensor_file: cannot open " + path.string());
    out << "{\"shape\":[";
    for (size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
    out << "],\"dtype\":\"f32\"}\n";
    write_f32_payload(out, data.data(), static_cast<int64_t>(data.size()));
    if (!out) throw std::runtime_error("write_tensor_file: write failed for " + path.string());
}

struct TensorFile {
    Shape shape;
    std::vector<float> data;
};

inline TensorFile read_tensor_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_tensor_file: cannot open " + path.string());
    std::string header;
    if (!std::getline(in, header))
        throw std::runtime_error("read_tensor_file: missing header in " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception&) {
        throw std::runtime_error("read_tensor_file: corrupt header in " + path.string());
    }
    if (!j.contains("shape") || !j.contains("dtype") || j["dtype"] != "f32")
        throw std::runtime_error("read_tensor_file: bad header in " + path.string());
    TensorFile tf;
    for (const auto& d : j["shape"]) tf.shape.push_back(d.get<int>());
    const int64_t count = shape_numel(tf.shape);
    tf.data.resize(static_cast<size_t>(count));
    std::vector<unsigned char> raw(static_cast<size_t>(count) * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw std::runtime_error("read_tensor_file: truncated payload in " + path.string());
    for (int64_t i = 0; i < count; ++i) {
        const uint32_t bits = static_cast<uint32_t>(raw[i * 4]) |
                              (static_cast<uint32_t>(raw[i * 4 + 1]) << 8) |
                              (static_cast<uint32_t>(raw[i * 4 + 2]) << 16) |
                              (static_cast<uint32_t>(raw[i * 4 + 3]) << 24);
        std::memcpy(&tf.data[static_cast<size_t>(i)], &bits, 4);
    }
    char extra;
    if (in.read(&extra, 1))
        throw std::runtime_error("read_tensor_file: trailing bytes in " + path.string());
    return tf;
}

}  // namespace spot
