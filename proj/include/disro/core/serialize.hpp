#pragma once

#include "disro/core/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace disro::io {

struct SerializeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_i64(std::ostream& os, int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

inline uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw SerializeError("unexpected end of stream (u32)");
    return v;
}
inline uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw SerializeError("unexpected end of stream (u64)");
    return v;
}
inline int64_t read_i64(std::istream& is) {
    int64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw SerializeError("unexpected end of stream (i64)");
    return v;
}
inline double read_f64(std::istream& is) {
    double v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw SerializeError("unexpected end of stream (f64)");
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    const uint32_t n = read_u32(is);
    std::string s(n, '\0');
    if (n > 0 && !is.read(s.data(), n)) throw SerializeError("unexpected end of stream (string)");
    return s;
}

inline void write_tensor(std::ostream& os, const Tensor& t) {
    write_u32(os, static_cast<uint32_t>(t.ndim()));
    for (int64_t i = 0; i < t.ndim(); ++i) write_i64(os, t.dim(i));
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
}

inline Tensor read_tensor(std::istream& is) {
    const uint32_t nd = read_u32(is);
    if (nd > 8) throw SerializeError("tensor rank too large");
    Shape shape(nd);
    for (uint32_t i = 0; i < nd; ++i) shape[i] = read_i64(is);
    Tensor t(shape);
    if (t.numel() > 0 &&
        !is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8)))
        throw SerializeError("unexpected end of stream (tensor data)");
    return t;
}

}  // namespace disro::io
