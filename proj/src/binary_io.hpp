#pragma once

// Little-endian scalar IO shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "dcpl/errors.hpp"

namespace dcpl::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* field) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw FormatError(std::string("truncated while reading ") + field);
    return v;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
    char buf[4] = {};
    if (!is.read(buf, 4)) throw FormatError("missing magic (expected \"" + std::string(magic) + "\")");
    if (std::memcmp(buf, magic, 4) != 0) throw FormatError("bad magic (expected \"" + std::string(magic) + "\")");
}

}  // namespace dcpl::io
