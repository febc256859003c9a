#include "ctc/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace ctc {
namespace {

constexpr std::array<char, 4> kMagic{'D', 'T', 'E', 'N'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kFloat64 = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    std::array<char, 4> b{};
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    out.write(b.data(), 4);
}

void put_f64(std::ostream& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    std::array<char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
    out.write(b.data(), 8);
}

void read_exact(std::istream& in, char* buf, std::size_t n, const char* what) {
    in.read(buf, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw DataError(std::string("DTEN: truncated input while reading ") + what);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    std::array<unsigned char, 4> b{};
    read_exact(in, reinterpret_cast<char*>(b.data()), 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_dten(std::ostream& out, const DenseTensor& x) {
    out.write(kMagic.data(), 4);
    out.put(static_cast<char>(kVersion));
    out.put(static_cast<char>(kFloat64));
    put_u32(out, static_cast<std::uint32_t>(x.modes()));
    for (Index d : x.dims()) put_u32(out, static_cast<std::uint32_t>(d));
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(x.data()),
                  static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(x.size())));
    } else {
        for (Index i = 0; i < x.size(); ++i) put_f64(out, x[i]);
    }
    if (!out) throw DataError("DTEN: write failed");
}

DenseTensor read_dten(std::istream& in) {
    std::array<char, 4> magic{};
    read_exact(in, magic.data(), 4, "magic");
    if (magic != kMagic) throw DataError("DTEN: bad magic");
    std::array<char, 2> header{};
    read_exact(in, header.data(), 2, "header");
    if (static_cast<std::uint8_t>(header[0]) != kVersion)
        throw DataError("DTEN: unsupported version " + std::to_string(static_cast<int>(header[0])));
    if (static_cast<std::uint8_t>(header[1]) != kFloat64)
        throw DataError("DTEN: unsupported element code " + std::to_string(static_cast<int>(header[1])));
    const std::uint32_t modes = get_u32(in, "mode count");
    if (modes == 0 || modes > kMaxModes) throw DataError("DTEN: invalid mode count " + std::to_string(modes));
    Dims dims(modes);
    for (auto& d : dims) {
        d = static_cast<Index>(get_u32(in, "dims"));
        if (d == 0) throw DataError("DTEN: zero-sized dimension");
    }
    VectorX<double> values(num_entries(dims));
    std::vector<unsigned char> raw(sizeof(double) * static_cast<std::size_t>(values.size()));
    read_exact(in, reinterpret_cast<char*>(raw.data()), raw.size(), "values");
    for (Index i = 0; i < values.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(raw[8 * i + b]) << (8 * b);
        values[i] = std::bit_cast<double>(bits);
    }
    return DenseTensor(std::move(dims), std::move(values));
}

void write_dten(const std::filesystem::path& path, const DenseTensor& x) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    write_dten(out, x);
}

DenseTensor read_dten(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return read_dten(in);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace ctc
