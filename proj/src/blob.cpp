#include "cdt/blob.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

namespace cdt {

namespace {

constexpr char kMagic[4] = {'C', 'D', 'T', '1'};
constexpr std::uint32_t kMaxRank = 8;
constexpr std::size_t kMaxElements = std::size_t{1} << 30;

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 4);
}

void put_f64(std::ostream& os, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    os.write(b, 8);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw io_error("blob: truncated header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw io_error("blob: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

} // namespace

void write_blob(std::ostream& os, const Tensor& t) {
    if (!t.defined()) throw contract_error("write_blob: undefined tensor");
    os.write(kMagic, 4);
    put_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (int e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
    for (std::size_t i = 0; i < t.size(); ++i) put_f64(os, t[i]);
    if (!os) throw io_error("blob: write failed");
}

Tensor read_blob(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4)) throw io_error("blob: missing magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw io_error("blob: bad magic");
    const std::uint32_t rank = get_u32(is);
    if (rank == 0 || rank > kMaxRank) {
        throw io_error("blob: implausible rank " + std::to_string(rank));
    }
    Shape shape(rank);
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint32_t e = get_u32(is);
        if (e == 0 || e > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
            throw io_error("blob: bad extent");
        }
        shape[i] = static_cast<int>(e);
        n *= e;
        if (n > kMaxElements) throw io_error("blob: payload too large");
    }
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = get_f64(is);
    return Tensor::from_data(shape, std::move(data));
}

std::size_t blob_size(const Shape& shape) {
    return 4 + 4 + 4 * shape.size() + 8 * shape_size(shape);
}

} // namespace cdt
