#pragma once

#include <iosfwd>

#include "cdt/tensor.hpp"

namespace cdt {

// "CDT1" tensor blob: 4-byte magic, u32 little-endian rank, rank u32 LE
// extents, then the row-major payload as 64-bit LE IEEE doubles. The same
// bytes decode on any platform regardless of host endianness.

void write_blob(std::ostream& os, const Tensor& t);
Tensor read_blob(std::istream& is);

// Encoded size in bytes (header + payload) for a tensor of this shape.
std::size_t blob_size(const Shape& shape);

} // namespace cdt
