#pragma once

#include <filesystem>

#include "cdt/tensor.hpp"

namespace cdt {

// ASCII "P2" PGM with maxval 255. Images map [-1, 1] onto [0, 255] by affine
// rounding; masks use {0, 255} and binarize at 128 on the way back in.

void write_pgm(const std::filesystem::path& path, const Tensor& img); // 1xHxW or HxW
Tensor read_pgm(const std::filesystem::path& path);                   // 1xHxW in [-1, 1]

void write_mask_pgm(const std::filesystem::path& path, const Tensor& mask); // {0,1}
Tensor read_mask_pgm(const std::filesystem::path& path);                    // HxW in {0,1}

} // namespace cdt
