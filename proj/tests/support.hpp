// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "embops/embedding.hpp"
#include "embops/rng.hpp"

namespace embops::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("embops-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }
    [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Embedding random_embedding(Rng& rng, std::size_t d, SpaceTag tag = SpaceTag::image) {
    return quantize_f32(Embedding(rng.normal_vector(d), tag));
}

inline bool same_bits(const Embedding& a, const Embedding& b) {
    if (a.dim() != b.dim() || a.space() != b.space()) return false;
    return std::memcmp(a.values().data(), b.values().data(), a.dim() * sizeof(double)) == 0;
}

}  // namespace embops::test
