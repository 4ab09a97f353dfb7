// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
    return embops::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
