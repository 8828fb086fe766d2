// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "avfuse/cli/commands.hpp"

int main(int argc, char** argv) { return avfuse::cli::run(argc, argv, std::cout, std::cerr); }
