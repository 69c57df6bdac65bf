// SPDX-License-Identifier: Apache-2.0
#include "crossmatch/cli.hpp"

int main(int argc, char** argv) { return crossmatch::cli::dispatch(argc, argv); }
