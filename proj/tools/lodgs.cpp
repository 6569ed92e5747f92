// SPDX-License-Identifier: Apache-2.0
#include "lodgs/cli.hpp"

int main(int argc, char** argv) { return lodgs::cli_main(argc, argv); }
