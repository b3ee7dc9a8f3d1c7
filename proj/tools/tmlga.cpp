// SPDX-License-Identifier: Apache-2.0

#include "tmlga/cli.hpp"

int main(int argc, char** argv) { return tmlga::run_cli(argc, argv); }
