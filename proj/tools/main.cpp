// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

int main(int argc, char **argv) { return skald::run_cli(argc, argv); }
