// SPDX-License-Identifier: Apache-2.0
#include "raggym/commands.hpp"

int main(int argc, char** argv) { return raggym::run_cli(argc, argv); }
