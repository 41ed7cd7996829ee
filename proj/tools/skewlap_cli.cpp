#include "skewlap/cli.hpp"

int main(int argc, char** argv) { return skewlap::run_cli(argc, argv); }
