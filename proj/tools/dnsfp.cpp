#include "dnsfp/cli.hpp"

int main(int argc, char** argv) { return dnsfp::cli::run(argc, argv); }
