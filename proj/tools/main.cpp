#include "qac/cli.hpp"

int main(int argc, char** argv) { return qac::cli::main_entry(argc, argv); }
