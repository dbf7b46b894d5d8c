#include "cli.hpp"

int main(int argc, char ** argv) { return tapsense::cli::main(argc, argv); }
