#include "tcrf/io/runner.hpp"

int main(int argc, char** argv) { return tcrf::cli::main(argc, argv); }
