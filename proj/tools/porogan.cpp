#include "porogan/cli.hpp"

int main(int argc, char** argv) { return porogan::cli::run(argc, argv); }
