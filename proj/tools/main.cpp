#include "pauc/cli.hpp"

int main(int argc, char** argv) { return pauc::cli::run(argc, argv); }
