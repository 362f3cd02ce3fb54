#include "sar2rgb/cli.hpp"

int main(int argc, char** argv) { return sar2rgb::cli::main(argc, argv); }
