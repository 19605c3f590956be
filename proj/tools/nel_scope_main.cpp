#include "nelscope/cli.hpp"

int main(int argc, char** argv) { return nelscope::cli::run(argc, argv); }
