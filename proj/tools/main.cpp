#include "langgrasp/cli/cli.hpp"

int main(int argc, char** argv) { return langgrasp::cli::run(argc, argv); }
