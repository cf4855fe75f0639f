#pragma once

#include <string>
#include <vector>

namespace langgrasp::cli {

// Exit codes: 0 ok, 1 ablation verdict failed, 2 bad input or contract
// violation, 3 missing or malformed artifact, 4 numeric fault, 5 other error;
// usage errors return the parser's code (nonzero).
int run(int argc, char** argv);
int run(const std::vector<std::string>& args);

// Output root: $LANGGRASP_OUTPUT_ROOT, else "runs".
std::string output_root();

}  // namespace langgrasp::cli
