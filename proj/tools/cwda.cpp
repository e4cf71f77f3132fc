#include "cwda/cli.hpp"

int main(int argc, char** argv) { return cwda::cli::run({argv + 1, argv + argc}); }
