#include "eae/cli.hpp"

int main(int argc, char** argv) { return eae::cli::run(argc, argv); }
