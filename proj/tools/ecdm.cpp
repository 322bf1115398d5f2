#include "ecdm/cli.hpp"

int main(int argc, char** argv) { return ecdm::cli::run(argc, argv); }
