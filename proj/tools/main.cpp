#include "cli.hpp"

int main(int argc, char** argv) { return piaa::cli::run(argc, argv); }
