#include "meshfit/io.hpp"

int main(int argc, char** argv) { return meshfit::cli_main(argc, argv); }
