#include "commands.hpp"

int main(int argc, char** argv) { return tdtd::cli::run(argc, argv); }
