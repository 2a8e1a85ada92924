// Apache License, Version 2.0, refer to LICENSE.txt

#include "rolemine/cli.hpp"

int main(int argc, char** argv) { return rolemine::cli::run(argc, argv); }
