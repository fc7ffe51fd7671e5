#include "bdrop/cli_app.hpp"

int main(int argc, char** argv) { return bdrop::cli::run(argc, argv); }
