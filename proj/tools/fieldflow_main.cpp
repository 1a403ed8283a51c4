#include "fieldflow/run_config.hpp"

int main(int argc, char** argv) { return fieldflow::run_cli(argc, argv); }
