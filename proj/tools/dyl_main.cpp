#include <string>
#include <vector>

#include "dyl/cli.hpp"

int main(int argc, char** argv) { return dyl::run_cli(std::vector<std::string>(argv, argv + argc)); }
