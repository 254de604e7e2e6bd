#include <vector>

#include "psgcd/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return psgcd::run_cli(args);
}
