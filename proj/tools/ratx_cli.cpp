#include <string>
#include <vector>

#include "ratx/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ratx::run_cli(args);
}
