#include <string>
#include <vector>

#include "gcpc/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return gcpc::run_cli(args);
}
