#include <vector>

#include "vdg/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return vdg::run_command(std::move(args));
}
