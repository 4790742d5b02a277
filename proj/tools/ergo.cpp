#include "ergodic/cli.hpp"

int main(int argc, char** argv)
{
  return ergodic::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
