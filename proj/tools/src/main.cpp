#include <iostream>
#include <string>
#include <vector>

#include "scd2te/commands.hpp"

int main(int argc, char** argv) {
  return scd2te::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
