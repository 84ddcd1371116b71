#include <iostream>

#include "seqadv/pipeline.hpp"

int main(int argc, char** argv) {
  return seqadv::run_cli(argc, argv, std::cout, std::cerr);
}
