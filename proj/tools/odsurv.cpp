#include <iostream>

#include "odsurv/app/cli.hpp"

int main(int argc, char** argv) { return odsurv::app::dispatch(argc, argv, std::cout, std::cerr); }
