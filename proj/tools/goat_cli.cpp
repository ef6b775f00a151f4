#include "goat/cli.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return goat::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
