#include "owd/cli.hpp"

int main(int argc, char** argv)
{
    return owd::cli::run(argc, argv);
}
