#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <spdlog/spdlog.h>

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::err);  // expected warnings from malformed-input tests
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
