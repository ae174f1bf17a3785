#include "doctest.h"

#include <chrono>
#include <iostream>

#include "dgad/gradient_suite.hpp"

using namespace dgad;

TEST_CASE("gradient suite passes at tol 1e-4, eps 1e-5") {
    const auto start = std::chrono::steady_clock::now();
    auto result = gradient_suite(1e-4, 1e-5);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    for (const auto& r : result.reports) {
        INFO(r.op_name << " max_rel_error=" << r.max_rel_error);
        CHECK(r.passed);
        std::cout << "grad_check " << r.op_name << " max_rel_error=" << r.max_rel_error
                  << (r.retried.empty() ? "" : " (retried)") << "\n";
    }
    CHECK(result.passed);
    CHECK(result.max_rel_error <= 1e-4);
    std::cout << "gradient suite runtime " << secs << " s\n";
    CHECK(secs < 300.0);
}
