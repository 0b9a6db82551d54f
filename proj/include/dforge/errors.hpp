#pragma once

#include <stdexcept>
#include <string>

namespace dforge {

// Thrown when two redundant computation paths that must agree (closed form vs
// direct sum, spectral vs counting) disagree beyond their pinned tolerance.
// This always indicates a bug, never bad user input.
class InternalConsistencyError : public std::logic_error {
public:
    explicit InternalConsistencyError(const std::string& what)
        : std::logic_error(what) {}
};

// Thrown before starting a computation whose term count would exceed the
// configured budget (DFORGE_COST_GUARD, default 2^22).
class CostGuardError : public std::runtime_error {
public:
    explicit CostGuardError(const std::string& what)
        : std::runtime_error(what) {}
};

// Reads DFORGE_COST_GUARD once per process; returns the maximum number of
// terms an exhaustive summation is allowed to touch.
unsigned long long cost_guard();

}
