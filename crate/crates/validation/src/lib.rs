//! Holds the `acceptance` test target, which checks the ten acceptance
//! criteria and prints one PASS/FAIL line for each.
//!
//! It lives in its own package because cargo stops a workspace test run at
//! the first failing test binary, and this package name sorts after the
//! others.
