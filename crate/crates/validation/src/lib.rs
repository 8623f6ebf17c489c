//! Holds the `acceptance` test target, which prints one pass/fail line per
//! criterion. Run it alone with `cargo test -p senselearn-validation`.
