//! Holds the `acceptance` test target: one pass/fail line per end-to-end
//! criterion. Run it alone with `cargo test -p seqal-system-tests --test acceptance`.
