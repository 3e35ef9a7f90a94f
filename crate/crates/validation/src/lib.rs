//! Holds the `acceptance` test target, which checks the simulator end to end
//! against its headline numbers. Run it with `cargo test -p hetsim-validation`.
