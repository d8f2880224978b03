//! Holds the `acceptance` test target; run it with `cargo test -p robust-mobo-e2e`.
